"""Mesh loading, normals, adjacency, sampling, and spatial queries."""

import numpy as np
import pytest

from meshgaze import fixtures
from meshgaze.errors import DegenerateMesh, InvalidCount, ParseError
from meshgaze.mesh import Mesh, load_mesh, save_mesh, surface_neighbors, uniform_sample
from meshgaze.spatial import SpatialIndex


def brute_knn(points, query, k):
    d = np.linalg.norm(points - query, axis=1)
    order = np.lexsort((np.arange(len(points)), d))
    return order[: min(k, len(points))]


def brute_ball(points, center, radius):
    d = np.linalg.norm(points - center, axis=1)
    return set(np.nonzero(d <= radius)[0].tolist())


class TestLoading:
    def test_unit_cube_off(self, cube_mesh, tmp_path):
        path = tmp_path / "cube.off"
        save_mesh(cube_mesh, path)
        m = load_mesh(path)
        assert m.n_vertices == 8
        assert m.n_faces == 12
        assert m.bbox_diagonal == pytest.approx(np.sqrt(3.0), abs=1e-12)

    def test_single_triangle_normals(self):
        m = Mesh.from_arrays([(0, 0, 0), (1, 0, 0), (0, 1, 0)], [(0, 1, 2)])
        np.testing.assert_allclose(m.normals, [[0, 0, 1]] * 3, atol=1e-15)

    def test_icosphere_normals_near_radial(self, ico2):
        # Unit icosphere: the analytic normal is the radial direction.
        # Area-weighted accumulation lands at ~2.4e-2 rad worst case on the
        # subdivision-2 fixture (angle weighting would not reach 1e-2 either).
        radial = ico2.vertices / np.linalg.norm(ico2.vertices, axis=1, keepdims=True)
        cosang = np.clip((ico2.normals * radial).sum(axis=1), -1, 1)
        assert np.arccos(cosang).max() < 2.5e-2

    def test_normals_unit(self, torus_mesh):
        norms = np.linalg.norm(torus_mesh.normals, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-6)

    def test_adjacency_symmetric(self, ico2):
        for i, neigh in enumerate(ico2.adjacency):
            for j in neigh:
                assert i in ico2.adjacency[j]

    @pytest.mark.parametrize("fmt", ["off", "obj", "ply"])
    def test_roundtrip_bit_exact(self, ico2, tmp_path, fmt):
        p1 = tmp_path / f"a.{fmt}"
        p2 = tmp_path / f"b.{fmt}"
        save_mesh(ico2, p1)
        m1 = load_mesh(p1)
        save_mesh(m1, p2)
        m2 = load_mesh(p2)
        assert (m1.vertices == m2.vertices).all()
        assert (m1.vertices == ico2.vertices).all()  # repr() floats round-trip
        assert (m1.faces == m2.faces).all()
        assert p1.read_bytes() == p2.read_bytes()

    def test_parse_errors(self, tmp_path):
        bad = tmp_path / "bad.off"
        bad.write_text("OFF\n2 1 0\n0 0 0\n1 1 1\n")
        with pytest.raises(ParseError):
            load_mesh(bad)
        with pytest.raises(DegenerateMesh):
            Mesh.from_arrays(np.zeros((3, 3)), np.zeros((0, 3), dtype=int))

    def test_obj_and_ply_parse(self, tmp_path):
        obj = tmp_path / "t.obj"
        obj.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        m = load_mesh(obj)
        assert m.n_vertices == 3 and m.n_faces == 1
        ply = tmp_path / "t.ply"
        ply.write_text(
            "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\n"
            "property float y\nproperty float z\nelement face 1\n"
            "property list uchar int vertex_indices\nend_header\n"
            "0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n"
        )
        m = load_mesh(ply)
        assert m.n_vertices == 3 and m.n_faces == 1


class TestFixtures:
    def test_icosphere_vertex_count(self):
        for s in (0, 1, 2):
            assert fixtures.icosphere(s).n_vertices == 10 * 4**s + 2

    def test_icosphere_on_sphere(self, ico2):
        np.testing.assert_allclose(np.linalg.norm(ico2.vertices, axis=1), 1.0,
                                   atol=1e-12)

    def test_torus_counts(self, torus_mesh):
        assert torus_mesh.n_vertices == 24 * 16
        assert torus_mesh.n_faces == 2 * 24 * 16

    def test_cube_has_valence3_corner(self, cube_mesh):
        valences = [len(a) for a in cube_mesh.adjacency]
        assert 3 in valences

    def test_deterministic(self):
        a = fixtures.icosphere(1)
        b = fixtures.icosphere(1)
        assert (a.vertices == b.vertices).all()
        assert (a.faces == b.faces).all()


class TestUniformSample:
    def test_exhaustive_is_permutation(self, ico2):
        s = uniform_sample(ico2, ico2.n_vertices, seed=0)
        assert sorted(s.indices.tolist()) == list(range(ico2.n_vertices))

    def test_deterministic(self, ico2):
        a = uniform_sample(ico2, 1, seed=7)
        b = uniform_sample(ico2, 1, seed=7)
        assert a.indices[0] == b.indices[0]

    def test_positions_match_vertices(self, ico2):
        s = uniform_sample(ico2, 50, seed=3)
        assert (s.positions == ico2.vertices[s.indices]).all()
        assert len(set(s.indices.tolist())) == 50

    def test_invalid_counts(self, ico2):
        with pytest.raises(InvalidCount):
            uniform_sample(ico2, 0, seed=0)
        with pytest.raises(InvalidCount):
            uniform_sample(ico2, ico2.n_vertices + 1, seed=0)

    def test_inclusion_frequency_hypergeometric(self):
        # 100 seeds of m-of-N sampling: under the hypergeometric model at
        # most ~0.27% of vertices should fall outside 3 sigma of m/N; allow
        # 1% and require the extreme deviation to stay under a Bonferroni
        # bound for 10k vertices.
        n, m, trials = 10_000, 2_048, 100
        mesh = _random_point_mesh(n)
        counts = np.zeros(n)
        for seed in range(trials):
            counts[uniform_sample(mesh, m, seed=seed).indices] += 1
        p = m / n
        sigma = np.sqrt(trials * p * (1 - p))
        dev = np.abs(counts - trials * p)
        assert (dev > 3 * sigma).mean() < 0.01
        assert dev.max() <= 5.5 * sigma
        assert counts.sum() == trials * m


def _random_point_mesh(n):
    rng = np.random.default_rng(0)
    verts = rng.normal(size=(n, 3))
    faces = np.array([[i, (i + 1) % n, (i + 2) % n] for i in range(0, n - 2, 3)])
    return Mesh.from_arrays(verts, faces)


class TestSpatialIndex:
    def test_identity_query(self, ico2):
        idx = SpatialIndex(ico2.vertices)
        i, d = idx.knn(ico2.vertices[17], k=1)
        assert i[0] == 17
        assert d[0] == 0.0

    def test_collinear_example(self):
        pts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], dtype=float)
        idx = SpatialIndex(pts)
        i, _ = idx.knn([1.4, 0, 0], k=2)
        assert set(i.tolist()) == {1, 2}

    def test_clamps_k(self):
        pts = np.eye(3)
        idx = SpatialIndex(pts)
        i, d = idx.knn([0, 0, 0], k=10)
        assert len(i) == 3
        assert (np.diff(d) >= 0).all()

    def test_knn_matches_bruteforce(self, ico2, rng):
        idx = SpatialIndex(ico2.vertices)
        for _ in range(50):
            q = rng.normal(size=3)
            k = int(rng.integers(1, 12))
            got, _ = idx.knn(q, k)
            want = brute_knn(ico2.vertices, q, k)
            assert set(got.tolist()) == set(want.tolist())

    def test_ball_query_grid(self):
        # Unit grid: radius 1.001 around a node catches it plus 6 axis neighbors.
        coords = np.array([(x, y, z) for x in range(5) for y in range(5)
                           for z in range(5)], dtype=float)
        idx = SpatialIndex(coords)
        center = np.array([2.0, 2.0, 2.0])
        got = idx.ball_query(center, radius=1.001, cap=100)
        want = brute_ball(coords, center, 1.001)
        assert set(got.tolist()) == want
        assert len(want) == 7

    def test_ball_query_cap(self, rng):
        pts = rng.normal(size=(200, 3)) * 0.01
        idx = SpatialIndex(pts)
        got = idx.ball_query([0, 0, 0], radius=1.0, cap=3)
        assert len(got) == 3
        want = brute_knn(pts, np.zeros(3), 3)
        assert set(got.tolist()) == set(want.tolist())

    def test_ball_matches_bruteforce(self, torus_mesh, rng):
        idx = SpatialIndex(torus_mesh.vertices)
        for _ in range(50):
            q = rng.normal(size=3)
            r = float(rng.uniform(0.05, 1.0))
            got = set(idx.ball_query(q, r, cap=10_000).tolist())
            assert got == brute_ball(torus_mesh.vertices, q, r)


class TestSurfaceNeighbors:
    def brute_2ring(self, mesh, v):
        ring = set(mesh.adjacency[v].tolist())
        for u in list(ring):
            ring.update(mesh.adjacency[u].tolist())
        ring.discard(v)
        return ring

    def test_interior_vertex_matches_bruteforce(self, ico2):
        for v in (0, 30, 100):
            cand = np.array(sorted(self.brute_2ring(ico2, v)))
            d = np.linalg.norm(ico2.vertices[cand] - ico2.vertices[v], axis=1)
            want = cand[np.lexsort((cand, d))][:6]
            got = surface_neighbors(ico2, v, 6)
            assert got.tolist() == want.tolist()

    def test_cube_corner_fallback(self, cube_mesh):
        v = next(i for i, a in enumerate(cube_mesh.adjacency) if len(a) == 3)
        got = surface_neighbors(cube_mesh, v, 6)
        assert len(got) == 6
        assert len(set(got.tolist())) == 6
        assert v not in got

    def test_never_contains_self(self, torus_mesh):
        for v in range(0, torus_mesh.n_vertices, 37):
            got = surface_neighbors(torus_mesh, v, 6)
            assert v not in got
            assert len(set(got.tolist())) == 6
