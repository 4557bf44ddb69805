"""Triangle mesh container: loading, normals, adjacency, sampling.

All other modules consume meshes through this one. Meshes are immutable
after construction and safe to share across threads.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMesh, InvalidCount, IsolatedVertex, ParseError

# Fallback normal for vertices whose accumulated face normal is ~zero
# (isolated vertices, or exactly cancelling incident faces).
_DEFAULT_NORMAL = np.array([0.0, 0.0, 1.0])


@dataclass
class Mesh:
    """Triangulated surface with per-vertex normals and 1-ring adjacency.

    vertices : (N, 3) float64, model units
    faces    : (F, 3) int64 vertex indices, three distinct per face
    normals  : (N, 3) float64 unit vectors (area-weighted face accumulation)
    adjacency: list of N sorted int arrays, symmetric 1-ring neighbors
    nonmanifold_edges : count of edges shared by more than two faces
    """

    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray = field(repr=False, default=None)
    adjacency: list = field(repr=False, default=None)
    nonmanifold_edges: int = 0

    @classmethod
    def from_arrays(cls, vertices, faces) -> "Mesh":
        """Build a mesh from raw arrays, computing normals and adjacency."""
        vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if len(vertices) < 3 or len(faces) == 0:
            raise DegenerateMesh(
                f"need >= 3 vertices and >= 1 face, got {len(vertices)} vertices, "
                f"{len(faces)} faces"
            )
        if faces.min() < 0 or faces.max() >= len(vertices):
            raise ParseError("face index out of range")
        if (
            (faces[:, 0] == faces[:, 1])
            | (faces[:, 1] == faces[:, 2])
            | (faces[:, 0] == faces[:, 2])
        ).any():
            raise ParseError("degenerate face with repeated vertex index")
        mesh = cls(vertices=vertices, faces=faces)
        mesh.normals = _vertex_normals(vertices, faces)
        mesh.adjacency, mesh.nonmanifold_edges = _adjacency(vertices, faces)
        return mesh

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def centroid(self) -> np.ndarray:
        """Vertex-mean centroid (the look-at point for rendering)."""
        return self.vertices.mean(axis=0)

    @property
    def bbox(self) -> tuple:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def bbox_diagonal(self) -> float:
        lo, hi = self.bbox
        return float(np.linalg.norm(hi - lo))


@dataclass
class SampleSet:
    """Uniform without-replacement vertex sample of size m."""

    indices: np.ndarray   # (m,) distinct vertex indices
    positions: np.ndarray  # (m, 3), rows of mesh.vertices
    normals: np.ndarray    # (m, 3)
    seed: int


def _vertex_normals(vertices, faces):
    """Area-weighted face-normal accumulation, then normalization."""
    p0 = vertices[faces[:, 0]]
    p1 = vertices[faces[:, 1]]
    p2 = vertices[faces[:, 2]]
    # Cross product magnitude is twice the face area, so accumulating the
    # raw cross products is exactly area weighting.
    fn = np.cross(p1 - p0, p2 - p0)
    acc = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(acc, faces[:, k], fn)
    norms = np.linalg.norm(acc, axis=1)
    out = np.where(norms[:, None] > 1e-20, acc / np.maximum(norms, 1e-300)[:, None],
                   _DEFAULT_NORMAL)
    return out


def _adjacency(vertices, faces):
    """Symmetric 1-ring adjacency from face edges; counts non-manifold edges."""
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    lo = edges.min(axis=1)
    hi = edges.max(axis=1)
    keys = lo.astype(np.int64) * len(vertices) + hi
    uniq, counts = np.unique(keys, return_counts=True)
    nonmanifold = int((counts > 2).sum())
    ulo = (uniq // len(vertices)).astype(np.int64)
    uhi = (uniq % len(vertices)).astype(np.int64)
    neighbor_sets = [[] for _ in range(len(vertices))]
    for a, b in zip(ulo, uhi):
        neighbor_sets[a].append(b)
        neighbor_sets[b].append(a)
    return [np.array(sorted(s), dtype=np.int64) for s in neighbor_sets], nonmanifold


def uniform_sample(mesh: Mesh, m: int, seed: int) -> SampleSet:
    """Draw m distinct vertex indices uniformly without replacement."""
    n = mesh.n_vertices
    if m < 1 or m > n:
        raise InvalidCount(f"m={m} outside [1, {n}]")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=m, replace=False))
    # Sorted order keeps downstream math independent of rng draw order
    # while remaining a uniform sample of index sets.
    return SampleSet(
        indices=idx,
        positions=mesh.vertices[idx].copy(),
        normals=mesh.normals[idx].copy(),
        seed=seed,
    )


def surface_neighbors(mesh: Mesh, v: int, k: int = 6) -> np.ndarray:
    """The k nearest vertices to v on the mesh surface.

    Candidates are the 2-ring graph neighborhood of v ranked by Euclidean
    distance (ties to the smaller index). If the 2-ring is too small the
    list is padded with global Euclidean nearest neighbors, so the result
    always has k distinct entries on any mesh with more than k vertices.
    """
    ring1 = mesh.adjacency[v]
    candidates = set(ring1.tolist())
    for u in ring1:
        candidates.update(mesh.adjacency[u].tolist())
    candidates.discard(v)
    if not candidates and mesh.n_vertices <= 1:
        raise IsolatedVertex(f"vertex {v} has no neighbors of any kind")

    cand = np.fromiter(candidates, dtype=np.int64) if candidates else np.empty(0, np.int64)
    chosen = _rank_by_distance(mesh.vertices, mesh.vertices[v], cand)[:k]

    if len(chosen) < k:
        rest = np.setdiff1d(np.arange(mesh.n_vertices), np.append(chosen, v))
        if len(rest) == 0 and len(chosen) == 0:
            raise IsolatedVertex(f"vertex {v}: no fallback candidates")
        fallback = _rank_by_distance(mesh.vertices, mesh.vertices[v], rest)
        chosen = np.concatenate([chosen, fallback[: k - len(chosen)]])
    return chosen[:k]


def _rank_by_distance(vertices, point, idx):
    if len(idx) == 0:
        return idx
    d = np.linalg.norm(vertices[idx] - point, axis=1)
    order = np.lexsort((idx, d))
    return idx[order]


# ---------------------------------------------------------------------------
# File formats: OFF, OBJ (v/f records only), ASCII PLY.
# ---------------------------------------------------------------------------

def load_mesh(path, fmt: str | None = None) -> Mesh:
    """Load a mesh file. Format from extension unless given explicitly."""
    fmt = (fmt or os.path.splitext(str(path))[1].lstrip(".")).lower()
    try:
        text = open(path, "r").read()
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e}") from e
    if fmt == "off":
        v, f = _parse_off(text)
    elif fmt == "obj":
        v, f = _parse_obj(text)
    elif fmt == "ply":
        v, f = _parse_ply(text)
    else:
        raise ParseError(f"unknown mesh format {fmt!r}")
    return Mesh.from_arrays(v, f)


def save_mesh(mesh: Mesh, path, fmt: str | None = None) -> None:
    """Write OFF/OBJ/PLY text. Coordinates use shortest round-trip floats,
    so save -> load reproduces them bit-exactly."""
    fmt = (fmt or os.path.splitext(str(path))[1].lstrip(".")).lower()
    v = [(repr(float(x)), repr(float(y)), repr(float(z))) for x, y, z in mesh.vertices]
    f = mesh.faces
    lines = []
    if fmt == "off":
        lines.append("OFF")
        lines.append(f"{len(v)} {len(f)} 0")
        lines += [f"{x} {y} {z}" for x, y, z in v]
        lines += [f"3 {a} {b} {c}" for a, b, c in f]
    elif fmt == "obj":
        lines += [f"v {x} {y} {z}" for x, y, z in v]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in f]
    elif fmt == "ply":
        lines += [
            "ply",
            "format ascii 1.0",
            f"element vertex {len(v)}",
            "property float64 x",
            "property float64 y",
            "property float64 z",
            f"element face {len(f)}",
            "property list uchar int vertex_indices",
            "end_header",
        ]
        lines += [f"{x} {y} {z}" for x, y, z in v]
        lines += [f"3 {a} {b} {c}" for a, b, c in f]
    else:
        raise ParseError(f"unknown mesh format {fmt!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _tokens(text):
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield line


def _parse_off(text):
    lines = list(_tokens(text))
    if not lines:
        raise ParseError("empty OFF file")
    head = 0
    if lines[0].upper().startswith("OFF"):
        rest = lines[0][3:].strip()
        head = 1
        counts = rest.split() if rest else None
    else:
        counts = None
    if counts is None:
        if head >= len(lines):
            raise ParseError("OFF: missing count line")
        counts = lines[head].split()
        head += 1
    try:
        nv, nf = int(counts[0]), int(counts[1])
    except (ValueError, IndexError) as e:
        raise ParseError(f"OFF: bad count line {counts!r}") from e
    body = lines[head:]
    if len(body) < nv + nf:
        raise ParseError("OFF: truncated file")
    try:
        verts = [[float(t) for t in body[i].split()[:3]] for i in range(nv)]
        faces = []
        for i in range(nv, nv + nf):
            parts = body[i].split()
            cnt = int(parts[0])
            poly = [int(t) for t in parts[1 : 1 + cnt]]
            faces.extend(_fan(poly))
    except (ValueError, IndexError) as e:
        raise ParseError(f"OFF: malformed record: {e}") from e
    return verts, faces


def _parse_obj(text):
    verts, faces = [], []
    try:
        for line in _tokens(text):
            parts = line.split()
            if parts[0] == "v":
                verts.append([float(t) for t in parts[1:4]])
            elif parts[0] == "f":
                poly = [int(t.split("/")[0]) - 1 for t in parts[1:]]
                faces.extend(_fan(poly))
    except (ValueError, IndexError) as e:
        raise ParseError(f"OBJ: malformed record: {e}") from e
    return verts, faces


def _parse_ply(text):
    lines = list(_tokens(text))
    if not lines or lines[0] != "ply":
        raise ParseError("PLY: missing magic")
    nv = nf = None
    i = 1
    while i < len(lines) and lines[i] != "end_header":
        parts = lines[i].split()
        if parts[0] == "format" and parts[1] != "ascii":
            raise ParseError("PLY: only ascii format supported")
        if parts[0] == "element" and parts[1] == "vertex":
            nv = int(parts[2])
        if parts[0] == "element" and parts[1] == "face":
            nf = int(parts[2])
        i += 1
    if i == len(lines) or nv is None or nf is None:
        raise ParseError("PLY: bad header")
    body = lines[i + 1 :]
    if len(body) < nv + nf:
        raise ParseError("PLY: truncated file")
    try:
        verts = [[float(t) for t in body[j].split()[:3]] for j in range(nv)]
        faces = []
        for j in range(nv, nv + nf):
            parts = body[j].split()
            cnt = int(parts[0])
            faces.extend(_fan([int(t) for t in parts[1 : 1 + cnt]]))
    except (ValueError, IndexError) as e:
        raise ParseError(f"PLY: malformed record: {e}") from e
    return verts, faces


def _fan(poly):
    """Triangulate a polygon record as a fan around its first vertex."""
    if len(poly) < 3:
        raise ValueError(f"face with {len(poly)} vertices")
    return [[poly[0], poly[i], poly[i + 1]] for i in range(1, len(poly) - 1)]
