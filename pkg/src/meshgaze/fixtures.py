"""Deterministic mesh fixtures: icosphere, torus, cube.

Vertex order is a pure function of the arguments, so repeated calls (and
files written from them) are byte-identical.
"""

from __future__ import annotations

import numpy as np

from .mesh import Mesh


def cube() -> Mesh:
    """Axis-aligned unit cube, 8 vertices, 12 triangles.

    Fan triangulation leaves vertices 5 and 6 with valence 3, which the
    neighbor-fallback logic needs as a worst case.
    """
    bits = [(x, y, z) for z in (0, 1) for y in (0, 1) for x in (0, 1)]
    verts = np.array(bits, dtype=np.float64)
    # Quads listed starting at the fan apex; diagonals chosen so no diagonal
    # touches vertex 5.
    quads = [
        (0, 2, 3, 1),  # -z
        (4, 5, 7, 6),  # +z
        (1, 5, 4, 0),  # -y
        (2, 6, 7, 3),  # +y
        (0, 4, 6, 2),  # -x
        (1, 3, 7, 5),  # +x
    ]
    faces = []
    for a, b, c, d in quads:
        faces += [[a, b, c], [a, c, d]]
    return Mesh.from_arrays(verts, faces)


def icosphere(subdiv: int = 2, radius: float = 1.0) -> Mesh:
    """Icosahedron subdivided `subdiv` times, projected to a sphere.

    Vertex count is 10 * 4**subdiv + 2.
    """
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, dtype=np.float64) for v in verts]

    for _ in range(subdiv):
        cache: dict = {}
        new_faces = []

        def midpoint(i, j):
            key = (i, j) if i < j else (j, i)
            if key not in cache:
                cache[key] = len(verts)
                mid = (verts[i] + verts[j]) / 2.0
                # Project to the sphere at creation so triangles stay round.
                verts.append(mid / np.linalg.norm(mid) * np.linalg.norm(verts[0]))
            return cache[key]

        for a, b, c in faces:
            ab = midpoint(a, b)
            bc = midpoint(b, c)
            ca = midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces

    pts = np.array(verts)
    pts = radius * pts / np.linalg.norm(pts, axis=1, keepdims=True)
    return Mesh.from_arrays(pts, np.array(faces, dtype=np.int64))


def torus(big_radius: float = 1.0, small_radius: float = 0.4,
          nu: int = 24, nv: int = 16) -> Mesh:
    """Torus around the z axis: nu segments around the hole, nv around the tube."""
    if nu < 3 or nv < 3:
        raise ValueError("torus needs at least 3 segments in each direction")
    theta = 2.0 * np.pi * np.arange(nu) / nu
    phi = 2.0 * np.pi * np.arange(nv) / nv
    verts = np.empty((nu * nv, 3))
    for i in range(nu):
        ring = big_radius + small_radius * np.cos(phi)
        verts[i * nv : (i + 1) * nv, 0] = ring * np.cos(theta[i])
        verts[i * nv : (i + 1) * nv, 1] = ring * np.sin(theta[i])
        verts[i * nv : (i + 1) * nv, 2] = small_radius * np.sin(phi)
    faces = []
    for i in range(nu):
        for j in range(nv):
            a = i * nv + j
            b = ((i + 1) % nu) * nv + j
            c = ((i + 1) % nu) * nv + (j + 1) % nv
            d = i * nv + (j + 1) % nv
            faces += [[a, b, c], [a, c, d]]
    return Mesh.from_arrays(verts, np.array(faces, dtype=np.int64))


FIXTURES = {"icosphere": icosphere, "torus": torus, "cube": cube}
