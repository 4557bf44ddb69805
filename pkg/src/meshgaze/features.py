"""Pixel-feature weighting, fusion, and view-to-vertex transfer.

Per-view pixel features are blended over denoising steps (last 75%,
linearly weighted 0.1 to 1.0), concatenated with a second descriptor
stream, unit-normalized, and gathered onto mesh vertices by a world-space
ball query around each visible vertex. Views are averaged per vertex;
vertices no view reached are filled from the nearest covered vertex.

Binary interchange ``.featb``: magic "SGFT", u32 version=1, u64 N, u32 D,
N*D little-endian f32 row-major, then N u16 coverage counts.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import NoCoverage, ParseError, ShapeMismatch
from .mesh import Mesh
from .render import Projection, back_project
from .spatial import SpatialIndex

FEATB_MAGIC = b"SGFT"


@dataclass
class PixelFeatureMap:
    """H x W x dim features with a per-pixel depth channel (+inf background)."""

    data: np.ndarray   # (H, W, dim)
    depth: np.ndarray  # (H, W)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.data.ndim != 3 or self.depth.shape != self.data.shape[:2]:
            raise ShapeMismatch("feature map and depth shapes disagree")

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple:
        return self.data.shape[:2]

    def foreground(self) -> np.ndarray:
        return np.isfinite(self.depth)


@dataclass
class FeatureField:
    """Per-vertex descriptors with view-coverage counts."""

    data: np.ndarray      # (N, dim)
    coverage: np.ndarray  # (N,) int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.coverage = np.asarray(self.coverage, dtype=np.int64).reshape(-1)
        if self.data.ndim != 2 or len(self.data) != len(self.coverage):
            raise ShapeMismatch("feature rows and coverage length disagree")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def l2_normalize_pixels(data: np.ndarray) -> np.ndarray:
    """Unit-normalize each pixel's feature vector; zero vectors stay zero."""
    norms = np.linalg.norm(data, axis=-1, keepdims=True)
    return np.where(norms > 0, data / np.where(norms > 0, norms, 1.0), 0.0)


def timestep_weights(n_steps: int, keep_frac: float = 0.75,
                     w_lo: float = 0.1, w_hi: float = 1.0):
    """(selected-count, weights) for blending a T-step denoising sequence.

    The last ceil(keep_frac*T) steps (least noisy) are kept; weights rise
    linearly from w_lo at the earliest kept step to w_hi at the final one.
    A single kept step is the final step and gets w_hi.
    """
    n_sel = int(np.ceil(keep_frac * n_steps))
    n_sel = max(1, min(n_steps, n_sel))
    if n_sel == 1:
        return n_sel, np.array([w_hi])
    return n_sel, np.linspace(w_lo, w_hi, n_sel)


def weight_timesteps(per_step: list, n_steps: int | None = None) -> PixelFeatureMap:
    """Blend per-step feature maps (ordered noisiest first) into one map.

    Output pixels are L2-normalized.
    """
    if n_steps is None:
        n_steps = len(per_step)
    if n_steps != len(per_step) or n_steps == 0:
        raise ShapeMismatch(f"expected {n_steps} maps, got {len(per_step)}")
    shape = per_step[0].data.shape
    for m in per_step:
        if m.data.shape != shape:
            raise ShapeMismatch("per-step maps disagree in shape")
    n_sel, w = timestep_weights(n_steps)
    acc = np.zeros(shape)
    for weight, m in zip(w, per_step[-n_sel:]):
        acc += weight * m.data
    return PixelFeatureMap(data=l2_normalize_pixels(acc), depth=per_step[0].depth)


def fuse_pixel_features(diff: PixelFeatureMap, dino: PixelFeatureMap,
                        alpha: float = 0.5) -> PixelFeatureMap:
    """Per pixel concatenate [alpha*diff ; (1-alpha)*dino], then renormalize."""
    if diff.shape != dino.shape:
        raise ShapeMismatch(f"map shapes {diff.shape} vs {dino.shape}")
    fused = np.concatenate([alpha * diff.data, (1.0 - alpha) * dino.data], axis=-1)
    return PixelFeatureMap(data=l2_normalize_pixels(fused), depth=diff.depth)


def upsample_bilinear(m: PixelFeatureMap, size: tuple) -> PixelFeatureMap:
    """Resample a lower-resolution feature grid to the render resolution.

    Pixel centers are mapped proportionally; depth is resampled with
    nearest-neighbor so background stays background.
    """
    h0, w0 = m.shape
    h1, w1 = size
    ry = (np.arange(h1) + 0.5) * h0 / h1 - 0.5
    rx = (np.arange(w1) + 0.5) * w0 / w1 - 0.5
    y0 = np.clip(np.floor(ry).astype(int), 0, h0 - 1)
    x0 = np.clip(np.floor(rx).astype(int), 0, w0 - 1)
    y1 = np.clip(y0 + 1, 0, h0 - 1)
    x1 = np.clip(x0 + 1, 0, w0 - 1)
    fy = np.clip(ry - y0, 0.0, 1.0)[:, None, None]
    fx = np.clip(rx - x0, 0.0, 1.0)[None, :, None]
    d = m.data
    out = (
        d[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
        + d[np.ix_(y0, x1)] * (1 - fy) * fx
        + d[np.ix_(y1, x0)] * fy * (1 - fx)
        + d[np.ix_(y1, x1)] * fy * fx
    )
    ny = np.clip(np.round(ry).astype(int), 0, h0 - 1)
    nx = np.clip(np.round(rx).astype(int), 0, w0 - 1)
    depth = m.depth[np.ix_(ny, nx)]
    return PixelFeatureMap(data=out, depth=depth)


def unproject_view(fused: PixelFeatureMap, projection: Projection, mesh: Mesh,
                   k: int = 100, radius_frac: float = 0.01) -> FeatureField:
    """Transfer one view's pixel features onto the mesh's visible vertices.

    Each visible vertex averages the features of up to k foreground pixels
    whose back-projected surface points lie within radius_frac of the bbox
    diagonal; coverage is 1 where anything was gathered, else 0.
    """
    h, w = projection.pose.image_size
    if fused.shape != (h, w):
        raise ShapeMismatch(f"feature map {fused.shape} vs image {(h, w)}")
    n = mesh.n_vertices
    dim = fused.dim
    out = np.zeros((n, dim))
    coverage = np.zeros(n, dtype=np.int64)

    pts, fg = back_project(projection.pose, projection.zbuf)
    fg_idx = np.nonzero(fg.reshape(-1))[0]
    if len(fg_idx) == 0:
        return FeatureField(out, coverage)
    fg_pts = pts.reshape(-1, 3)[fg_idx]
    fg_feat = fused.data.reshape(-1, dim)[fg_idx]
    tree = SpatialIndex(fg_pts)
    radius = radius_frac * mesh.bbox_diagonal

    for v in np.nonzero(projection.visible)[0]:
        got = tree.ball_query(mesh.vertices[v], radius, cap=k)
        if len(got) == 0:
            continue
        out[v] = fg_feat[got].mean(axis=0)
        coverage[v] = 1
    return FeatureField(out, coverage)


def aggregate_views(per_view, positions: np.ndarray) -> FeatureField:
    """Average per-vertex features over the views that covered each vertex.

    Accepts any iterable of FeatureField (accumulation is streaming, in
    iteration order). Vertices with zero total coverage copy the feature of
    the nearest covered vertex (ties to the smaller index).
    """
    acc = None
    counts = None
    for field in per_view:
        if acc is None:
            acc = np.zeros_like(field.data, dtype=np.float64)
            counts = np.zeros(field.n, dtype=np.int64)
        if field.data.shape != acc.shape:
            raise ShapeMismatch("views disagree in (n, dim)")
        covered = field.coverage > 0
        acc[covered] += field.data[covered]
        counts += covered
    if acc is None:
        raise NoCoverage("no views given")
    covered = counts > 0
    if not covered.any():
        raise NoCoverage("every vertex has zero coverage across all views")
    out = np.zeros_like(acc)
    out[covered] = acc[covered] / counts[covered, None]

    holes = np.nonzero(~covered)[0]
    if len(holes):
        positions = np.asarray(positions, dtype=np.float64)
        cov_idx = np.nonzero(covered)[0]
        tree = SpatialIndex(positions[cov_idx])
        for v in holes:
            nearest, _ = tree.knn(positions[v], k=1)
            out[v] = out[cov_idx[nearest[0]]]
    return FeatureField(out, counts)


# ---------------------------------------------------------------------------
# .featb interchange
# ---------------------------------------------------------------------------

def save_featb(field: FeatureField, path) -> None:
    with open(path, "wb") as fh:
        fh.write(FEATB_MAGIC)
        fh.write(struct.pack("<IQI", 1, field.n, field.dim))
        fh.write(field.data.astype("<f4").tobytes())
        fh.write(np.clip(field.coverage, 0, 0xFFFF).astype("<u2").tobytes())


def load_featb(path) -> FeatureField:
    raw = open(path, "rb").read()
    if raw[:4] != FEATB_MAGIC:
        raise ParseError(f"{path}: bad magic, not a .featb file")
    version, n, dim = struct.unpack_from("<IQI", raw, 4)
    if version != 1:
        raise ParseError(f"{path}: unsupported .featb version {version}")
    need = 20 + 4 * n * dim + 2 * n
    if len(raw) != need:
        raise ParseError(f"{path}: expected {need} bytes, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", count=n * dim, offset=20)
    cov = np.frombuffer(raw, dtype="<u2", count=n, offset=20 + 4 * n * dim)
    return FeatureField(data.reshape(n, dim).astype(np.float64),
                        cov.astype(np.int64))


# ---------------------------------------------------------------------------
# Synthetic feature generation: runs the full pipeline with no external models.
# ---------------------------------------------------------------------------

def constant_vector(dim: int) -> np.ndarray:
    """The unit constant used by "constant" synthetic mode (and the exporter
    stub): ones / sqrt(dim)."""
    return np.ones(dim) / np.sqrt(dim)


def _smooth_basis(dim: int, seed: int):
    """Seeded low-frequency trig field over normalized surface position."""
    rng = np.random.default_rng(seed)
    freqs = rng.normal(scale=2.0, size=(dim, 3))
    phases = rng.uniform(0, 2 * np.pi, size=dim)
    return freqs, phases


def synth_pixel_maps(mesh: Mesh, projection: Projection, dim: int,
                     mode: str = "smooth", seed: int = 0,
                     n_steps: int = 4) -> list:
    """Per-step pixel feature maps derived from back-projected surface points.

    mode="constant": every foreground pixel carries ones/sqrt(dim).
    mode="smooth":   sin(<w_c, p_hat> + phi_c) per channel, seeded.
    Steps are scaled copies so weight_timesteps has real work to do.
    """
    pts, fg = back_project(projection.pose, projection.zbuf)
    h, w = projection.pose.image_size
    feat = np.zeros((h, w, dim))
    if mode == "constant":
        feat[fg] = constant_vector(dim)
    elif mode == "smooth":
        p_hat = (pts[fg] - mesh.centroid) / mesh.bbox_diagonal
        freqs, phases = _smooth_basis(dim, seed)
        feat[fg] = np.sin(p_hat @ freqs.T + phases)
    else:
        raise ValueError(f"unknown synthetic mode {mode!r}")
    depth = np.where(fg, projection.zbuf, np.inf)
    scale = np.linspace(0.5, 1.0, n_steps)
    return [PixelFeatureMap(data=s * feat, depth=depth) for s in scale]


def synth_feature_field(mesh: Mesh, poses, dim_diff: int = 16, dim_dino: int = 16,
                        mode: str = "smooth", seed: int = 0, alpha: float = 0.5,
                        k: int = 100, radius_frac: float = 0.01,
                        n_steps: int = 4) -> FeatureField:
    """Full synthetic pipeline: render depth, make per-step features, weight,
    fuse, unproject each view, and aggregate."""
    from .render import project_vertices

    fields = []
    for pose in poses:
        proj = project_vertices(mesh, pose)
        diff_steps = synth_pixel_maps(mesh, proj, dim_diff, mode, seed, n_steps)
        dino_map = synth_pixel_maps(mesh, proj, dim_dino, mode, seed + 1, 1)[0]
        dino_map = PixelFeatureMap(data=l2_normalize_pixels(dino_map.data),
                                   depth=dino_map.depth)
        diff = weight_timesteps(diff_steps)
        fused = fuse_pixel_features(diff, dino_map, alpha=alpha)
        fields.append(unproject_view(fused, proj, mesh, k=k, radius_frac=radius_frac))
    return aggregate_views(fields, mesh.vertices)
