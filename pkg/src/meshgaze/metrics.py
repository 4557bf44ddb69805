"""Saliency and scanpath evaluation metrics.

All functions are pure and accept either SaliencyMap objects or plain
arrays. KL divergence follows the convention of adding epsilon only to the
denominator and treating y_i = 0 terms as zero; NSS standardizes with the
population standard deviation so the one-hot closed form sqrt(N-1) holds.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import AllFixated, LengthMismatch, TooShort, ZeroVariance
from .maps import FixationSet, SaliencyMap, Scanpath, as_values

KL_EPS = 1e-8


def _pair(gt, pred):
    y = as_values(gt)
    p = as_values(pred)
    if len(y) != len(p):
        raise LengthMismatch(f"length {len(y)} vs {len(p)}")
    return y, p


def _to_distribution(v):
    s = v.sum()
    if s <= 0:
        return np.full(len(v), 1.0 / len(v))
    return v / s


def kl_div(gt, pred) -> float:
    """KL(gt || pred) in nats, with epsilon guarding the denominator.

    Both maps are normalized to distributions on entry if needed.
    """
    y, p = _pair(gt, pred)
    y = _to_distribution(y)
    p = _to_distribution(p)
    nz = y > 0
    return float(np.sum(y[nz] * np.log(y[nz] / (p[nz] + KL_EPS))))


def cc(gt, pred, on_zero_variance: str = "zero") -> float:
    """Pearson correlation of raw (unnormalized) values.

    A constant argument has no defined correlation: with
    on_zero_variance="zero" the result is 0.0 plus a warning, with
    "raise" a ZeroVariance error propagates (used inside the loss).
    """
    y, p = _pair(gt, pred)
    if len(y) < 2:
        raise LengthMismatch("correlation needs length >= 2")
    yc = y - y.mean()
    pc = p - p.mean()
    denom = np.sqrt((yc * yc).sum()) * np.sqrt((pc * pc).sum())
    if denom == 0.0:
        if on_zero_variance == "raise":
            raise ZeroVariance("constant map has undefined correlation")
        warnings.warn("constant map in cc(): returning 0.0", RuntimeWarning)
        return 0.0
    return float((yc * pc).sum() / denom)


def nss(pred, fix: FixationSet) -> float:
    """Mean z-scored prediction at fixated vertices (population sigma)."""
    p = as_values(pred)
    idx = fix.vertex_indices if isinstance(fix, FixationSet) else np.asarray(fix)
    if (idx < 0).any() or (idx >= len(p)).any():
        raise LengthMismatch("fixation index out of range")
    sigma = p.std()  # population
    if sigma == 0.0:
        raise ZeroVariance("constant prediction has undefined NSS")
    return float(((p[idx] - p.mean()) / sigma).mean())


def auc_judd(pred, fix: FixationSet) -> float:
    """ROC area discriminating fixated from non-fixated vertices.

    Thresholds sweep the predicted values at fixated vertices; a vertex is
    classified salient when pred >= threshold. The curve is anchored at
    (0,0) and (1,1) and integrated trapezoidally, which credits
    positive/negative ties at a threshold fractionally (diagonal segment).
    """
    p = as_values(pred)
    idx = fix.vertex_indices if isinstance(fix, FixationSet) else np.asarray(fix)
    pos_mask = np.zeros(len(p), dtype=bool)
    pos_mask[idx] = True
    n_pos = int(pos_mask.sum())
    n_neg = len(p) - n_pos
    if n_neg == 0:
        raise AllFixated("every vertex is fixated; ROC undefined")

    thresholds = np.unique(p[pos_mask])[::-1]
    tpr = [0.0]
    fpr = [0.0]
    for t in thresholds:
        sel = p >= t
        tpr.append((sel & pos_mask).sum() / n_pos)
        fpr.append((sel & ~pos_mask).sum() / n_neg)
    tpr.append(1.0)
    fpr.append(1.0)
    return float(np.trapezoid(tpr, fpr))


def mse(gt, pred) -> float:
    """Mean squared per-vertex difference on raw values."""
    y, p = _pair(gt, pred)
    return float(np.mean((y - p) ** 2))


# ---------------------------------------------------------------------------
# MultiMatch, adapted to meshes: 3D saccade vectors, bbox-diagonal scale.
# ---------------------------------------------------------------------------

@dataclass
class MultiMatchScore:
    shape: float
    direction: float
    length: float
    position: float
    duration: float

    @property
    def mean(self) -> float:
        return (self.shape + self.direction + self.length
                + self.position + self.duration) / 5.0

    def as_dict(self) -> dict:
        return {
            "shape": self.shape,
            "direction": self.direction,
            "length": self.length,
            "position": self.position,
            "duration": self.duration,
            "mean": self.mean,
        }


def _saccades(s: Scanpath) -> np.ndarray:
    return s.positions[1:] - s.positions[:-1]


def _align(u: np.ndarray, v: np.ndarray):
    """Monotone lattice alignment minimizing summed vector-difference norms.

    No gaps: every step advances one or both sequences, so every cell on
    the path is an aligned (i, j) pair.
    """
    n, m = len(u), len(v)
    cost = np.linalg.norm(u[:, None, :] - v[None, :, :], axis=2)
    acc = np.full((n, m), np.inf)
    acc[0, 0] = cost[0, 0]
    for i in range(n):
        for j in range(m):
            if i == 0 and j == 0:
                continue
            best = np.inf
            if i > 0 and j > 0:
                best = acc[i - 1, j - 1]
            if i > 0:
                best = min(best, acc[i - 1, j])
            if j > 0:
                best = min(best, acc[i, j - 1])
            acc[i, j] = cost[i, j] + best
    # Backtrack, preferring the diagonal on ties.
    pairs = [(n - 1, m - 1)]
    i, j = n - 1, m - 1
    while i > 0 or j > 0:
        choices = []
        if i > 0 and j > 0:
            choices.append((acc[i - 1, j - 1], 0, i - 1, j - 1))
        if i > 0:
            choices.append((acc[i - 1, j], 1, i - 1, j))
        if j > 0:
            choices.append((acc[i, j - 1], 2, i, j - 1))
        _, _, i, j = min(choices)
        pairs.append((i, j))
    pairs.reverse()
    return pairs


def _angle(u, v) -> float:
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu < 1e-300 or nv < 1e-300:
        return 0.0
    a = u / nu
    b = v / nv
    # atan2 form is exact at 0 and pi, unlike arccos of a rounded dot product.
    return float(2.0 * np.arctan2(np.linalg.norm(a - b), np.linalg.norm(a + b)))


def multimatch(a: Scanpath, b: Scanpath, diag: float) -> MultiMatchScore:
    """Five-dimensional scanpath similarity on a mesh of bbox diagonal `diag`.

    Saccade vectors are aligned by dynamic programming; each dimension is
    1 minus the mean normalized dissimilarity of aligned pairs, clipped to
    [0, 1]. Position and duration compare the fixations that start each
    aligned saccade.
    """
    if len(a) < 2 or len(b) < 2:
        raise TooShort("multimatch needs scanpaths with >= 2 fixations")
    if diag <= 0:
        raise ValueError("diag must be positive")
    u = _saccades(a)
    v = _saccades(b)
    pairs = _align(u, v)

    dis = {k: [] for k in ("shape", "direction", "length", "position", "duration")}
    for i, j in pairs:
        dis["shape"].append(np.linalg.norm(u[i] - v[j]) / (2.0 * diag))
        dis["direction"].append(_angle(u[i], v[j]) / np.pi)
        dis["length"].append(abs(np.linalg.norm(u[i]) - np.linalg.norm(v[j])) / diag)
        dis["position"].append(np.linalg.norm(a.positions[i] - b.positions[j]) / diag)
        da, db = a.durations[i], b.durations[j]
        dis["duration"].append(abs(da - db) / max(da, db))

    scores = {k: float(np.clip(1.0 - np.mean(d), 0.0, 1.0)) for k, d in dis.items()}
    return MultiMatchScore(**scores)
