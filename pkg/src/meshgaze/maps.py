"""Per-vertex saliency maps, fixation sets, scanpaths, and their file formats.

Formats:
  - saliency text: one decimal float per line, N lines
  - saliency binary ``.smap``: magic "SMAP", u32 version=1, u64 N, N little-endian f32
  - fixation text: one vertex index per line
  - scanpath JSON: {"mesh": "<path>", "fixations": [{"v": i, "p": [x,y,z], "d": dur}]}
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import LengthMismatch, ParseError

_SMAP_MAGIC = b"SMAP"


@dataclass
class SaliencyMap:
    """Nonnegative per-vertex scores; optionally normalized to a distribution."""

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if (self.values < 0).any():
            raise ValueError("saliency values must be nonnegative")
        if self.normalized and abs(self.values.sum() - 1.0) > 1e-9:
            raise ValueError("normalized flag set but values do not sum to 1")

    def __len__(self) -> int:
        return len(self.values)

    def normalize(self) -> "SaliencyMap":
        """Rescale to sum 1. A zero map becomes uniform."""
        s = self.values.sum()
        if s <= 0:
            vals = np.full(len(self.values), 1.0 / len(self.values))
        else:
            vals = self.values / s
        return SaliencyMap(vals, normalized=True)


def as_values(m) -> np.ndarray:
    """Accept a SaliencyMap or a plain array."""
    if isinstance(m, SaliencyMap):
        return m.values
    return np.asarray(m, dtype=np.float64).reshape(-1)


@dataclass
class FixationSet:
    """Fixated vertex indices; repeats allowed (multiple observers)."""

    vertex_indices: np.ndarray

    def __post_init__(self):
        self.vertex_indices = np.asarray(self.vertex_indices, dtype=np.int64).reshape(-1)
        if len(self.vertex_indices) < 1:
            raise ValueError("fixation set must contain at least one fixation")

    def __len__(self) -> int:
        return len(self.vertex_indices)


@dataclass
class Scanpath:
    """Ordered fixation sequence: vertex index, 3D position, duration (s)."""

    vertex_indices: np.ndarray
    positions: np.ndarray
    durations: np.ndarray
    mesh_path: str = ""

    def __post_init__(self):
        self.vertex_indices = np.asarray(self.vertex_indices, dtype=np.int64).reshape(-1)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.durations = np.asarray(self.durations, dtype=np.float64).reshape(-1)
        if not (len(self.vertex_indices) == len(self.positions) == len(self.durations)):
            raise LengthMismatch("scanpath fields disagree in length")
        if (self.durations <= 0).any():
            raise ValueError("durations must be positive")

    def __len__(self) -> int:
        return len(self.vertex_indices)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def save_saliency_text(m, path) -> None:
    vals = as_values(m)
    with open(path, "w") as fh:
        fh.write("\n".join(repr(float(v)) for v in vals) + "\n")


def load_saliency_text(path) -> SaliencyMap:
    try:
        vals = [float(line) for line in open(path) if line.strip()]
    except ValueError as e:
        raise ParseError(f"bad saliency text file {path}: {e}") from e
    return SaliencyMap(np.array(vals))


def save_smap(m, path) -> None:
    vals = as_values(m).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(_SMAP_MAGIC)
        fh.write(struct.pack("<IQ", 1, len(vals)))
        fh.write(vals.tobytes())


def load_smap(path) -> SaliencyMap:
    raw = open(path, "rb").read()
    if raw[:4] != _SMAP_MAGIC:
        raise ParseError(f"{path}: bad magic, not an .smap file")
    version, n = struct.unpack_from("<IQ", raw, 4)
    if version != 1:
        raise ParseError(f"{path}: unsupported .smap version {version}")
    if len(raw) != 16 + 4 * n:
        raise ParseError(f"{path}: truncated .smap payload")
    vals = np.frombuffer(raw, dtype="<f4", count=n, offset=16)
    return SaliencyMap(vals.astype(np.float64))


def save_fixations(f: FixationSet, path) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(str(int(i)) for i in f.vertex_indices) + "\n")


def load_fixations(path) -> FixationSet:
    try:
        idx = [int(line) for line in open(path) if line.strip()]
    except ValueError as e:
        raise ParseError(f"bad fixation file {path}: {e}") from e
    return FixationSet(np.array(idx, dtype=np.int64))


def save_scanpath(s: Scanpath, path) -> None:
    doc = {
        "mesh": s.mesh_path,
        "fixations": [
            {"v": int(v), "p": [float(x) for x in p], "d": float(d)}
            for v, p, d in zip(s.vertex_indices, s.positions, s.durations)
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_scanpath(path) -> Scanpath:
    try:
        doc = json.load(open(path))
        fx = doc["fixations"]
        return Scanpath(
            vertex_indices=[f["v"] for f in fx],
            positions=[f["p"] for f in fx],
            durations=[f["d"] for f in fx],
            mesh_path=doc.get("mesh", ""),
        )
    except (KeyError, ValueError, TypeError) as e:
        raise ParseError(f"bad scanpath file {path}: {e}") from e
