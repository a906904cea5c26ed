"""Reference saliency maps: interobserver folds and the lung-hull lower bound."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .heatmap import Heatmap, mean_heatmaps


@dataclass(frozen=True, eq=False)
class BinaryMask:
    bits: np.ndarray  # bool, shape (height, width)

    def __post_init__(self):
        bits = np.asarray(self.bits).astype(bool)
        if bits.ndim != 2 or bits.shape[0] < 1 or bits.shape[1] < 1:
            raise ValueError(f"mask must be a non-empty 2D array, got shape {bits.shape}")
        bits = bits.copy()
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @classmethod
    def from_heatmap(cls, hmap: Heatmap) -> "BinaryMask":
        return cls(hmap.values != 0)


@dataclass(frozen=True, eq=False)
class Fold:
    image_id: str
    held_out_reader: str
    gt: Heatmap
    candidate: Heatmap


def leave_one_out_folds(reader_maps: Sequence[tuple[str, Heatmap]], image_id: str = "") -> list[Fold]:
    """One fold per reader: the reader's own map against the mean of everyone else's."""
    if len(reader_maps) < 2:
        raise ValueError(f"need at least 2 readers for leave-one-out folds, got {len(reader_maps)}")
    folds = []
    for i, (reader_id, hmap) in enumerate(reader_maps):
        others = [m for j, (_, m) in enumerate(reader_maps) if j != i]
        folds.append(Fold(image_id, reader_id, mean_heatmaps(others), hmap))
    return folds


def _cross(o, a, b) -> int:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def monotone_chain(points: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
    """Convex hull in counter-clockwise order (y up), collinear points dropped.

    Returns one point for a single distinct point and the two endpoints for
    collinear input.
    """
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) == 2 and hull[0] == hull[1]:
        return hull[:1]
    return hull


def _boundary_candidates(bits: np.ndarray) -> list[tuple[int, int]]:
    # only the leftmost and rightmost true pixel of each row can be hull vertices
    rows = np.flatnonzero(bits.any(axis=1))
    pts = []
    for r in rows:
        cols = np.flatnonzero(bits[r])
        pts.append((int(cols[0]), int(r)))
        pts.append((int(cols[-1]), int(r)))
    return pts


def rasterize_convex_polygon(hull: Sequence[tuple[int, int]], width: int, height: int) -> np.ndarray:
    """Pixels whose center (integer lattice point) lies inside or on the polygon."""
    out = np.zeros((height, width), dtype=bool)
    xs = [p[0] for p in hull]
    ys = [p[1] for p in hull]
    x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
    gy, gx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    if len(hull) == 1:
        inside = np.ones(gx.shape, dtype=bool)
    elif len(hull) == 2:
        (ax, ay), (bx, by) = hull
        inside = (bx - ax) * (gy - ay) - (by - ay) * (gx - ax) == 0
    else:
        inside = np.ones(gx.shape, dtype=bool)
        for i in range(len(hull)):
            (ax, ay), (bx, by) = hull[i], hull[(i + 1) % len(hull)]
            inside &= (bx - ax) * (gy - ay) - (by - ay) * (gx - ax) >= 0
    out[y0 : y1 + 1, x0 : x1 + 1] = inside
    return out


def convex_hull_mask(mask: BinaryMask) -> Heatmap:
    """0/1 heatmap of the convex hull of all true pixels (pixel centers; boundary counts as inside)."""
    bits = mask.bits
    if not bits.any():
        raise ValueError("empty mask: convex hull needs at least one true pixel")
    hull = monotone_chain(_boundary_candidates(bits))
    filled = rasterize_convex_polygon(hull, mask.width, mask.height)
    return Heatmap(filled.astype(np.float64))
