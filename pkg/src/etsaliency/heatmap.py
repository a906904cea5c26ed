"""Heatmap container and eye-tracking map rendering.

Pixel (col, row) is identified with the continuous point (col + 0.5, row + 0.5);
fixation coordinates live in that continuous frame, so a fixation at x = 3.7
falls inside pixel column 3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class Heatmap:
    """Dense 2D scalar field stored as a read-only float64 array of shape (height, width)."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ValueError(f"heatmap must be 2D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"heatmap must be at least 1x1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("heatmap contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @classmethod
    def constant(cls, width: int, height: int, value: float = 0.0) -> "Heatmap":
        return cls(np.full((height, width), value, dtype=np.float64))

    @classmethod
    def from_flat(cls, width: int, height: int, values: Sequence[float]) -> "Heatmap":
        flat = np.asarray(values, dtype=np.float64)
        if flat.size != width * height:
            raise ValueError(f"expected {width * height} values, got {flat.size}")
        return cls(flat.reshape(height, width))

    def __repr__(self):
        return f"Heatmap({self.width}x{self.height})"


@dataclass(frozen=True)
class FixationRecord:
    x: float
    y: float
    duration: float
    sigma_px: Optional[float] = None

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"fixation position must be finite, got ({self.x}, {self.y})")
        if not math.isfinite(self.duration) or self.duration <= 0:
            raise ValueError(f"fixation duration must be finite and > 0, got {self.duration}")
        if self.sigma_px is not None and (not math.isfinite(self.sigma_px) or self.sigma_px <= 0):
            raise ValueError(f"sigma_px must be finite and > 0, got {self.sigma_px}")


@dataclass(frozen=True)
class EtMapConfig:
    # 1 degree of visual angle in pixels; used when a fixation has no sigma_px
    pixels_per_degree: float = 30.0
    truncation_radius_sigmas: float = 4.0

    def __post_init__(self):
        if not self.pixels_per_degree > 0:
            raise ValueError("pixels_per_degree must be > 0")
        if not self.truncation_radius_sigmas >= 3:
            raise ValueError("truncation_radius_sigmas must be >= 3")


def _gaussian_1d(centers: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    d = centers - mu
    return np.exp(-0.5 * (d * d) / (sigma * sigma))


def render_et_map(
    fixations: Sequence[FixationRecord], width: int, height: int, config: EtMapConfig = EtMapConfig()
) -> Heatmap:
    """Duration-weighted sum of unit-mass isotropic Gaussians, one per fixation.

    Each Gaussian has standard deviation ``sigma_px`` (or ``config.pixels_per_degree``
    when absent) and is evaluated at pixel centers inside a square window of
    +/- ``truncation_radius_sigmas`` standard deviations.
    """
    if len(fixations) == 0:
        raise ValueError("no fixations")
    for f in fixations:
        if not (0 <= f.x < width and 0 <= f.y < height):
            raise ValueError(f"fixation at ({f.x}, {f.y}) outside {width}x{height} image")

    # fixed accumulation order -> bit-reproducible regardless of input order
    default_sigma = float(config.pixels_per_degree)
    ordered = sorted(
        fixations,
        key=lambda f: (f.y, f.x, f.duration, f.sigma_px if f.sigma_px is not None else default_sigma),
    )

    out = np.zeros((height, width), dtype=np.float64)
    for f in ordered:
        sigma = f.sigma_px if f.sigma_px is not None else default_sigma
        radius = config.truncation_radius_sigmas * sigma
        c0 = max(0, math.ceil(f.x - radius - 0.5))
        c1 = min(width - 1, math.floor(f.x + radius - 0.5))
        r0 = max(0, math.ceil(f.y - radius - 0.5))
        r1 = min(height - 1, math.floor(f.y + radius - 0.5))
        if c0 > c1 or r0 > r1:
            continue
        gx = _gaussian_1d(np.arange(c0, c1 + 1) + 0.5, f.x, sigma)
        gy = _gaussian_1d(np.arange(r0, r1 + 1) + 0.5, f.y, sigma)
        scale = f.duration / (2.0 * math.pi * sigma * sigma)
        out[r0 : r1 + 1, c0 : c1 + 1] += scale * np.outer(gy, gx)
    return Heatmap(out)


def _check_same_shape(maps: Sequence[Heatmap]) -> None:
    shape = maps[0].shape
    for i, m in enumerate(maps):
        if m.shape != shape:
            raise ValueError(f"heatmap {i} has shape {m.shape}, expected {shape}")


def mean_heatmaps(maps: Sequence[Heatmap]) -> Heatmap:
    if len(maps) == 0:
        raise ValueError("cannot average an empty list of heatmaps")
    _check_same_shape(maps)
    total = np.zeros(maps[0].shape, dtype=np.float64)
    for m in maps:
        total += m.values
    return Heatmap(total / len(maps))


def normalize_to_distribution(hmap: Heatmap) -> Heatmap:
    """Rescale a non-negative map so that it sums to one."""
    v = hmap.values
    if np.any(v < 0):
        raise ValueError("not normalizable: heatmap has negative values")
    total = v.sum()
    if not total > 0:
        raise ValueError("not normalizable: heatmap sums to zero")
    return Heatmap(v / total)
