"""Center-bias estimation by registering anatomical bounding boxes.

All per-image boxes are aligned to their average with an axis-aligned
scale + translation; the same transform moves each ET map into the shared
reference frame where the maps are averaged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .heatmap import Heatmap, mean_heatmaps


@dataclass(frozen=True)
class NamedBox:
    name: str
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        coords = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"box {self.name!r} has non-finite coordinates")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"box {self.name!r} must satisfy x_min < x_max and y_min < y_max")

    def corners(self) -> list[tuple[float, float]]:
        return [
            (self.x_min, self.y_min),
            (self.x_max, self.y_min),
            (self.x_max, self.y_max),
            (self.x_min, self.y_max),
        ]


@dataclass(frozen=True)
class DiagonalAffine2D:
    """Maps (x, y) to (scale_x * x + translate_x, scale_y * y + translate_y)."""

    scale_x: float = 1.0
    scale_y: float = 1.0
    translate_x: float = 0.0
    translate_y: float = 0.0

    def __post_init__(self):
        if not (self.scale_x > 0 and self.scale_y > 0):
            raise ValueError(f"scales must be > 0, got ({self.scale_x}, {self.scale_y})")

    def apply(self, x, y):
        return self.scale_x * x + self.translate_x, self.scale_y * y + self.translate_y

    def inverse(self) -> "DiagonalAffine2D":
        return DiagonalAffine2D(
            1.0 / self.scale_x,
            1.0 / self.scale_y,
            -self.translate_x / self.scale_x,
            -self.translate_y / self.scale_y,
        )

    def apply_box(self, box: NamedBox) -> NamedBox:
        x0, y0 = self.apply(box.x_min, box.y_min)
        x1, y1 = self.apply(box.x_max, box.y_max)
        return NamedBox(box.name, x0, y0, x1, y1)


def _by_name(boxes: Sequence[NamedBox]) -> dict[str, NamedBox]:
    out = {}
    for b in boxes:
        if b.name in out:
            raise ValueError(f"duplicate box name {b.name!r}")
        out[b.name] = b
    return out


def mean_boxes(
    per_image_boxes: Sequence[Sequence[NamedBox]], image_ids: Optional[Sequence[str]] = None
) -> list[NamedBox]:
    """Coordinate-wise average of each named box across images.

    Box order follows the first image.
    """
    if len(per_image_boxes) == 0:
        raise ValueError("no images to average boxes over")
    if image_ids is None:
        image_ids = [str(i) for i in range(len(per_image_boxes))]
    names = [b.name for b in per_image_boxes[0]]
    indexed = [_by_name(boxes) for boxes in per_image_boxes]
    for image_id, lookup in zip(image_ids, indexed):
        for name in names:
            if name not in lookup:
                raise ValueError(f"image {image_id} is missing box {name!r}")
        extra = set(lookup) - set(names)
        if extra:
            raise ValueError(f"image {image_id} has unexpected boxes {sorted(extra)}")

    result = []
    for name in names:
        coords = np.array(
            [[lk[name].x_min, lk[name].y_min, lk[name].x_max, lk[name].y_max] for lk in indexed]
        )
        x0, y0, x1, y1 = coords.mean(axis=0)
        result.append(NamedBox(name, float(x0), float(y0), float(x1), float(y1)))
    return result


def _paired_corners(source: Sequence[NamedBox], reference: Sequence[NamedBox]):
    src, ref = _by_name(source), _by_name(reference)
    if set(src) != set(ref):
        raise ValueError(f"box names differ: {sorted(src)} vs {sorted(ref)}")
    s_pts, r_pts = [], []
    for name in sorted(src):
        s_pts.extend(src[name].corners())
        r_pts.extend(ref[name].corners())
    return np.array(s_pts, dtype=np.float64), np.array(r_pts, dtype=np.float64)


def _fit_axis(s: np.ndarray, r: np.ndarray) -> tuple[float, float]:
    s_mean, r_mean = s.mean(), r.mean()
    ds = s - s_mean
    var = np.dot(ds, ds)
    if var == 0:
        raise ValueError("degenerate geometry: all source corners share one coordinate")
    scale = np.dot(ds, r - r_mean) / var
    return float(scale), float(r_mean - scale * s_mean)


def fit_transform(source: Sequence[NamedBox], reference: Sequence[NamedBox]) -> DiagonalAffine2D:
    """Least-squares diagonal affine taking source box corners onto reference corners.

    x and y decouple, so each axis is an ordinary 1D linear fit over the
    corners of all boxes.
    """
    s, r = _paired_corners(source, reference)
    sx, tx = _fit_axis(s[:, 0], r[:, 0])
    sy, ty = _fit_axis(s[:, 1], r[:, 1])
    if sx <= 0 or sy <= 0:
        raise ValueError(f"degenerate geometry: fitted scale ({sx}, {sy}) is not positive")
    return DiagonalAffine2D(sx, sy, tx, ty)


def registration_residual(
    transform: DiagonalAffine2D, source: Sequence[NamedBox], reference: Sequence[NamedBox]
) -> float:
    """Root of the summed squared corner distances after applying ``transform``."""
    s, r = _paired_corners(source, reference)
    x, y = transform.apply(s[:, 0], s[:, 1])
    return float(np.sqrt(np.sum((x - r[:, 0]) ** 2 + (y - r[:, 1]) ** 2)))


def _axis_weights(n_out: int, n_in: int, scale: float, translate: float):
    # continuous source coordinate of each output pixel center
    q = ((np.arange(n_out) + 0.5) - translate) / scale
    inside = (q >= 0) & (q < n_in)
    u = np.clip(q - 0.5, 0.0, n_in - 1.0)
    i0 = np.floor(u).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = u - i0
    return i0, i1, frac, inside


def warp_heatmap(hmap: Heatmap, transform: DiagonalAffine2D, out_width: int, out_height: int) -> Heatmap:
    """Resample ``hmap`` into a new grid where output point p takes the input value at T^-1(p).

    Bilinear interpolation between pixel centers; points that map outside the
    input extent get 0. Inside the extent, the half-pixel border band
    replicates the edge pixels so constants survive exactly.
    """
    v = hmap.values
    h_in, w_in = v.shape
    cx0, cx1, fx, in_x = _axis_weights(out_width, w_in, transform.scale_x, transform.translate_x)
    cy0, cy1, fy, in_y = _axis_weights(out_height, h_in, transform.scale_y, transform.translate_y)

    rows = v[cy0, :] * (1.0 - fy)[:, None] + v[cy1, :] * fy[:, None]
    out = rows[:, cx0] * (1.0 - fx)[None, :] + rows[:, cx1] * fx[None, :]
    out = np.where(in_y[:, None] & in_x[None, :], out, 0.0)
    return Heatmap(out)


def resize_heatmap(hmap: Heatmap, out_width: int, out_height: int) -> Heatmap:
    """Bilinear resize that maps the input image extent onto the output extent."""
    t = DiagonalAffine2D(out_width / hmap.width, out_height / hmap.height, 0.0, 0.0)
    return warp_heatmap(hmap, t, out_width, out_height)


def compute_center_bias(
    et_maps_with_boxes: Sequence[tuple[Heatmap, Sequence[NamedBox]]],
    reference_dims: tuple[int, int],
) -> tuple[Heatmap, list[NamedBox]]:
    """Average of the ET maps after registering each image's boxes to the mean boxes.

    ``reference_dims`` is (width, height) of the reference frame. Returns the
    center bias and the reference boxes it lives under.
    """
    if len(et_maps_with_boxes) == 0:
        raise ValueError("no ET maps given for center bias")
    ref_w, ref_h = reference_dims
    reference = mean_boxes([boxes for _, boxes in et_maps_with_boxes])
    warped = [
        warp_heatmap(hmap, fit_transform(boxes, reference), ref_w, ref_h)
        for hmap, boxes in et_maps_with_boxes
    ]
    return mean_heatmaps(warped), reference


def project_center_bias(
    cb: Heatmap,
    reference_boxes: Sequence[NamedBox],
    image_boxes: Sequence[NamedBox],
    image_dims: tuple[int, int],
) -> Heatmap:
    """Move the center bias from the reference frame onto one image's box layout."""
    t = fit_transform(reference_boxes, image_boxes)
    return warp_heatmap(cb, t, image_dims[0], image_dims[1])
