"""Grad-CAM per-class maps and their combination into one saliency map."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .heatmap import Heatmap

SCHEMES = ("thresholded", "weighted", "uniform")


@dataclass(frozen=True, eq=False)
class GradCamBundle:
    """Activations [K, H, W], gradients [C, K, H, W] and logits [C] for one image."""

    lsfm: np.ndarray
    grads: np.ndarray
    logits: np.ndarray
    class_names: Sequence[str] = field(default=())
    no_finding_index: int = 0

    def __post_init__(self):
        lsfm = np.asarray(self.lsfm, dtype=np.float64)
        grads = np.asarray(self.grads, dtype=np.float64)
        logits = np.asarray(self.logits, dtype=np.float64)
        if lsfm.ndim != 3:
            raise ValueError(f"lsfm must be [K, H, W], got shape {lsfm.shape}")
        if grads.ndim != 4 or grads.shape[1:] != lsfm.shape:
            raise ValueError(f"grads must be [C, {', '.join(map(str, lsfm.shape))}], got {grads.shape}")
        if logits.shape != (grads.shape[0],):
            raise ValueError(f"logits must have length {grads.shape[0]}, got shape {logits.shape}")
        for name, arr in (("lsfm", lsfm), ("grads", grads), ("logits", logits)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        n_classes = grads.shape[0]
        names = tuple(self.class_names) or tuple(f"class_{c}" for c in range(n_classes))
        if len(names) != n_classes:
            raise ValueError(f"expected {n_classes} class names, got {len(names)}")
        if not 0 <= self.no_finding_index < n_classes:
            raise ValueError(f"no_finding_index {self.no_finding_index} out of range for {n_classes} classes")
        object.__setattr__(self, "lsfm", lsfm)
        object.__setattr__(self, "grads", grads)
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "class_names", names)


def gradcam_per_class(bundle: GradCamBundle) -> list[Heatmap]:
    # channel weights: global average pooling of each class's gradients
    alpha = bundle.grads.mean(axis=(2, 3))
    maps = np.einsum("ck,khw->chw", alpha, bundle.lsfm)
    return [Heatmap(np.maximum(m, 0.0)) for m in maps]


def class_weights(logits: Sequence[float], scheme: str, no_finding_index: int) -> np.ndarray:
    """Per-class mixing weights.

    ``thresholded`` keeps classes with a positive logit (a logit of exactly 0
    counts as absent) and falls back to the "No Finding" class when nothing is
    positive. ``weighted`` uses the predicted probability sigmoid(logit).
    ``uniform`` weights every class equally.
    """
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    if scheme == "thresholded":
        psi = (z > 0).astype(np.float64)
        if not psi.any():
            if not 0 <= no_finding_index < z.size:
                raise ValueError(f"no_finding_index {no_finding_index} out of range")
            psi[no_finding_index] = 1.0
        return psi
    if scheme == "weighted":
        # split by sign to avoid overflow in exp
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if scheme == "uniform":
        return np.ones_like(z)
    raise ValueError(f"unknown combination scheme {scheme!r}; expected one of {SCHEMES}")


def combine(per_class_maps: Sequence[Heatmap], psi: Sequence[float]) -> Heatmap:
    """Weighted mean of the class maps, weights normalized to sum to one."""
    w = np.asarray(psi, dtype=np.float64)
    if len(per_class_maps) != w.size:
        raise ValueError(f"{len(per_class_maps)} maps but {w.size} weights")
    if np.any(w < 0):
        raise ValueError("class weights must be non-negative")
    total = w.sum()
    if not total > 0:
        raise ValueError("all weights zero")
    shape = per_class_maps[0].shape
    stack = np.empty((w.size,) + shape)
    for c, m in enumerate(per_class_maps):
        if m.shape != shape:
            raise ValueError(f"class map {c} has shape {m.shape}, expected {shape}")
        stack[c] = m.values
    out = np.tensordot(w / total, stack, axes=1)
    # rounding can push a convex combination a few ulps past the input range
    return Heatmap(np.clip(out, stack.min(axis=0), stack.max(axis=0)))


def saliency_from_bundle(bundle: GradCamBundle, scheme: str) -> Heatmap:
    psi = class_weights(bundle.logits, scheme, bundle.no_finding_index)
    return combine(gradcam_per_class(bundle), psi)
