"""Similarity scores between a ground-truth ET map and a saliency map.

NCC is Pearson correlation over pixels. AUC follows the Borji scheme: the
saliency map's values at positive locations (drawn from the normalized ground
truth) are ranked against its values at negative locations (drawn uniformly,
or from the center bias for the shuffled variant).

Randomness comes from numpy's PCG64 generator. A single evaluation seed ``s``
is split as: ``s`` for positives, ``s + 1`` for uniform negatives and
``s + 2`` for center-bias negatives (all modulo 2**64).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .heatmap import Heatmap, normalize_to_distribution

SEED_MASK = (1 << 64) - 1


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & SEED_MASK))


@dataclass(frozen=True)
class SamplerSpec:
    n_positive: int = 1000
    n_negative: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.n_positive < 1 or self.n_negative < 1:
            raise ValueError("n_positive and n_negative must be >= 1")
        if not 0 <= self.seed <= SEED_MASK:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class NegativeSource:
    kind: str = "uniform"
    cb: Optional[Heatmap] = None

    def __post_init__(self):
        if self.kind not in ("uniform", "center_bias"):
            raise ValueError(f"unknown negative source {self.kind!r}")
        if (self.kind == "center_bias") != (self.cb is not None):
            raise ValueError("cb is required exactly when kind == 'center_bias'")


class MetricScores(NamedTuple):
    ncc: float
    auc: float
    sncc: float
    sauc: float


def _require_same_shape(*maps: Heatmap) -> None:
    shape = maps[0].shape
    for m in maps[1:]:
        if m.shape != shape:
            raise ValueError(f"dimension mismatch: {m.shape} vs {shape}")


def ncc(a: Heatmap, b: Heatmap) -> float:
    _require_same_shape(a, b)
    x, y = a.values.ravel(), b.values.ravel()
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValueError("constant heatmap: NCC is undefined for zero variance")
    x = x - x.mean()
    y = y - y.mean()
    sxx, syy = np.dot(x, x), np.dot(y, y)
    if sxx == 0 or syy == 0:
        raise ValueError("constant heatmap: NCC is undefined for zero variance")
    # sqrt of the product (not product of sqrts) keeps ncc(M, M) == 1.0 exactly
    r = np.dot(x, y) / np.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


def sncc(gt: Heatmap, sm: Heatmap, cb: Heatmap) -> float:
    """NCC against the ground truth minus NCC against the center bias."""
    _require_same_shape(gt, sm, cb)
    return ncc(gt, sm) - ncc(cb, sm)


def sample_locations(dist: Heatmap, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` flat pixel indices i.i.d. with probability given by ``dist``.

    Inverse-CDF sampling on the cumulative sum; pixels with zero mass are never drawn.
    """
    p = dist.values.ravel()
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("sampling distribution must be non-negative and sum to 1")
    cdf = np.cumsum(p)
    total = cdf[-1]
    u = rng.random(n) * total
    idx = np.searchsorted(cdf, u, side="right")
    # u can round up to total; fall back to the last pixel carrying mass
    last = int(np.flatnonzero(p > 0)[-1])
    return np.minimum(idx, last)


def mann_whitney_auc(pos_scores: np.ndarray, neg_scores: np.ndarray) -> float:
    """(#pairs pos > neg + 0.5 * #ties) / (n_pos * n_neg), via sorting and binary search."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.sort(np.asarray(neg_scores, dtype=np.float64))
    below = np.searchsorted(neg, pos, side="left")
    at_or_below = np.searchsorted(neg, pos, side="right")
    wins = int(below.sum())
    ties = int((at_or_below - below).sum())
    return (wins + 0.5 * ties) / (pos.size * neg.size)


def _positive_indices(gt: Heatmap, spec: SamplerSpec) -> np.ndarray:
    return sample_locations(normalize_to_distribution(gt), spec.n_positive, make_rng(spec.seed))


def _negative_indices(shape: tuple[int, int], spec: SamplerSpec, neg: NegativeSource) -> np.ndarray:
    if neg.kind == "uniform":
        rng = make_rng(spec.seed + 1)
        return rng.integers(0, shape[0] * shape[1], size=spec.n_negative)
    rng = make_rng(spec.seed + 2)
    return sample_locations(normalize_to_distribution(neg.cb), spec.n_negative, rng)


def auc(gt: Heatmap, sm: Heatmap, spec: SamplerSpec = SamplerSpec(), neg: NegativeSource = NegativeSource()) -> float:
    _require_same_shape(gt, sm)
    if neg.cb is not None:
        _require_same_shape(gt, neg.cb)
    scores = sm.values.ravel()
    pos = _positive_indices(gt, spec)
    negs = _negative_indices(gt.shape, spec, neg)
    return mann_whitney_auc(scores[pos], scores[negs])


def sauc(gt: Heatmap, sm: Heatmap, cb: Heatmap, spec: SamplerSpec = SamplerSpec()) -> float:
    """AUC with negatives drawn from the center bias instead of uniformly."""
    return auc(gt, sm, spec, NegativeSource("center_bias", cb))


def evaluate_image(gt: Heatmap, sm: Heatmap, cb: Heatmap, spec: SamplerSpec = SamplerSpec()) -> MetricScores:
    _require_same_shape(gt, sm, cb)
    scores = sm.values.ravel()
    pos = scores[_positive_indices(gt, spec)]
    uniform_neg = scores[_negative_indices(gt.shape, spec, NegativeSource())]
    cb_neg = scores[_negative_indices(gt.shape, spec, NegativeSource("center_bias", cb))]
    return MetricScores(
        ncc=ncc(gt, sm),
        auc=mann_whitney_auc(pos, uniform_neg),
        sncc=sncc(gt, sm, cb),
        sauc=mann_whitney_auc(pos, cb_neg),
    )
