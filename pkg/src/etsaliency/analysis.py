"""Score aggregation, normal/abnormal and abnormality-type splits, OLS, label statistics."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Iterable, Mapping, NamedTuple, Optional, Sequence

import numpy as np

METRICS = ("ncc", "auc", "sncc", "sauc")
TYPES = ("parenchymal", "pleural", "cardiomediastinal")
GROUPS = TYPES + ("ungrouped",)
CERTAINTY_LEVELS = (0.10, 0.25, 0.50, 0.75, 0.90)
NON_ABNORMAL_LABELS = frozenset({"Quality issue"})
REGRESSION_TERMS = ("intercept", "abnormal") + TYPES


@dataclass(frozen=True)
class ScoreRow:
    image_id: str
    fold_reader_id: str
    source: str
    metric: str
    value: float

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if not math.isfinite(self.value):
            raise ValueError(f"score value must be finite, got {self.value}")


def _check_certainty(p: float) -> float:
    for level in CERTAINTY_LEVELS:
        if abs(p - level) < 1e-9:
            return level
    raise ValueError(f"certainty {p} is not one of {CERTAINTY_LEVELS}")


@dataclass(frozen=True)
class Ellipse:
    """One located finding: a set of labels sharing a certainty and an ellipse."""

    labels: frozenset
    certainty: float
    semi_axis_a: float
    semi_axis_b: float

    def __post_init__(self):
        object.__setattr__(self, "labels", frozenset(self.labels))
        object.__setattr__(self, "certainty", _check_certainty(self.certainty))
        if not (self.semi_axis_a > 0 and self.semi_axis_b > 0):
            raise ValueError("ellipse semi-axes must be > 0")


@dataclass(frozen=True)
class ReaderLabels:
    image_id: str
    reader_id: str
    labels: frozenset = frozenset()
    ellipses: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "labels", frozenset(self.labels))
        object.__setattr__(self, "ellipses", tuple(self.ellipses))


class TypeGrouping:
    """Total mapping from label string to abnormality group; unknown labels are ungrouped."""

    def __init__(self, mapping: Mapping[str, str]):
        for label, group in mapping.items():
            if group not in GROUPS:
                raise ValueError(f"label {label!r} maps to unknown group {group!r}")
        self._mapping = dict(mapping)

    def __getitem__(self, label: str) -> str:
        return self._mapping.get(label, "ungrouped")

    def labels_of(self, group: str) -> list[str]:
        return sorted(k for k, v in self._mapping.items() if v == group)

    @classmethod
    def from_csv(cls, path) -> "TypeGrouping":
        with open(path, newline="") as fh:
            return cls._from_rows(csv.DictReader(fh), str(path))

    @classmethod
    def default(cls) -> "TypeGrouping":
        text = resources.files("etsaliency").joinpath("data/grouping.csv").read_text()
        return cls._from_rows(csv.DictReader(text.splitlines()), "grouping.csv")

    @classmethod
    def _from_rows(cls, reader, source: str) -> "TypeGrouping":
        if reader.fieldnames is None or not {"label", "group"} <= set(reader.fieldnames):
            raise ValueError(f"{source}: grouping CSV needs columns label,group")
        return cls({row["label"]: row["group"] for row in reader})


def _abnormal_labels(labels: Iterable[str], non_abnormal: frozenset) -> set:
    return {lab for lab in labels if lab and lab not in non_abnormal}


def is_abnormal(image_reader_labels: Sequence[ReaderLabels], non_abnormal=NON_ABNORMAL_LABELS) -> bool:
    """Strict majority of readers selected at least one abnormality label."""
    if not image_reader_labels:
        return False
    flagged = sum(1 for r in image_reader_labels if _abnormal_labels(r.labels, non_abnormal))
    return 2 * flagged > len(image_reader_labels)


def type_present(
    image_reader_labels: Sequence[ReaderLabels], grouping: TypeGrouping, group: str, min_readers: int = 3
) -> bool:
    """At least ``min_readers`` readers selected one or more labels of ``group``."""
    count = sum(1 for r in image_reader_labels if any(grouping[lab] == group for lab in r.labels))
    return count >= min_readers


class ImageFlags(NamedTuple):
    abnormal: bool
    parenchymal: bool
    pleural: bool
    cardiomediastinal: bool


def image_flags(image_reader_labels: Sequence[ReaderLabels], grouping: TypeGrouping) -> ImageFlags:
    return ImageFlags(
        is_abnormal(image_reader_labels),
        *(type_present(image_reader_labels, grouping, t) for t in TYPES),
    )


def ols(design, response) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares coefficients and their standard errors via a QR factorization."""
    X = np.asarray(design, dtype=np.float64)
    y = np.asarray(response, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError(f"design {X.shape} and response {y.shape} are incompatible")
    n, p = X.shape
    if n <= p:
        raise ValueError(f"need more observations than parameters, got N={n}, P={p}")
    Q, R = np.linalg.qr(X, mode="reduced")
    diag = np.abs(np.diag(R))
    if diag.min() <= max(n, p) * np.finfo(float).eps * diag.max():
        raise ValueError("collinear design: design matrix is rank deficient")
    beta = np.linalg.solve(R, Q.T @ y)
    resid = y - X @ beta
    s2 = float(resid @ resid) / (n - p)
    r_inv = np.linalg.solve(R, np.eye(p))
    # (X^T X)^-1 = R^-1 R^-T, so its diagonal is the row-wise squared norm of R^-1
    se = np.sqrt(s2 * np.sum(r_inv * r_inv, axis=1))
    return beta, se


@dataclass
class RegressionTable:
    terms: tuple
    coefficients: np.ndarray
    standard_errors: np.ndarray
    n_points: int

    def __getitem__(self, term: str) -> tuple[float, float]:
        i = self.terms.index(term)
        return float(self.coefficients[i]), float(self.standard_errors[i])


def regression_by_type(rows: Sequence[ScoreRow], flags: Mapping[str, ImageFlags]) -> RegressionTable:
    """Regress scores on [intercept, abnormal, parenchymal, pleural, cardiomediastinal].

    One regression point per score row, so each image contributes once per fold.
    """
    if not rows:
        raise ValueError("no score rows to regress")
    X = np.array([[1.0, *map(float, flags[r.image_id])] for r in rows])
    y = np.array([r.value for r in rows])
    beta, se = ols(X, y)
    return RegressionTable(REGRESSION_TERMS, beta, se, len(rows))


def certainty_entropy(p: float) -> float:
    """Entropy in bits of a Bernoulli(p) variable."""
    if not 0 < p < 1:
        raise ValueError(f"certainty must lie strictly between 0 and 1, got {p}")
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def ellipse_area_mp(semi_axis_a: float, semi_axis_b: float) -> float:
    if not (semi_axis_a > 0 and semi_axis_b > 0):
        raise ValueError("ellipse semi-axes must be > 0")
    return math.pi * semi_axis_a * semi_axis_b / 1e6


@dataclass
class EllipseStats:
    name: str
    count: int
    mean_area_mp: Optional[float] = None
    sd_area_mp: Optional[float] = None
    mean_entropy: Optional[float] = None
    sd_entropy: Optional[float] = None


def _stats(name: str, ellipses: Sequence[Ellipse]) -> EllipseStats:
    if not ellipses:
        return EllipseStats(name, 0)
    areas = np.array([ellipse_area_mp(e.semi_axis_a, e.semi_axis_b) for e in ellipses])
    ents = np.array([certainty_entropy(e.certainty) for e in ellipses])
    sd = (lambda v: float(np.std(v, ddof=1))) if len(ellipses) > 1 else (lambda v: None)
    return EllipseStats(name, len(ellipses), float(areas.mean()), sd(areas), float(ents.mean()), sd(ents))


def label_statistics(
    all_labels: Sequence[ReaderLabels],
    grouping: TypeGrouping,
    non_abnormal=NON_ABNORMAL_LABELS,
    extra_labels: Iterable[str] = (),
) -> tuple[list[EllipseStats], list[EllipseStats]]:
    """Mean ellipse area and certainty entropy per label and per abnormality type.

    An ellipse carrying several labels counts once for each label but only once
    per type, and once in the "All abnormalities" row. Standard deviations use
    the sample (n - 1) convention. Labels listed in ``extra_labels`` or selected
    without any ellipse are reported with count 0.
    """
    ellipses = [e for r in all_labels for e in r.ellipses]
    names = set(extra_labels)
    for r in all_labels:
        names |= set(r.labels)
    for e in ellipses:
        names |= set(e.labels)
    names = sorted(_abnormal_labels(names, non_abnormal))

    per_label = [_stats(lab, [e for e in ellipses if lab in e.labels]) for lab in names]
    per_type = [_stats("All abnormalities", [e for e in ellipses if _abnormal_labels(e.labels, non_abnormal)])]
    for t in TYPES:
        per_type.append(_stats(t, [e for e in ellipses if any(grouping[lab] == t for lab in e.labels)]))
    return per_label, per_type


@dataclass
class Summary:
    source: str
    metric: str
    n: int
    mean: Optional[float] = None
    sd: Optional[float] = None


def summarize(
    rows: Sequence[ScoreRow],
    group_by: Callable[[ScoreRow], bool] = lambda r: True,
    ddof: int = 0,
    sources: Optional[Sequence[str]] = None,
) -> list[Summary]:
    """Mean and standard deviation per (source, metric) over rows selected by ``group_by``.

    Population SD by default (``ddof=0``) so single-row groups are defined.
    Sources listed in ``sources`` but with no selected rows come back with
    ``n == 0`` and no mean.
    """
    buckets = defaultdict(list)
    for r in rows:
        if group_by(r):
            buckets[(r.source, r.metric)].append(r.value)
    keys = set(buckets)
    if sources is not None:
        keys |= {(s, m) for s in sources for m in METRICS}
    out = []
    for source, metric in sorted(keys, key=lambda k: (k[0], METRICS.index(k[1]))):
        vals = np.array(buckets.get((source, metric), []))
        if vals.size == 0 or vals.size <= ddof:
            out.append(Summary(source, metric, int(vals.size), float(vals.mean()) if vals.size else None))
            continue
        out.append(Summary(source, metric, int(vals.size), float(vals.mean()), float(vals.std(ddof=ddof))))
    return out
