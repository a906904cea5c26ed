"""Dataset manifest and the end-to-end steps behind the CLI.

Manifest JSON layout (paths are relative to the manifest file)::

    {
      "pixels_per_degree": 4.0,             # optional
      "labels": "labels.csv",               # optional
      "images": [
        {
          "image_id": "img000", "width": 128, "height": 128,
          "fixations": {"r0": "fixations/img000_r0.csv", ...},
          "boxes": "boxes/img000.json",
          "mask": "masks/img000.hmap",       # optional
          "sources": {                       # optional
            "informed": "sources/img000_informed.hmap",
            "wag_uniform": {"bundle": "bundles/img000.json", "scheme": "uniform"}
          }
        }
      ]
    }
"""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import analysis
from .analysis import ReaderLabels, ScoreRow, TypeGrouping
from .baselines import BinaryMask, convex_hull_mask, leave_one_out_folds
from .formats import FormatError, load_boxes, load_fixations, load_heatmap, load_tensor
from .gradcam import GradCamBundle, saliency_from_bundle
from .heatmap import EtMapConfig, Heatmap, render_et_map
from .metrics import SEED_MASK, SamplerSpec, evaluate_image
from .registration import NamedBox, compute_center_bias, project_center_bias, resize_heatmap

log = logging.getLogger(__name__)

INTEROBSERVER = "interobserver"
SEGMENTATION = "segmentation"
BASELINE_SOURCES = (INTEROBSERVER, SEGMENTATION)


@dataclass
class ImageEntry:
    image_id: str
    width: int
    height: int
    fixations: dict
    boxes: Path
    mask: Optional[Path] = None
    sources: dict = field(default_factory=dict)


@dataclass
class Manifest:
    path: Path
    images: list
    pixels_per_degree: Optional[float] = None
    labels: Optional[Path] = None

    def image(self, image_id: str) -> ImageEntry:
        for e in self.images:
            if e.image_id == image_id:
                return e
        raise KeyError(image_id)


def _resolve(base: Path, rel, manifest_path) -> Path:
    p = (base / rel).resolve()
    if not p.exists():
        raise FormatError(manifest_path, f"referenced file does not exist: {rel}")
    return p


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(path, f"invalid JSON ({exc})") from None
    base = path.parent
    images, seen = [], set()
    try:
        for item in doc["images"]:
            image_id = str(item["image_id"])
            if image_id in seen:
                raise FormatError(path, f"duplicate image_id {image_id!r}")
            seen.add(image_id)
            sources = {}
            for name, ref in item.get("sources", {}).items():
                if isinstance(ref, str):
                    sources[name] = _resolve(base, ref, path)
                else:
                    sources[name] = {"bundle": _resolve(base, ref["bundle"], path), "scheme": ref["scheme"]}
            images.append(
                ImageEntry(
                    image_id=image_id,
                    width=int(item["width"]),
                    height=int(item["height"]),
                    fixations={str(r): _resolve(base, p, path) for r, p in item["fixations"].items()},
                    boxes=_resolve(base, item["boxes"], path),
                    mask=_resolve(base, item["mask"], path) if item.get("mask") else None,
                    sources=sources,
                )
            )
    except (KeyError, TypeError) as exc:
        raise FormatError(path, f"malformed manifest, missing or invalid field {exc}") from None
    ppd = doc.get("pixels_per_degree")
    labels = _resolve(base, doc["labels"], path) if doc.get("labels") else None
    return Manifest(path, images, float(ppd) if ppd is not None else None, labels)


def et_config(manifest: Manifest, pixels_per_degree: Optional[float] = None) -> EtMapConfig:
    ppd = pixels_per_degree or manifest.pixels_per_degree
    return EtMapConfig(pixels_per_degree=ppd) if ppd else EtMapConfig()


def parallel_map(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def reader_et_maps(entry: ImageEntry, config: EtMapConfig, lax: bool = False) -> list[tuple[str, Heatmap]]:
    """One ET map per reader, ordered by reader id."""
    out = []
    for reader_id in sorted(entry.fixations):
        path = entry.fixations[reader_id]
        fixes = [f for i, r, f in load_fixations(path, lax) if i == entry.image_id and r == reader_id]
        if not fixes:
            raise FormatError(path, f"no fixations for image {entry.image_id!r}, reader {reader_id!r}")
        try:
            out.append((reader_id, render_et_map(fixes, entry.width, entry.height, config)))
        except ValueError as exc:
            raise FormatError(path, str(exc)) from None
    return out


def image_boxes(entry: ImageEntry) -> list[NamedBox]:
    return load_boxes(entry.boxes)[1]


def default_reference_dims(manifest: Manifest) -> tuple[int, int]:
    w = np.mean([e.width for e in manifest.images])
    h = np.mean([e.height for e in manifest.images])
    return int(round(w)), int(round(h))


def build_center_bias(
    manifest: Manifest,
    reference_dims: Optional[tuple[int, int]] = None,
    config: Optional[EtMapConfig] = None,
    lax: bool = False,
    jobs: int = 1,
) -> tuple[Heatmap, list[NamedBox]]:
    """Center bias from every reading (one ET map per reader per image)."""
    config = config or et_config(manifest)
    reference_dims = reference_dims or default_reference_dims(manifest)

    def per_image(entry):
        boxes = image_boxes(entry)
        return [(m, boxes) for _, m in reader_et_maps(entry, config, lax)]

    pairs = [p for chunk in parallel_map(per_image, manifest.images, jobs) for p in chunk]
    return compute_center_bias(pairs, reference_dims)


def load_source_map(entry: ImageEntry, name: str) -> Heatmap:
    ref = entry.sources[name]
    if isinstance(ref, dict):
        return saliency_from_bundle(load_bundle(ref["bundle"]), ref["scheme"])
    return load_heatmap(ref)


def load_bundle(path) -> GradCamBundle:
    """Grad-CAM inputs described by a small JSON file next to its tensors.

    Keys: ``lsfm`` and ``grads`` (TNSR paths), ``logits`` (list or TNSR path),
    optional ``class_names`` and ``no_finding`` (name or index).
    """
    path = Path(path)
    base = path.parent
    try:
        doc = json.loads(path.read_text())
        lsfm = load_tensor(base / doc["lsfm"])
        grads = load_tensor(base / doc["grads"])
        logits = doc["logits"]
        logits = load_tensor(base / logits) if isinstance(logits, str) else np.asarray(logits, dtype=np.float64)
        names = tuple(doc.get("class_names", ()))
        nf = doc.get("no_finding", 0)
        if isinstance(nf, str):
            if nf not in names:
                raise FormatError(path, f"no_finding label {nf!r} is not among class_names")
            nf = names.index(nf)
        return GradCamBundle(lsfm, grads, logits, names, int(nf))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError(path, f"malformed bundle JSON ({exc})") from None
    except FormatError:
        raise
    except ValueError as exc:
        raise FormatError(path, str(exc)) from None


def fold_seed(base_seed: int, index: int) -> int:
    # each (image, fold) pair consumes three consecutive sub-seeds
    return (int(base_seed) + 3 * index) & SEED_MASK


def evaluate_dataset(
    manifest: Manifest,
    cb: Heatmap,
    reference_boxes: Sequence[NamedBox],
    sources: Sequence[str],
    seed: int = 0,
    n_samples: int = 1000,
    config: Optional[EtMapConfig] = None,
    lax: bool = False,
    jobs: int = 1,
) -> list[ScoreRow]:
    """Score every source against every leave-one-reader-out ground truth.

    Rows come back sorted by (image_id, fold reader, source, metric). The
    sampling seed depends only on the (image, fold) position, so all sources
    are scored on the same sampled locations.
    """
    config = config or et_config(manifest)
    entries = sorted(manifest.images, key=lambda e: e.image_id)
    offsets, k = [], 0
    for e in entries:
        offsets.append(k)
        k += len(e.fixations)

    def per_image(args):
        entry, offset = args
        reader_maps = reader_et_maps(entry, config, lax)
        dims = (entry.width, entry.height)
        cb_img = project_center_bias(cb, reference_boxes, image_boxes(entry), dims)
        fixed = {}
        for name in sources:
            if name == INTEROBSERVER:
                continue
            if name == SEGMENTATION:
                if entry.mask is None:
                    raise FormatError(manifest.path, f"image {entry.image_id!r} has no mask for the segmentation baseline")
                sm = convex_hull_mask(BinaryMask.from_heatmap(load_heatmap(entry.mask)))
            elif name in entry.sources:
                sm = load_source_map(entry, name)
            else:
                raise FormatError(manifest.path, f"image {entry.image_id!r} has no source {name!r}")
            if sm.shape != (entry.height, entry.width):
                sm = resize_heatmap(sm, entry.width, entry.height)
            fixed[name] = sm

        rows = []
        for j, fold in enumerate(leave_one_out_folds(reader_maps, entry.image_id)):
            spec = SamplerSpec(n_samples, n_samples, fold_seed(seed, offset + j))
            for name in sources:
                sm = fold.candidate if name == INTEROBSERVER else fixed[name]
                scores = evaluate_image(fold.gt, sm, cb_img, spec)
                for metric, value in scores._asdict().items():
                    rows.append(ScoreRow(entry.image_id, fold.held_out_reader, name, metric, float(value)))
        return rows

    chunks = parallel_map(per_image, list(zip(entries, offsets)), jobs)
    rows = [r for chunk in chunks for r in chunk]
    order = {m: i for i, m in enumerate(analysis.METRICS)}
    rows.sort(key=lambda r: (r.image_id, r.fold_reader_id, r.source, order[r.metric]))
    return rows


def flags_by_image(
    labels: Sequence[ReaderLabels], grouping: TypeGrouping, rows: Iterable[ScoreRow] = ()
) -> dict[str, analysis.ImageFlags]:
    """Per-image abnormal/type flags.

    Readers that appear in the scores but not in the labels count as readers
    who selected nothing.
    """
    by_image: dict = defaultdict(dict)
    for r in labels:
        by_image[r.image_id][r.reader_id] = r
    for row in rows:
        by_image[row.image_id].setdefault(row.fold_reader_id, ReaderLabels(row.image_id, row.fold_reader_id))
    return {img: analysis.image_flags(list(readers.values()), grouping) for img, readers in by_image.items()}


@dataclass
class AnalysisTables:
    overall: list
    by_normality: list  # (split, Summary)
    regression: list  # (source, metric, RegressionTable)
    label_stats: list
    type_stats: list
    skipped_regressions: list = field(default_factory=list)


def analyze_scores(
    rows: Sequence[ScoreRow], labels: Sequence[ReaderLabels], grouping: TypeGrouping, ddof: int = 0
) -> AnalysisTables:
    flags = flags_by_image(labels, grouping, rows)
    overall = analysis.summarize(rows, ddof=ddof)
    sources = sorted({r.source for r in rows})
    by_norm = []
    for split, want in (("normal", False), ("abnormal", True)):
        for s in analysis.summarize(rows, lambda r: flags[r.image_id].abnormal == want, ddof, sources):
            by_norm.append((split, s))

    regression, skipped = [], []
    grouped = defaultdict(list)
    for r in rows:
        grouped[(r.source, r.metric)].append(r)
    for (source, metric), subset in sorted(grouped.items()):
        try:
            regression.append((source, metric, analysis.regression_by_type(subset, flags)))
        except ValueError as exc:
            log.warning("skipping regression for %s/%s: %s", source, metric, exc)
            skipped.append((source, metric, str(exc)))

    label_stats, type_stats = analysis.label_statistics(labels, grouping)
    return AnalysisTables(overall, by_norm, regression, label_stats, type_stats, skipped)
