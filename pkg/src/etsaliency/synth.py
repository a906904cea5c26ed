"""Synthetic eye-tracking dataset with a controllable center bias.

Each image gets lungs/heart boxes (a canonical layout moved by a random
scale + translation), a "true saliency" map of a few Gaussian blobs inside the
lungs, and per-reader fixations drawn from
``bias_strength * center_bias + (1 - bias_strength) * true_saliency``.
Two saliency sources are written per image: ``informed`` (the true saliency)
and ``bias`` (the canonical center bias moved onto the image).
"""

from __future__ import annotations

import json
import math
from importlib import resources
from pathlib import Path

import numpy as np

from .analysis import CERTAINTY_LEVELS, Ellipse, ReaderLabels
from .formats import save_boxes, save_fixations, save_heatmap, save_labels
from .heatmap import FixationRecord, Heatmap, normalize_to_distribution
from .metrics import make_rng, sample_locations
from .registration import DiagonalAffine2D, NamedBox, warp_heatmap

# canonical layout as fractions of the image size
CANONICAL_BOXES = {
    "lungs": (0.14, 0.12, 0.86, 0.82),
    "heart": (0.42, 0.44, 0.70, 0.76),
}
# (center x, center y, sigma, weight) in fractions of the image size
CANONICAL_BIAS = [
    (0.32, 0.42, 0.13, 1.0),
    (0.68, 0.42, 0.13, 1.0),
    (0.55, 0.60, 0.10, 0.6),
]
_TYPE_LABELS = {
    "parenchymal": ["Atelectasis", "Consolidation", "Pulmonary edema", "Groundglass opacity"],
    "pleural": ["Pleural effusion", "Pleural abnormality", "Pneumothorax"],
    "cardiomediastinal": ["Enlarged cardiac silhouette", "Enlarged hilum"],
}


def _gauss_image(size: int, blobs) -> np.ndarray:
    c = np.arange(size) + 0.5
    out = np.zeros((size, size))
    for cx, cy, sigma, weight in blobs:
        gx = np.exp(-0.5 * ((c - cx) / sigma) ** 2)
        gy = np.exp(-0.5 * ((c - cy) / sigma) ** 2)
        out += weight * np.outer(gy, gx)
    return out


def canonical_boxes(size: int) -> list[NamedBox]:
    return [NamedBox(n, *(f * size for f in fr)) for n, fr in CANONICAL_BOXES.items()]


def canonical_bias(size: int) -> Heatmap:
    blobs = [(x * size, y * size, s * size, w) for x, y, s, w in CANONICAL_BIAS]
    return Heatmap(_gauss_image(size, blobs))


def _lung_mask(boxes: dict, size: int) -> Heatmap:
    lungs = boxes["lungs"]
    w, h = lungs.x_max - lungs.x_min, lungs.y_max - lungs.y_min
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    mask = np.zeros((size, size), dtype=bool)
    for fx in (0.27, 0.73):
        cx, cy = lungs.x_min + fx * w, lungs.y_min + 0.5 * h
        ax, ay = 0.2 * w, 0.42 * h
        mask |= ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 <= 1.0
    return Heatmap(mask.astype(np.float64))


def _sample_points(dist: Heatmap, n: int, rng: np.random.Generator) -> np.ndarray:
    idx = sample_locations(dist, n, rng)
    rows, cols = np.divmod(idx, dist.width)
    # continuous position, uniformly inside the sampled pixel
    jitter = rng.random((n, 2))
    return np.column_stack([cols + jitter[:, 0], rows + jitter[:, 1]])


def synth_dataset(
    out_dir,
    n_images: int,
    n_readers: int,
    bias_strength: float,
    seed: int,
    size: int = 128,
    fixations_per_reader: int = 40,
) -> Path:
    """Write a synthetic dataset under ``out_dir`` and return the manifest path."""
    if n_images < 2 or n_readers < 2:
        raise ValueError("need at least 2 images and 2 readers")
    if not 0.0 <= bias_strength <= 1.0:
        raise ValueError("bias_strength must be in [0, 1]")
    out = Path(out_dir)
    for sub in ("fixations", "boxes", "sources", "masks"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    rng = make_rng(seed)
    canon_boxes = canonical_boxes(size)
    canon_bias = canonical_bias(size)
    ppd = 0.03 * size
    images, all_labels = [], []

    for i in range(n_images):
        image_id = f"img{i:03d}"
        t = DiagonalAffine2D(
            rng.uniform(0.88, 1.05), rng.uniform(0.88, 1.05),
            rng.uniform(-0.05, 0.05) * size, rng.uniform(-0.05, 0.05) * size,
        )
        boxes = [t.apply_box(b) for b in canon_boxes]
        by_name = {b.name: b for b in boxes}
        lungs = by_name["lungs"]

        blobs = []
        for _ in range(int(rng.integers(1, 4))):
            cx = rng.uniform(lungs.x_min + 0.1 * size, lungs.x_max - 0.1 * size)
            cy = rng.uniform(lungs.y_min + 0.1 * size, lungs.y_max - 0.1 * size)
            blobs.append((cx, cy, rng.uniform(0.035, 0.06) * size, rng.uniform(0.5, 1.0)))
        informed = Heatmap(_gauss_image(size, blobs))
        bias = warp_heatmap(canon_bias, t, size, size)
        sal_dist = normalize_to_distribution(informed)
        bias_dist = normalize_to_distribution(bias)

        fixation_paths = {}
        for r in range(n_readers):
            reader_id = f"r{r}"
            n_fix = fixations_per_reader + int(rng.integers(-10, 11))
            from_bias = rng.random(n_fix) < bias_strength
            pts = np.empty((n_fix, 2))
            nb = int(from_bias.sum())
            if nb:
                pts[from_bias] = _sample_points(bias_dist, nb, rng)
            if n_fix - nb:
                pts[~from_bias] = _sample_points(sal_dist, n_fix - nb, rng)
            durations = rng.lognormal(math.log(0.25), 0.5, n_fix)
            rows = [
                (image_id, reader_id, FixationRecord(float(x), float(y), float(d)))
                for (x, y), d in zip(pts, durations)
            ]
            rel = f"fixations/{image_id}_{reader_id}.csv"
            save_fixations(out / rel, rows)
            fixation_paths[reader_id] = rel

        save_boxes(out / f"boxes/{image_id}.json", image_id, boxes)
        save_heatmap(out / f"sources/{image_id}_informed.hmap", informed)
        save_heatmap(out / f"sources/{image_id}_bias.hmap", bias)
        save_heatmap(out / f"masks/{image_id}.hmap", _lung_mask(by_name, size))
        all_labels.extend(_reader_labels(rng, image_id, n_readers, blobs))

        images.append(
            {
                "image_id": image_id,
                "width": size,
                "height": size,
                "fixations": fixation_paths,
                "boxes": f"boxes/{image_id}.json",
                "mask": f"masks/{image_id}.hmap",
                "sources": {
                    "informed": f"sources/{image_id}_informed.hmap",
                    "bias": f"sources/{image_id}_bias.hmap",
                },
            }
        )

    save_labels(out / "labels.csv", all_labels)
    (out / "grouping.csv").write_text(resources.files("etsaliency").joinpath("data/grouping.csv").read_text())
    manifest = {"pixels_per_degree": ppd, "labels": "labels.csv", "images": images}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _reader_labels(rng: np.random.Generator, image_id: str, n_readers: int, blobs) -> list[ReaderLabels]:
    """Readers agree noisily on a per-image set of abnormality types."""
    types = list(_TYPE_LABELS)
    present = [t for t in types if rng.random() < 0.45]
    out = []
    for r in range(n_readers):
        labels, ellipses = set(), []
        for t in present:
            if rng.random() < 0.8:
                lab = _TYPE_LABELS[t][int(rng.integers(len(_TYPE_LABELS[t])))]
                labels.add(lab)
                _, _, sigma, _ = blobs[int(rng.integers(len(blobs)))]
                certainty = CERTAINTY_LEVELS[int(rng.integers(len(CERTAINTY_LEVELS)))]
                ellipses.append(Ellipse(frozenset({lab}), certainty, 2 * sigma * rng.uniform(0.8, 1.5), 2 * sigma))
        if not present and rng.random() < 0.1:
            labels.add("Quality issue")
        out.append(ReaderLabels(image_id, f"r{r}", frozenset(labels), tuple(ellipses)))
    return out
