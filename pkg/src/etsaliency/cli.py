"""Command-line entry point: ``etsaliency <subcommand> ...``.

On failure every subcommand exits with status 1 and prints one line to
stderr of the form ``error: <ErrorType>: <message>``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import pipeline
from .analysis import TypeGrouping
from .baselines import BinaryMask, convex_hull_mask
from .formats import (
    fmt_float,
    load_boxes,
    load_heatmap,
    load_labels,
    load_scores,
    save_boxes,
    save_heatmap,
    save_scores,
    write_pgm,
)
from .gradcam import SCHEMES, saliency_from_bundle
from .synth import synth_dataset


def _dims(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        w, h = int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("dimensions must be positive")
    return w, h


def _boxes_path_for(cb_path: Path) -> Path:
    return cb_path.with_name(cb_path.name + ".boxes.json")


def cmd_render_etmaps(args):
    manifest = pipeline.load_manifest(args.manifest)
    config = pipeline.et_config(manifest, args.pixels_per_degree)
    out = Path(args.out)

    def render(entry):
        return entry.image_id, pipeline.reader_et_maps(entry, config, args.lax)

    for image_id, maps in pipeline.parallel_map(render, manifest.images, args.jobs):
        (out / image_id).mkdir(parents=True, exist_ok=True)
        for reader_id, hmap in maps:
            save_heatmap(out / image_id / f"{reader_id}.hmap", hmap)


def cmd_center_bias(args):
    manifest = pipeline.load_manifest(args.manifest)
    config = pipeline.et_config(manifest, args.pixels_per_degree)
    cb, boxes = pipeline.build_center_bias(manifest, args.ref_dims, config, args.lax, args.jobs)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_heatmap(out, cb)
    save_boxes(args.boxes_out or _boxes_path_for(out), "reference", boxes)


def cmd_combine_gradcam(args):
    bundle = pipeline.load_bundle(args.bundle)
    save_heatmap(args.out, saliency_from_bundle(bundle, args.scheme))


def cmd_evaluate(args):
    manifest = pipeline.load_manifest(args.manifest)
    config = pipeline.et_config(manifest, args.pixels_per_degree)
    cb = load_heatmap(args.cb)
    _, ref_boxes = load_boxes(args.cb_boxes or _boxes_path_for(Path(args.cb)))
    sources = [s.strip() for s in args.sources.split(",") if s.strip()]
    rows = pipeline.evaluate_dataset(
        manifest, cb, ref_boxes, sources, args.seed, args.samples, config, args.lax, args.jobs
    )
    save_scores(args.out, rows)


def cmd_baseline_seg(args):
    manifest = pipeline.load_manifest(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for entry in manifest.images:
        if entry.mask is None:
            continue
        hull = convex_hull_mask(BinaryMask.from_heatmap(load_heatmap(entry.mask)))
        save_heatmap(out / f"{entry.image_id}.hmap", hull)


def _opt(x):
    return "" if x is None else fmt_float(x)


def write_tables(tables: pipeline.AnalysisTables, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "table1_scores.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "metric", "n", "mean", "sd"])
        for s in tables.overall:
            w.writerow([s.source, s.metric, s.n, _opt(s.mean), _opt(s.sd)])
    with open(out / "table2_normal_abnormal.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "split", "source", "n", "mean", "sd"])
        for split, s in sorted(tables.by_normality, key=lambda x: (x[1].metric, x[0], x[1].source)):
            w.writerow([s.metric, split, s.source, s.n, _opt(s.mean), _opt(s.sd)])
    with open(out / "table3_regression.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "source", "term", "coefficient", "standard_error", "n_points"])
        for source, metric, table in tables.regression:
            for term in table.terms:
                beta, se = table[term]
                w.writerow([metric, source, term, fmt_float(beta), fmt_float(se), table.n_points])
    for name, stats in (("label_statistics.csv", tables.label_stats), ("type_statistics.csv", tables.type_stats)):
        with open(out / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["name", "count", "mean_area_mp", "sd_area_mp", "mean_entropy", "sd_entropy"])
            for s in stats:
                w.writerow([s.name, s.count, _opt(s.mean_area_mp), _opt(s.sd_area_mp),
                            _opt(s.mean_entropy), _opt(s.sd_entropy)])


def cmd_analyze(args):
    rows = load_scores(args.scores)
    labels = load_labels(args.labels, args.lax) if args.labels else []
    grouping = TypeGrouping.from_csv(args.grouping) if args.grouping else TypeGrouping.default()
    tables = pipeline.analyze_scores(rows, labels, grouping, ddof=1 if args.sample_sd else 0)
    write_tables(tables, Path(args.out))


def cmd_synth(args):
    synth_dataset(args.out, args.images, args.readers, args.bias_strength, args.seed, args.size, args.fixations)


def cmd_export_pgm(args):
    write_pgm(args.out, load_heatmap(args.in_path))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="etsaliency", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def manifest_cmd(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--manifest", required=True)
        sp.add_argument("--pixels-per-degree", type=float, default=None)
        sp.add_argument("--lax", action="store_true", help="tolerate extra CSV columns")
        sp.add_argument("--jobs", type=int, default=1)
        return sp

    sp = manifest_cmd("render-etmaps", "render one ET map per reading")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_render_etmaps)

    sp = manifest_cmd("center-bias", "register ET maps by their boxes and average them")
    sp.add_argument("--out", required=True)
    sp.add_argument("--ref-dims", type=_dims, default=None, help="WxH; default: rounded mean image size")
    sp.add_argument("--boxes-out", default=None, help="default: <out>.boxes.json")
    sp.set_defaults(func=cmd_center_bias)

    sp = sub.add_parser("combine-gradcam", help="Grad-CAM per class, then mix classes into one map")
    sp.add_argument("--bundle", required=True, help="bundle JSON referencing LSFM/gradient tensors")
    sp.add_argument("--scheme", choices=SCHEMES, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_combine_gradcam)

    sp = manifest_cmd("evaluate", "score saliency sources against leave-one-reader-out ground truths")
    sp.add_argument("--cb", required=True)
    sp.add_argument("--cb-boxes", default=None, help="default: <cb>.boxes.json")
    sp.add_argument("--sources", required=True, help="comma-separated; 'interobserver' and 'segmentation' are built in")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--samples", type=int, default=1000, help="positive and negative locations per AUC")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_evaluate)

    sp = manifest_cmd("baseline-seg", "convex-hull heatmaps from lung masks")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_baseline_seg)

    sp = sub.add_parser("analyze", help="summary, normal/abnormal, regression and label tables")
    sp.add_argument("--scores", required=True)
    sp.add_argument("--labels", default=None)
    sp.add_argument("--grouping", default=None, help="label,group CSV; default: bundled grouping")
    sp.add_argument("--sample-sd", action="store_true", help="use n-1 in summary standard deviations")
    sp.add_argument("--lax", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("synth", help="write a synthetic dataset")
    sp.add_argument("--images", type=int, required=True)
    sp.add_argument("--readers", type=int, required=True)
    sp.add_argument("--bias-strength", type=float, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--size", type=int, default=128)
    sp.add_argument("--fixations", type=int, default=40, help="mean fixations per reading")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("export-pgm", help="16-bit PGM rendering of a heatmap")
    sp.add_argument("--in", dest="in_path", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_export_pgm)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
