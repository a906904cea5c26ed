"""Readers and writers for the on-disk formats.

Binary containers (all little-endian):

* HMAP: ``b"HMAP"``, u16 version, u32 width, u32 height, then width*height
  float32 values in row-major order.
* TNSR: ``b"TNSR"``, u16 version, u8 rank, rank x u32 dims, then float32
  values in row-major order.

Text formats are CSV with a header row, plus a small JSON document for boxes.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .analysis import Ellipse, ReaderLabels, ScoreRow
from .heatmap import FixationRecord, Heatmap
from .registration import NamedBox

HMAP_MAGIC = b"HMAP"
TNSR_MAGIC = b"TNSR"
FORMAT_VERSION = 1
_F32 = np.dtype("<f4")

FIXATION_COLUMNS = ("image_id", "reader_id", "x_px", "y_px", "duration_s")
FIXATION_OPTIONAL = ("sigma_px",)
LABEL_COLUMNS = ("image_id", "reader_id", "label")
LABEL_OPTIONAL = ("ellipse_id", "certainty", "semi_axis_a_px", "semi_axis_b_px")
SCORE_COLUMNS = ("image_id", "fold_reader_id", "source", "metric", "value")


class FormatError(ValueError):
    """A file does not follow its declared format."""

    def __init__(self, path, message, offset=None, line=None):
        self.path = str(path)
        self.offset = offset
        self.line = line
        where = ""
        if offset is not None:
            where = f" at byte {offset}"
        elif line is not None:
            where = f" at line {line}"
        super().__init__(f"{self.path}{where}: {message}")


class MagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class TrailingDataError(FormatError):
    pass


class NonFiniteError(FormatError):
    pass


class MissingColumnError(FormatError):
    pass


class ExtraColumnError(FormatError):
    pass


class RowValidationError(FormatError):
    pass


def _f32_payload(values: np.ndarray, what: str) -> bytes:
    with np.errstate(over="ignore"):
        arr = np.ascontiguousarray(values, dtype=_F32)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} has values that are not finite as float32")
    return arr.tobytes()


def _read_payload(path, data: bytes, offset: int, count: int) -> np.ndarray:
    need = offset + 4 * count
    if len(data) < need:
        raise TruncatedError(path, f"payload needs {4 * count} bytes, file ends early", offset=len(data))
    if len(data) > need:
        raise TrailingDataError(path, f"{len(data) - need} unexpected trailing bytes", offset=need)
    arr = np.frombuffer(data, dtype=_F32, count=count, offset=offset)
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        raise NonFiniteError(path, "non-finite value in payload", offset=offset + 4 * int(bad[0]))
    return arr


def _check_magic(path, data: bytes, magic: bytes, header_len: int) -> None:
    if data[:4] != magic:
        raise MagicError(path, f"bad magic {data[:4]!r}, expected {magic!r}", offset=0)
    if len(data) < header_len:
        raise TruncatedError(path, "header is truncated", offset=len(data))


def heatmap_to_bytes(hmap: Heatmap) -> bytes:
    header = HMAP_MAGIC + struct.pack("<HII", FORMAT_VERSION, hmap.width, hmap.height)
    return header + _f32_payload(hmap.values, "heatmap")


def heatmap_from_bytes(data: bytes, path="<bytes>") -> Heatmap:
    _check_magic(path, data, HMAP_MAGIC, 14)
    version, width, height = struct.unpack_from("<HII", data, 4)
    if version != FORMAT_VERSION:
        raise VersionError(path, f"unsupported HMAP version {version}", offset=4)
    if width < 1 or height < 1:
        raise FormatError(path, f"invalid dimensions {width}x{height}", offset=6)
    arr = _read_payload(path, data, 14, width * height)
    return Heatmap(arr.astype(np.float64).reshape(height, width))


def save_heatmap(path, hmap: Heatmap) -> None:
    Path(path).write_bytes(heatmap_to_bytes(hmap))


def load_heatmap(path) -> Heatmap:
    return heatmap_from_bytes(Path(path).read_bytes(), path)


def tensor_to_bytes(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.ndim < 1 or arr.ndim > 255:
        raise ValueError(f"tensor rank must be in [1, 255], got {arr.ndim}")
    header = TNSR_MAGIC + struct.pack("<HB", FORMAT_VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + _f32_payload(arr, "tensor")


def tensor_from_bytes(data: bytes, path="<bytes>") -> np.ndarray:
    _check_magic(path, data, TNSR_MAGIC, 7)
    version, rank = struct.unpack_from("<HB", data, 4)
    if version != FORMAT_VERSION:
        raise VersionError(path, f"unsupported TNSR version {version}", offset=4)
    if rank < 1:
        raise FormatError(path, "tensor rank must be >= 1", offset=6)
    if len(data) < 7 + 4 * rank:
        raise TruncatedError(path, "dimension list is truncated", offset=len(data))
    dims = struct.unpack_from(f"<{rank}I", data, 7)
    arr = _read_payload(path, data, 7 + 4 * rank, int(np.prod(dims, dtype=np.int64)))
    return arr.reshape(dims)


def save_tensor(path, arr) -> None:
    Path(path).write_bytes(tensor_to_bytes(arr))


def load_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes(), path)


def fmt_float(x: float) -> str:
    # shortest repr that round-trips exactly
    return repr(float(x))


def _open_csv(path, required: Sequence[str], optional: Sequence[str], lax: bool):
    fh = open(path, newline="")
    reader = csv.DictReader(fh)
    header = reader.fieldnames or []
    missing = [c for c in required if c not in header]
    if missing:
        fh.close()
        raise MissingColumnError(path, f"missing columns {missing}", line=1)
    extra = [c for c in header if c not in required and c not in optional]
    if extra and not lax:
        fh.close()
        raise ExtraColumnError(path, f"unexpected columns {extra}", line=1)
    return fh, reader


def _parse_float(path, line: int, name: str, text: Optional[str]) -> float:
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise RowValidationError(path, f"column {name}: {text!r} is not a number", line=line) from None
    if not math.isfinite(value):
        raise RowValidationError(path, f"column {name}: value must be finite", line=line)
    return value


def load_fixations(path, lax: bool = False) -> list[tuple[str, str, FixationRecord]]:
    """Rows of (image_id, reader_id, fixation)."""
    fh, reader = _open_csv(path, FIXATION_COLUMNS, FIXATION_OPTIONAL, lax)
    out = []
    with fh:
        for row in reader:
            line = reader.line_num
            x = _parse_float(path, line, "x_px", row["x_px"])
            y = _parse_float(path, line, "y_px", row["y_px"])
            dur = _parse_float(path, line, "duration_s", row["duration_s"])
            sigma_text = (row.get("sigma_px") or "").strip()
            sigma = _parse_float(path, line, "sigma_px", sigma_text) if sigma_text else None
            try:
                fix = FixationRecord(x, y, dur, sigma)
            except ValueError as exc:
                raise RowValidationError(path, str(exc), line=line) from None
            out.append((row["image_id"], row["reader_id"], fix))
    return out


def save_fixations(path, rows: Iterable[tuple[str, str, FixationRecord]]) -> None:
    rows = list(rows)
    with_sigma = any(f.sigma_px is not None for _, _, f in rows)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIXATION_COLUMNS + (FIXATION_OPTIONAL if with_sigma else ()))
        for image_id, reader_id, f in rows:
            rec = [image_id, reader_id, fmt_float(f.x), fmt_float(f.y), fmt_float(f.duration)]
            if with_sigma:
                rec.append("" if f.sigma_px is None else fmt_float(f.sigma_px))
            w.writerow(rec)


def boxes_to_json(image_id: str, boxes: Sequence[NamedBox]) -> dict:
    return {
        "image_id": image_id,
        "boxes": [
            {"name": b.name, "x_min": b.x_min, "y_min": b.y_min, "x_max": b.x_max, "y_max": b.y_max}
            for b in boxes
        ],
    }


def save_boxes(path, image_id: str, boxes: Sequence[NamedBox]) -> None:
    Path(path).write_text(json.dumps(boxes_to_json(image_id, boxes), indent=2) + "\n")


def load_boxes(path) -> tuple[str, list[NamedBox]]:
    try:
        doc = json.loads(Path(path).read_text())
        boxes = [
            NamedBox(str(b["name"]), float(b["x_min"]), float(b["y_min"]), float(b["x_max"]), float(b["y_max"]))
            for b in doc["boxes"]
        ]
        return str(doc["image_id"]), boxes
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError(path, f"malformed boxes JSON ({exc})") from None
    except ValueError as exc:
        raise FormatError(path, str(exc)) from None


def load_labels(path, lax: bool = False) -> list[ReaderLabels]:
    """Reader label selections, one row per (reader, label[, ellipse]).

    Rows sharing (image_id, reader_id, ellipse_id) describe a single ellipse
    that carries several labels. An empty ``label`` records a reader who
    selected nothing.
    """
    fh, reader = _open_csv(path, LABEL_COLUMNS, LABEL_OPTIONAL, lax)
    labels: "OrderedDict[tuple, set]" = OrderedDict()
    ellipses: "OrderedDict[tuple, dict]" = OrderedDict()
    with fh:
        for row in reader:
            line = reader.line_num
            key = (row["image_id"], row["reader_id"])
            labels.setdefault(key, set())
            label = (row["label"] or "").strip()
            if label:
                labels[key].add(label)
            eid = (row.get("ellipse_id") or "").strip()
            if not eid:
                continue
            if not label:
                raise RowValidationError(path, "ellipse row without a label", line=line)
            geom = tuple(
                _parse_float(path, line, c, row.get(c)) for c in ("certainty", "semi_axis_a_px", "semi_axis_b_px")
            )
            ekey = key + (eid,)
            entry = ellipses.setdefault(ekey, {"geom": geom, "labels": set(), "line": line})
            if entry["geom"] != geom:
                raise RowValidationError(path, f"ellipse {eid!r} has inconsistent geometry", line=line)
            entry["labels"].add(label)

    per_reader: dict = {k: [] for k in labels}
    for (image_id, reader_id, _), entry in ellipses.items():
        try:
            e = Ellipse(frozenset(entry["labels"]), *entry["geom"])
        except ValueError as exc:
            raise RowValidationError(path, str(exc), line=entry["line"]) from None
        per_reader[(image_id, reader_id)].append(e)
    return [ReaderLabels(i, r, frozenset(labs), tuple(per_reader[(i, r)])) for (i, r), labs in labels.items()]


def save_labels(path, all_labels: Sequence[ReaderLabels]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_COLUMNS + LABEL_OPTIONAL)
        for r in all_labels:
            in_ellipse = set()
            for k, e in enumerate(r.ellipses):
                for lab in sorted(e.labels):
                    in_ellipse.add(lab)
                    w.writerow(
                        [r.image_id, r.reader_id, lab, f"e{k}", fmt_float(e.certainty),
                         fmt_float(e.semi_axis_a), fmt_float(e.semi_axis_b)]
                    )
            rest = sorted(set(r.labels) - in_ellipse)
            if not rest and not r.ellipses:
                rest = [""]
            for lab in rest:
                w.writerow([r.image_id, r.reader_id, lab, "", "", "", ""])


def save_scores(path, rows: Sequence[ScoreRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_COLUMNS)
        for r in rows:
            w.writerow([r.image_id, r.fold_reader_id, r.source, r.metric, fmt_float(r.value)])


def load_scores(path) -> list[ScoreRow]:
    fh, reader = _open_csv(path, SCORE_COLUMNS, (), False)
    out = []
    with fh:
        for row in reader:
            line = reader.line_num
            value = _parse_float(path, line, "value", row["value"])
            try:
                out.append(ScoreRow(row["image_id"], row["fold_reader_id"], row["source"], row["metric"], value))
            except ValueError as exc:
                raise RowValidationError(path, str(exc), line=line) from None
    return out


def write_pgm(path, hmap: Heatmap) -> None:
    """16-bit binary PGM, min-max scaled to [0, 65535]; a constant map becomes all zeros."""
    v = hmap.values
    lo, hi = float(v.min()), float(v.max())
    if hi > lo:
        scaled = np.rint((v - lo) / (hi - lo) * 65535.0)
    else:
        scaled = np.zeros_like(v)
    header = f"P5\n{hmap.width} {hmap.height}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + scaled.astype(">u2").tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 PGM written by :func:`write_pgm` (no comments)."""
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise MagicError(path, "not a binary P5 PGM", offset=0)
    width, height, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    dtype = ">u2" if maxval > 255 else "u1"
    offset = len(data) - width * height * np.dtype(dtype).itemsize
    return np.frombuffer(data, dtype=dtype, offset=offset).reshape(height, width)
