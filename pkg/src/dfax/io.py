"""File formats: CSV datasets, attribution files, explainer snapshots, reports, SVG plots.

Text formats write floats with 17 significant digits, which round-trips any
IEEE double exactly.
"""

import csv
import hashlib
import io as _io
import json
import struct
from dataclasses import dataclass

import numpy as np

from dfax.core import Dataset
from dfax.errors import (
    DeserializeError,
    DimensionMismatch,
    HashMismatch,
    InvalidParameter,
    IoError,
    ParseError,
    VersionMismatch,
)
from dfax.explainer import MappedDensity, DfaxExplainer
from dfax.kde import ExactKde1D, FeatureMap1D, GaussianKernelParams, KernelMeanMap1D
from dfax.sinne import SinneModel1D, SinneParams


def fmt(x):
    return format(float(x), ".17g")


# ---------------------------------------------------------------- CSV


@dataclass
class CsvTable:
    rows: np.ndarray
    labels: np.ndarray  # dense ints, or None when there is no label column
    feature_names: list
    label_mapping: dict  # original label text -> dense id
    label_name: str = None


def _label_order(values):
    uniq = sorted(set(values))
    try:
        return sorted(uniq, key=lambda v: (float(v), v))
    except ValueError:
        return uniq


def load_csv(path, label_column=-1, has_header=True, label_mapping=None):
    """Read a comma-delimited numeric table.

    ``label_column`` is a column index, a header name, or ``None`` for no
    labels. Labels are mapped to dense ids in sorted order (numerically when
    every label is a number) unless ``label_mapping`` is supplied.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            records = [r for r in csv.reader(fh)]
    except OSError as err:
        raise IoError(f"cannot read {path}: {err}") from err
    lines = [(i + 1, r) for i, r in enumerate(records) if r and any(c.strip() for c in r)]
    if not lines:
        raise ParseError(f"{path} is empty")
    header = None
    if has_header:
        header = [c.strip() for c in lines[0][1]]
        lines = lines[1:]
    width = len(header) if header else len(lines[0][1]) if lines else 0
    if isinstance(label_column, str):
        if not header or label_column not in header:
            raise ParseError(f"label column {label_column!r} not found in the header of {path}")
        label_idx = header.index(label_column)
    elif label_column is None:
        label_idx = None
    else:
        label_idx = label_column % width
    feat_idx = [j for j in range(width) if j != label_idx]
    names = [header[j] for j in feat_idx] if header else [f"x{j}" for j in range(len(feat_idx))]

    matrix = np.empty((len(lines), len(feat_idx)))
    raw_labels = []
    for r, (lineno, rec) in enumerate(lines):
        if len(rec) != width:
            raise ParseError(f"expected {width} cells, found {len(rec)}", line=lineno)
        for k, j in enumerate(feat_idx):
            cell = rec[j].strip()
            try:
                v = float(cell)
            except ValueError:
                v = float("nan")
            if not np.isfinite(v):
                raise ParseError(f"non-numeric or non-finite feature cell {cell!r}", line=lineno, column=j + 1)
            matrix[r, k] = v
        if label_idx is not None:
            raw_labels.append(rec[label_idx].strip())

    labels = None
    if label_idx is not None:
        if label_mapping is None:
            label_mapping = {v: i for i, v in enumerate(_label_order(raw_labels))}
        try:
            labels = np.array([label_mapping[v] for v in raw_labels], dtype=np.int64)
        except KeyError as err:
            raise ParseError(f"label {err.args[0]!r} is not in the label mapping") from err
    return CsvTable(matrix, labels, names, dict(label_mapping or {}),
                    header[label_idx] if header and label_idx is not None else None)


def write_csv(path, rows, labels=None, feature_names=None, label_name="label"):
    rows = np.asarray(rows, dtype=float)
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(rows.shape[1])]
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names + ([label_name] if labels is not None else []))
            for i, row in enumerate(rows):
                cells = [fmt(v) for v in row]
                if labels is not None:
                    cells.append(str(labels[i]))
                w.writerow(cells)
    except OSError as err:
        raise IoError(f"cannot write {path}: {err}") from err


def dataset_hash(data):
    """SHA-256 over shape, feature names and the float64 bytes of the rows."""
    rows = data.rows if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    names = data.feature_names if isinstance(data, Dataset) else ()
    h = hashlib.sha256()
    h.update(struct.pack("<qq", *rows.shape))
    h.update(json.dumps(list(names)).encode())
    h.update(np.ascontiguousarray(rows, dtype="<f8").tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------- attribution files

ATTRIBUTION_FORMAT = "dfax-attributions"
ATTRIBUTION_VERSION = 1


@dataclass
class AttributionFile:
    method: str
    dataset_hash: str
    d: int
    seed: int
    instance_ids: list
    scores: np.ndarray  # (rows, d)
    feature_names: list = None

    def by_id(self):
        return {i: s for i, s in zip(self.instance_ids, self.scores)}

    def check_dataset(self, data):
        if self.dataset_hash and self.dataset_hash != dataset_hash(data):
            raise HashMismatch("attribution file was produced from a different dataset")


def write_attributions(path, attrs, dataset_hash="", seed=0, method=None, feature_names=None):
    attrs = list(attrs)
    d = attrs[0].d if attrs else (len(feature_names) if feature_names else 0)
    header = {
        "format": ATTRIBUTION_FORMAT,
        "version": ATTRIBUTION_VERSION,
        "method": method or (attrs[0].method_tag if attrs else ""),
        "dataset_hash": dataset_hash,
        "d": d,
        "seed": int(seed),
        "feature_names": list(feature_names) if feature_names else None,
    }
    buf = _io.StringIO()
    buf.write("# " + json.dumps(header, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["instance_id"] + (list(feature_names) if feature_names else [f"s{j}" for j in range(d)]))
    for a in attrs:
        if a.d != d:
            raise DimensionMismatch(f"attribution for {a.target_ref} has {a.d} scores, expected {d}")
        w.writerow([a.target_ref] + [fmt(v) for v in a.scores])
    _write_text(path, buf.getvalue())


def read_attributions(path, data=None):
    """Parse and structurally validate an attribution file."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise IoError(f"cannot read {path}: {err}") from err
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ParseError(f"{path}: missing header block", line=1)
    try:
        header = json.loads(lines[0][1:])
    except ValueError as err:
        raise ParseError(f"{path}: header is not valid JSON: {err}", line=1) from err
    if header.get("format") != ATTRIBUTION_FORMAT:
        raise ParseError(f"{path}: not an attribution file", line=1)
    if header.get("version") != ATTRIBUTION_VERSION:
        raise VersionMismatch(f"{path}: attribution format version {header.get('version')} is not supported")
    d = int(header["d"])
    ids, rows = [], []
    for lineno, rec in enumerate(csv.reader(lines[2:]), start=3):
        if not rec:
            continue
        if len(rec) != d + 1:
            raise ParseError(f"expected {d} scores, found {len(rec) - 1}", line=lineno)
        try:
            vals = [float(c) for c in rec[1:]]
        except ValueError as err:
            raise ParseError(f"non-numeric score: {err}", line=lineno) from err
        if not all(np.isfinite(vals)):
            raise ParseError("non-finite score", line=lineno)
        ids.append(rec[0])
        rows.append(vals)
    af = AttributionFile(
        header.get("method", ""),
        header.get("dataset_hash", ""),
        d,
        int(header.get("seed", 0)),
        ids,
        np.array(rows, dtype=float).reshape(len(rows), d),
        header.get("feature_names"),
    )
    if data is not None:
        if data.d != d:
            raise DimensionMismatch(f"attribution file has d={d}, dataset has d={data.d}")
        af.check_dataset(data)
    return af


def _write_text(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as err:
        raise IoError(f"cannot write {path}: {err}") from err


# ---------------------------------------------------------------- explainer snapshots
#
# layout: MAGIC (8 bytes) | version (u32 LE) | header length (u64 LE) |
#         header (UTF-8 JSON) | array payload
# The header lists every array as [name, dtype, shape, offset, nbytes] relative
# to the payload start, followed by a SHA-256 of the payload.

SNAPSHOT_MAGIC = b"DFAXEXPL"
SNAPSHOT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def _explainer_state(expl):
    arrays = {"constant": expl.constant.astype(np.uint8), "class_counts": expl.class_counts.astype(np.int64)}
    meta = {
        "backend": expl.backend,
        "seed": expl.seed,
        "feature_names": list(expl.feature_names),
        "m": expl.m,
        "diagnostics": expl.diagnostics,
    }
    if expl.backend == "exact-gaussian":
        meta["gamma"] = expl.params.gamma
    elif expl.backend == "feature-map-gaussian":
        meta["gamma"] = expl.params["kernel"].gamma
        meta["dimension"] = expl.params["dimension"]
        for s, fm in enumerate(expl.feature_maps):
            arrays[f"freq/{s}"] = fm.frequencies
            meta.setdefault("map_seeds", []).append(fm.seed)
    else:
        meta["psi"], meta["t"], meta["sinne_seed"] = expl.params.psi, expl.params.t, expl.params.seed
    for s, row in enumerate(expl.cells):
        for c, pair in enumerate(row):
            for side, est in enumerate(pair):
                key = f"{s}/{c}/{side}"
                if est is None:
                    continue
                if isinstance(est, ExactKde1D):
                    arrays[f"support/{key}"] = est.support_points
                elif isinstance(est, MappedDensity):
                    arrays[f"mean/{key}"] = est.mm.mean_vector
                    arrays[f"count/{key}"] = np.array([est.mm.count], dtype=np.int64)
                else:
                    arrays[f"centers/{key}"] = est.centers
                    arrays[f"radii/{key}"] = est.radii
    return meta, arrays


def save_explainer(expl, path, extra=None):
    """Write a snapshot; ``extra`` is a JSON-able dict stored alongside (CLI context)."""
    meta, arrays = _explainer_state(expl)
    meta["extra"] = extra or {}
    table, blobs, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        a = a.astype(a.dtype.newbyteorder("<"))
        raw = a.tobytes()
        table.append([name, a.dtype.str, list(a.shape), offset, len(raw)])
        blobs.append(raw)
        offset += len(raw)
    payload = b"".join(blobs)
    meta["arrays"] = table
    meta["payload_sha256"] = hashlib.sha256(payload).hexdigest()
    head = json.dumps(meta, sort_keys=True).encode()
    try:
        with open(path, "wb") as fh:
            fh.write(_PREFIX.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, len(head)))
            fh.write(head)
            fh.write(payload)
    except OSError as err:
        raise IoError(f"cannot write {path}: {err}") from err


def load_explainer(path):
    return load_snapshot(path)[0]


def load_snapshot(path):
    """Return ``(explainer, extra)``."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as err:
        raise IoError(f"cannot read {path}: {err}") from err
    if len(blob) < _PREFIX.size:
        raise DeserializeError(f"{path}: file is truncated")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != SNAPSHOT_MAGIC:
        raise DeserializeError(f"{path}: not an explainer snapshot")
    if version != SNAPSHOT_VERSION:
        raise VersionMismatch(f"{path}: snapshot version {version}, this build reads {SNAPSHOT_VERSION}")
    start = _PREFIX.size + hlen
    if len(blob) < start:
        raise DeserializeError(f"{path}: header is truncated")
    try:
        meta = json.loads(blob[_PREFIX.size : start])
    except ValueError as err:
        raise DeserializeError(f"{path}: corrupt header: {err}") from err
    payload = blob[start:]
    if hashlib.sha256(payload).hexdigest() != meta.get("payload_sha256"):
        raise DeserializeError(f"{path}: payload is truncated or corrupt")
    arrays = {}
    try:
        for name, dtype, shape, off, nbytes in meta["arrays"]:
            arrays[name] = np.frombuffer(payload, dtype=np.dtype(dtype), count=int(np.prod(shape)),
                                         offset=off).reshape(shape).astype(np.dtype(dtype).newbyteorder("="))
        return _rebuild(meta, arrays), meta.get("extra", {})
    except (KeyError, ValueError, TypeError) as err:
        raise DeserializeError(f"{path}: inconsistent snapshot: {err}") from err


def _rebuild(meta, arrays):
    backend = meta["backend"]
    d, m = len(meta["feature_names"]), int(meta["m"])
    fmaps = None
    if backend == "exact-gaussian":
        params = GaussianKernelParams(meta["gamma"])
    elif backend == "feature-map-gaussian":
        kernel = GaussianKernelParams(meta["gamma"])
        params = {"kernel": kernel, "dimension": int(meta["dimension"])}
        fmaps = tuple(
            FeatureMap1D(kernel, params["dimension"], int(meta["map_seeds"][s]), arrays[f"freq/{s}"])
            for s in range(d)
        )
    else:
        params = SinneParams(meta["psi"], meta["t"], meta["sinne_seed"])
    cells = []
    for s in range(d):
        row = []
        for c in range(m):
            pair = []
            for side in (0, 1):
                key = f"{s}/{c}/{side}"
                if backend == "exact-gaussian" and f"support/{key}" in arrays:
                    pair.append(ExactKde1D(arrays[f"support/{key}"], params))
                elif backend == "feature-map-gaussian" and f"mean/{key}" in arrays:
                    mm = KernelMeanMap1D(arrays[f"mean/{key}"], int(arrays[f"count/{key}"][0]),
                                         fmaps[s].fingerprint())
                    pair.append(MappedDensity(fmaps[s], mm))
                elif backend == "sinne" and f"centers/{key}" in arrays:
                    pair.append(SinneModel1D(arrays[f"centers/{key}"], arrays[f"radii/{key}"]))
                else:
                    pair.append(None)
            row.append(tuple(pair))
        cells.append(tuple(row))
    return DfaxExplainer(
        backend=backend,
        params=params,
        seed=int(meta["seed"]),
        feature_names=tuple(meta["feature_names"]),
        constant=arrays["constant"].astype(bool),
        class_counts=arrays["class_counts"].astype(np.int64),
        cells=tuple(cells),
        feature_maps=fmaps,
        diagnostics=meta.get("diagnostics", {}),
    )


# ---------------------------------------------------------------- reports

REPORT_COLUMNS = [
    "method", "dataset", "tag", "deletion", "insertion",
    "deletion_rank", "insertion_rank", "below_random", "error",
]


def _cell_text(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return fmt(v)
    return str(v)


def write_report_csv(report, path, timings=False):
    cols = REPORT_COLUMNS + (["seconds_per_instance"] if timings else [])
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in report.rows(timings=timings):
        w.writerow([_cell_text(row[c]) for c in cols])
    _write_text(path, buf.getvalue())


def _jsonable(v):
    if isinstance(v, float) and not np.isfinite(v):
        return None
    return v


def write_report_json(report, path, timings=False):
    doc = {
        "methods": report.methods,
        "datasets": report.datasets,
        "rows": [{k: _jsonable(v) for k, v in r.items()} for r in report.rows(timings=timings)],
        "average_ranks": {"deletion": report.deletion_ranks, "insertion": report.insertion_ranks},
        "below_random": report.sanity_flags,
        "instances": {
            f"{m}|{ds}": {"deletion": c.instance_deletion, "insertion": c.instance_insertion}
            for (m, ds), c in report.cells.items()
        },
    }
    _write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_curves_json(curves, path):
    doc = [{"label": c.label, "xs": c.xs.tolist(), "ys": c.ys.tolist()} for c in curves]
    _write_text(path, json.dumps(doc, indent=1) + "\n")


def read_curves_json(path):
    from dfax.evaluation import EvaluationCurve

    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as err:
        raise IoError(f"cannot read {path}: {err}") from err
    except ValueError as err:
        raise ParseError(f"{path}: invalid JSON: {err}") from err
    return [EvaluationCurve(c["xs"], c["ys"], c.get("label", "")) for c in doc]


# ---------------------------------------------------------------- SVG plots

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]


def render_curve_svg(curves, title="", width=480, height=360):
    """Return an SVG document plotting curves on the unit square."""
    if not curves:
        raise InvalidParameter("need at least one curve")
    left, right, top, bottom = 56, 16, 28, 44
    pw, ph = width - left - right, height - top - bottom

    def px(x):
        return f"{left + x * pw:.2f}"

    def py(y):
        return f"{top + (1.0 - min(max(y, 0.0), 1.0)) * ph:.2f}"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        out.append(f'<text x="{px(t)}" y="{top + ph + 14}" text-anchor="middle">{t:.2f}</text>')
        out.append(f'<text x="{left - 6}" y="{float(py(t)) + 4:.2f}" text-anchor="end">{t:.2f}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 8}" text-anchor="middle">fraction of features</text>')
    out.append(
        f'<text x="14" y="{top + ph / 2:.2f}" text-anchor="middle" '
        f'transform="rotate(-90 14 {top + ph / 2:.2f})">target-class probability</text>'
    )
    if title:
        out.append(f'<text x="{width / 2:.2f}" y="16" text-anchor="middle">{_escape(title)}</text>')
    for i, c in enumerate(curves):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(x)},{py(y)}" for x, y in zip(c.xs, c.ys))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        name = f"{_escape(c.label)} " if c.label else ""
        out.append(
            f'<text x="{left + pw - 6}" y="{top + 14 + 14 * i}" text-anchor="end" fill="{color}">'
            f"{name}AUC = {c.auc:.3f}</text>"
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(s):
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def emit_curve_plot(curves, path, title=""):
    _write_text(path, render_curve_svg(list(curves), title))
