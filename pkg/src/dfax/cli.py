"""Command-line entry point.

    dfax synth      write the synthetic sign-of-x0 dataset
    dfax fit        fit an explainer and write a snapshot
    dfax attribute  score targets with a snapshot
    dfax evaluate   deletion/insertion scores for an attribution file
    dfax benchmark  compare attribution methods end to end
    dfax plot       render saved curves as SVG

Exit codes: 0 ok, 2 input/config error, 3 dimension/consistency error,
4 model endpoint failure. DFAX_ENDPOINT_URL and DFAX_ENDPOINT_TIMEOUT
override the endpoint URL and timeout (ms) of an external model.
"""

import argparse
import json
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from dfax import io as dio
from dfax.core import LabelVector, StandardizationParams, TargetInstance, derive_seed, rank_features, standardize
from dfax.datasets import make_sign_dataset
from dfax.errors import DfaxError, DimensionMismatch, InvalidParameter, IoError
from dfax.evaluation import (
    DELETION,
    INSERTION,
    BenchmarkDataset,
    DfaxMethod,
    ImportedMethod,
    PfiMethod,
    RandomMethod,
    ShapleyExactMethod,
    ShapleySamplingMethod,
    TrialConfig,
    auto_stride,
    evaluation_curves,
    mean_curve,
    run_benchmark,
)
from dfax.explainer import attribute_batch, fit_explainer, resolve_backend
from dfax.kde import GaussianKernelParams
from dfax.model import BUILTIN_KINDS, ExternalModel, endpoint_from_env, model_from_dict, train_builtin
from dfax.sinne import SinneParams

METHODS = ("dfax-gaussian", "dfax-gaussian-map", "dfax-sinne", "random", "shapley-sampling",
           "shapley-exact", "pfi")


# ---------------------------------------------------------------- helpers


def _label_column(text):
    if text is None or text.lower() == "none":
        return None
    try:
        return int(text)
    except ValueError:
        return text


def _require_file(path, what):
    if path is not None and not Path(path).is_file():
        raise IoError(f"{what} not found: {path}")


def _positive(kind):
    def parse(text):
        v = kind(text)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v

    return parse


def _is_endpoint(spec):
    return spec is not None and spec.startswith(("http://", "https://", "cmd:"))


def _validate_model_spec(spec):
    if spec is None:
        return
    if spec.startswith("builtin:"):
        if spec[8:] not in BUILTIN_KINDS:
            raise InvalidParameter(f"unknown builtin model {spec[8:]!r}; choose {', '.join(BUILTIN_KINDS)}")
    elif spec.startswith("file:"):
        _require_file(spec[5:], "model file")
    elif not _is_endpoint(spec):
        raise InvalidParameter(f"cannot understand --model {spec!r}")


def _backend_params(args, backend):
    if backend == "exact-gaussian":
        return GaussianKernelParams(args.gamma)
    if backend == "feature-map-gaussian":
        return {"kernel": GaussianKernelParams(args.gamma), "dimension": args.map_dim}
    return SinneParams(args.psi, args.trees, args.seed)


def _load_training(args):
    table = dio.load_csv(args.data, _label_column(args.label_column), not args.no_header)
    data, params = standardize(table.rows, table.feature_names)
    return table, data, params


def _make_model(spec, data, labels, seed, m=None, timeout_ms=None, max_batch=128):
    env_url = os.environ.get("DFAX_ENDPOINT_URL")
    if env_url and (spec is None or _is_endpoint(spec)):
        spec = env_url
    if spec is None:
        raise InvalidParameter("a --model is required")
    if spec.startswith("builtin:"):
        if labels is None:
            raise InvalidParameter("training a builtin model needs a label column")
        return train_builtin(spec[8:], data, LabelVector(labels), seed)
    if spec.startswith("file:"):
        with open(spec[5:], encoding="utf-8") as fh:
            return model_from_dict(json.load(fh))
    kw = {"max_batch": max_batch}
    if timeout_ms is not None:
        kw["timeout_ms"] = timeout_ms
    return ExternalModel(endpoint_from_env(spec, **kw), m, data.d)


def _params_from_extra(extra):
    std = extra["standardization"]
    return StandardizationParams(
        np.array(std["means"]), np.array(std["stds"]), np.array(std["constant"], dtype=bool)
    )


# ---------------------------------------------------------------- commands


def cmd_synth(args):
    x, y = make_sign_dataset(args.n, args.d, args.seed)
    dio.write_csv(args.out, x, y, [f"x{j}" for j in range(args.d)], "class")
    print(f"wrote {args.n} x {args.d} synthetic rows to {args.out}")
    return 0


def cmd_fit(args):
    _require_file(args.data, "data file")
    _validate_model_spec(args.model)
    if args.model is None and not args.use_labels:
        raise InvalidParameter("give --model to generate predictions, or --use-labels")
    backend = resolve_backend(args.backend)
    table, data, std = _load_training(args)
    t0 = time.perf_counter()
    m_labels = len(table.label_mapping) or None
    if args.use_labels:
        if table.labels is None:
            raise InvalidParameter("--use-labels needs a label column")
        preds = LabelVector(table.labels, m_labels)
    else:
        model = _make_model(args.model, data, table.labels, args.seed, m_labels, args.timeout_ms, args.max_batch)
        preds = LabelVector(model.predict(data.rows), model.m)
        if args.model_out and hasattr(model, "to_dict"):
            Path(args.model_out).write_text(json.dumps(model.to_dict()) + "\n", encoding="utf-8")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        expl = fit_explainer(data, preds, backend, _backend_params(args, backend), seed=args.seed, jobs=args.jobs)
    elapsed = time.perf_counter() - t0
    extra = {
        "standardization": {
            "means": std.means.tolist(),
            "stds": std.stds.tolist(),
            "constant": std.constant.tolist(),
        },
        "label_mapping": table.label_mapping,
        "dataset_hash": dio.dataset_hash(data),
        "source": str(args.data),
    }
    dio.save_explainer(expl, args.out, extra)
    print(f"n={data.n} d={data.d} m={expl.m} backend={expl.backend} fit_seconds={elapsed:.3f}")
    if expl.diagnostics.get("empty_classes"):
        print(f"warning: classes with no predicted rows: {expl.diagnostics['empty_classes']}", file=sys.stderr)
    print(f"snapshot written to {args.out}")
    return 0


def _targets_from_file(args, extra, d_expected, model_factory):
    mapping = extra.get("label_mapping") or None
    label_col = _label_column(args.label_column)
    table = dio.load_csv(args.targets, label_col, not args.no_header, label_mapping=mapping)
    if table.rows.shape[1] != d_expected:
        raise DimensionMismatch(f"targets have {table.rows.shape[1]} features, the snapshot expects {d_expected}")
    std = _params_from_extra(extra)
    rows = std.apply(table.rows)
    if table.labels is not None and args.model is None:
        classes = table.labels
    else:
        model = model_factory()
        classes = model.predict(rows)
    ids = [str(i) for i in range(rows.shape[0])]
    return [TargetInstance(r, c, i) for r, c, i in zip(rows, classes, ids)], rows


def cmd_attribute(args):
    _require_file(args.snapshot, "snapshot")
    _require_file(args.targets, "targets file")
    _validate_model_spec(args.model)
    if args.model is None and _label_column(args.label_column) is None:
        raise InvalidParameter("targets need predicted classes: give --label-column or --model")
    if args.model is not None and args.model.startswith("builtin:"):
        raise InvalidParameter("attribute cannot retrain a builtin model; save one with fit --model-out")
    expl, extra = dio.load_snapshot(args.snapshot)

    def factory():
        data_stub = type("D", (), {"d": expl.d})()
        return _make_model(args.model, data_stub, None, args.seed, expl.m, args.timeout_ms, args.max_batch)

    targets, _ = _targets_from_file(args, extra, expl.d, factory)
    attrs = attribute_batch(expl, targets, jobs=args.jobs)
    dio.write_attributions(args.out, attrs, extra.get("dataset_hash", ""), expl.seed,
                           f"dfax-{expl.backend}", expl.feature_names)
    print(f"wrote {len(attrs)} attributions to {args.out}")
    if args.top_k:
        for a in attrs:
            top = rank_features(a).order[: args.top_k]
            print(f"{a.target_ref}: {', '.join(expl.feature_names[j] for j in top)}")
    return 0


def cmd_evaluate(args):
    for p, what in ((args.data, "data file"), (args.targets, "targets file"), (args.attributions, "attribution file")):
        _require_file(p, what)
    _validate_model_spec(args.model)
    table, data, std = _load_training(args)
    af = dio.read_attributions(args.attributions)
    if af.d != data.d:
        raise DimensionMismatch(f"attribution file has d={af.d}, data has d={data.d}")
    model = _make_model(args.model, data, table.labels, args.seed, len(table.label_mapping) or None,
                        args.timeout_ms, args.max_batch)
    tt = dio.load_csv(args.targets, None if args.targets_unlabeled else _label_column(args.label_column),
                      not args.no_header, label_mapping=table.label_mapping or None)
    rows = std.apply(tt.rows)
    classes = model.predict(rows)
    scores = af.by_id()
    stride = args.stride or auto_stride(data.d)
    lines = ["instance_id,deletion,insertion"]
    all_del, all_ins = [], []
    for i, (r, c) in enumerate(zip(rows, classes)):
        ref = str(i)
        if ref not in scores:
            continue
        t = TargetInstance(r, c, ref)
        ranking = rank_features(scores[ref])
        cfg = TrialConfig(args.trials, derive_seed(args.seed, "evaluate", i), stride)
        dl = evaluation_curves(model, t, ranking, cfg, DELETION)
        il = evaluation_curves(model, t, ranking, cfg, INSERTION)
        all_del += dl
        all_ins += il
        lines.append(f"{ref},{dio.fmt(np.mean([x.auc for x in dl]))},{dio.fmt(np.mean([x.auc for x in il]))}")
    if len(lines) == 1:
        raise InvalidParameter("no attribution rows match the target instances")
    dio._write_text(args.out, "\n".join(lines) + "\n")
    curves = [mean_curve(all_del, "deletion"), mean_curve(all_ins, "insertion")]
    if args.curves_out:
        dio.write_curves_json(curves, args.curves_out)
    if args.plot:
        dio.emit_curve_plot(curves, args.plot, title=af.method)
    print(f"deletion={np.mean([x.auc for x in all_del]):.4f} insertion={np.mean([x.auc for x in all_ins]):.4f}")
    return 0


def _build_methods(args, d):
    methods = []
    names = [s.strip() for s in args.methods.split(",") if s.strip()]
    for name in names:
        if name == "dfax-gaussian":
            methods.append(DfaxMethod("exact-gaussian", GaussianKernelParams(args.gamma), args.seed, name))
        elif name == "dfax-gaussian-map":
            methods.append(DfaxMethod("feature-map-gaussian",
                                      {"kernel": GaussianKernelParams(args.gamma), "dimension": args.map_dim},
                                      args.seed, name))
        elif name == "dfax-sinne":
            methods.append(DfaxMethod("sinne", SinneParams(args.psi, args.trees, args.seed), args.seed, name))
        elif name == "random":
            methods.append(RandomMethod(args.seed))
        elif name == "shapley-sampling":
            methods.append(ShapleySamplingMethod(args.n_subsets, args.background, args.seed))
        elif name == "shapley-exact":
            methods.append(ShapleyExactMethod("nearest-centroid", args.seed))
        elif name == "pfi":
            methods.append(PfiMethod(args.pfi_repeats, args.seed))
        else:
            raise InvalidParameter(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    for spec in args.import_scores or []:
        if "=" not in spec:
            raise InvalidParameter(f"--import expects NAME=PATH, got {spec!r}")
        name, path = spec.split("=", 1)
        _require_file(path, "attribution file")
        af = dio.read_attributions(path)
        if af.d != d:
            raise DimensionMismatch(f"{path}: d={af.d}, data has d={d}")
        methods.append(ImportedMethod(name, af.by_id()))
    if not methods:
        raise InvalidParameter("the methods list is empty")
    return methods


def cmd_benchmark(args):
    _require_file(args.data, "data file")
    _require_file(args.test, "test file")
    _validate_model_spec(args.model)
    for spec in args.import_scores or []:
        _require_file(spec.split("=", 1)[-1], "attribution file")
    table, data, std = _load_training(args)
    methods = _build_methods(args, data.d)
    if args.test:
        tt = dio.load_csv(args.test, _label_column(args.label_column), not args.no_header,
                          label_mapping=table.label_mapping or None)
        pool = std.apply(tt.rows)
    else:
        pool = data.rows
    k = min(args.targets, pool.shape[0])
    picks = np.sort(np.random.default_rng(derive_seed(args.seed, "targets")).choice(pool.shape[0], k, replace=False))
    ds = BenchmarkDataset(Path(args.data).stem, data, pool[picks], [str(i) for i in picks])
    model = _make_model(args.model, data, table.labels, args.seed, len(table.label_mapping) or None,
                        args.timeout_ms, args.max_batch)
    config = TrialConfig(args.trials, args.seed, args.stride or auto_stride(data.d))
    report = run_benchmark(methods, [ds], [model], config, jobs=args.jobs)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dio.write_report_csv(report, out / "report.csv")
    dio.write_report_json(report, out / "report.json")
    dio.write_report_csv(report, out / "timings.csv", timings=True)
    for metric in ("deletion", "insertion"):
        curves = [getattr(report.cell(m, ds.name), f"mean_{metric}_curve") for m in report.methods]
        curves = [c for c in curves if c is not None]
        if curves:
            dio.emit_curve_plot(curves, out / f"{metric}_curves.svg", title=f"{metric} ({ds.name})")

    print(f"{'method':<22}{'deletion':>10}{'insertion':>11}{'del.rank':>10}{'ins.rank':>10}  s/instance")
    for m in report.methods:
        c = report.cell(m, ds.name)
        if not c.ok:
            print(f"{m:<22} FAILED: {c.error}", file=sys.stderr)
            continue
        flag = "  below random" if report.sanity_flags.get(m) else ""
        tag = " [external]" if c.tag == "external" else ""
        print(f"{m + tag:<22}{c.deletion:>10.4f}{c.insertion:>11.4f}"
              f"{report.deletion_ranks.get(m, float('nan')):>10.1f}"
              f"{report.insertion_ranks.get(m, float('nan')):>10.1f}  {c.seconds_per_instance:.2e}{flag}")
    if all(not c.ok for c in report.cells.values()):
        print("every benchmark cell failed", file=sys.stderr)
        return 2
    return 0


def cmd_plot(args):
    curves = []
    for p in args.curves:
        _require_file(p, "curves file")
        curves += dio.read_curves_json(p)
    dio.emit_curve_plot(curves, args.out, title=args.title)
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------- parser


def _common(p, seed=True, jobs=True):
    if seed:
        p.add_argument("--seed", type=int, default=0, help="master random seed (default 0)")
    if jobs:
        p.add_argument("--jobs", type=_positive(int), default=1, help="worker threads (default 1)")


def _data_args(p, data=True):
    if data:
        p.add_argument("--data", required=True, help="training CSV")
    p.add_argument("--label-column", default="-1",
                   help="label column index or header name, 'none' for no labels (default -1, the last)")
    p.add_argument("--no-header", action="store_true", help="CSV files have no header row")


def _model_args(p, required=False):
    p.add_argument("--model", required=required,
                   help="builtin:logistic | builtin:nearest-centroid | file:MODEL.json | http://HOST/predict | cmd:COMMAND")
    p.add_argument("--timeout-ms", type=_positive(int), default=None, help="external model timeout (default 30000)")
    p.add_argument("--max-batch", type=_positive(int), default=128, help="rows per external request (default 128)")


def _hyper_args(p):
    p.add_argument("--gamma", type=_positive(float), default=1.0,
                   help="Gaussian kernel gamma = 1/(2 sigma^2); tuning grid 1e-4..1e4 (default 1)")
    p.add_argument("--map-dim", type=_positive(int), default=2048, help="feature map dimension, even (default 2048)")
    p.add_argument("--psi", type=int, default=2, help="SiNNE subsample size; tuning grid 2..8 (default 2)")
    p.add_argument("--trees", type=_positive(int), default=1000,
                   help="SiNNE ensemble size; tuning grid 200..2000 (default 1000)")


def build_parser():
    parser = argparse.ArgumentParser(prog="dfax", description="Distributional feature attribution toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write the synthetic sign-of-x0 dataset")
    p.add_argument("--n", type=_positive(int), default=2000, help="rows (default 2000)")
    p.add_argument("--d", type=_positive(int), default=10, help="features (default 10)")
    p.add_argument("--out", required=True, help="output CSV")
    _common(p, jobs=False)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit an explainer and write a snapshot")
    _data_args(p)
    _model_args(p)
    p.add_argument("--use-labels", action="store_true", help="fit on ground-truth labels instead of predictions")
    p.add_argument("--model-out", help="also save a builtin model as JSON (for later file:MODEL.json)")
    p.add_argument("--backend", default="gaussian", help="gaussian | gaussian-map | sinne (default gaussian)")
    _hyper_args(p)
    p.add_argument("--out", required=True, help="snapshot path")
    _common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("attribute", help="score targets with a fitted snapshot")
    p.add_argument("--snapshot", required=True, help="snapshot written by fit")
    p.add_argument("--targets", required=True, help="targets CSV (raw units, same columns as the training data)")
    _data_args(p, data=False)
    _model_args(p)
    p.add_argument("--out", required=True, help="attribution file to write")
    p.add_argument("--top-k", type=int, default=0, help="print the k highest-scored feature names per target")
    _common(p)
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("evaluate", help="deletion/insertion scores for an attribution file")
    _data_args(p)
    _model_args(p, required=True)
    p.add_argument("--targets", required=True, help="targets CSV the attributions refer to")
    p.add_argument("--targets-unlabeled", action="store_true", help="targets CSV has no label column")
    p.add_argument("--attributions", required=True, help="attribution file")
    p.add_argument("--trials", type=_positive(int), default=100, help="random trials per instance (default 100)")
    p.add_argument("--stride", type=_positive(int), default=None,
                   help="features masked per step (default: ceil(d/256))")
    p.add_argument("--out", required=True, help="per-instance scores CSV")
    p.add_argument("--curves-out", help="trial-averaged curves as JSON")
    p.add_argument("--plot", help="trial-averaged curves as SVG")
    _common(p, jobs=False)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="compare attribution methods")
    _data_args(p)
    _model_args(p, required=True)
    p.add_argument("--test", help="CSV to draw targets from (default: the training data)")
    p.add_argument("--methods", default="dfax-gaussian,dfax-sinne,random",
                   help=f"comma-separated from {', '.join(METHODS)}")
    p.add_argument("--import", dest="import_scores", action="append", metavar="NAME=PATH",
                   help="add an external method from an attribution file (repeatable)")
    p.add_argument("--targets", type=_positive(int), default=100, help="target instances (default 100)")
    p.add_argument("--trials", type=_positive(int), default=100, help="random trials per instance (default 100)")
    p.add_argument("--stride", type=_positive(int), default=None,
                   help="features masked per step (default: ceil(d/256))")
    p.add_argument("--n-subsets", type=_positive(int), default=64, help="shapley-sampling orderings (default 64)")
    p.add_argument("--background", type=_positive(int), default=100, help="shapley-sampling background rows (default 100)")
    p.add_argument("--pfi-repeats", type=_positive(int), default=5, help="PFI permutations per feature (default 5)")
    _hyper_args(p)
    p.add_argument("--out-dir", required=True, help="directory for report.csv, report.json, timings.csv and SVG curves")
    _common(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("plot", help="render curves JSON files as one SVG")
    p.add_argument("--curves", nargs="+", required=True, help="curves JSON written by evaluate")
    p.add_argument("--out", required=True, help="SVG path")
    p.add_argument("--title", default="", help="plot title")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DfaxError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
