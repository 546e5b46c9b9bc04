"""Deletion / insertion evaluation and the benchmark runner.

Deletion starts from the intact target and replaces features, most important
first, with fresh standard-normal draws (the data are standardized, so N(0, 1)
is the marginal scale). Insertion starts from a fully randomized instance and
restores true values in the same order. Each curve records the model's
probability for the target's predicted class after every step; its
trapezoidal area over the masked fraction in [0, 1] is the score, averaged
over independent trials. Lower deletion and higher insertion are better.

Seeds: a trial of metric ``k`` (0 = deletion, 1 = insertion) uses
``derive_seed(config.seed, trial, k)``. The benchmark gives every
(method, dataset, instance) its own ``config.seed`` via
``derive_seed(master, method_name, dataset_name, instance_index)``.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from dfax import guard
from dfax.baselines import (
    RetrainEvaluator,
    pfi,
    random_attribution,
    shapley_exact,
    shapley_sampling,
)
from dfax.core import (
    AttributionVector,
    Dataset,
    LabelVector,
    TargetInstance,
    derive_seed,
    rank_features,
)
from dfax.errors import DfaxError, DimensionMismatch, InvalidParameter, TrialFailed
from dfax.explainer import attribute_batch, fit_explainer

DELETION, INSERTION = "deletion", "insertion"


@dataclass(frozen=True)
class TrialConfig:
    n_trials: int = 100
    seed: int = 0
    stride: int = 1  # features masked per step

    def __post_init__(self):
        if self.n_trials < 1:
            raise InvalidParameter("n_trials must be at least 1")
        if self.stride < 1:
            raise InvalidParameter("stride must be at least 1")


def auto_stride(d, max_steps=256):
    return max(1, math.ceil(d / max_steps))


@dataclass(frozen=True, eq=False)
class EvaluationCurve:
    xs: np.ndarray
    ys: np.ndarray
    label: str = ""

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        if xs.shape != ys.shape or xs.ndim != 1 or xs.size < 2:
            raise InvalidParameter("curve needs matching 1-D xs/ys with at least 2 points")
        if xs[0] != 0.0 or xs[-1] != 1.0 or np.any(np.diff(xs) <= 0):
            raise InvalidParameter("curve xs must increase strictly from 0 to 1")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def auc(self):
        return trapezoid_auc(self.xs, self.ys)


def trapezoid_auc(xs, ys):
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    return float(np.sum(np.diff(xs) * (ys[1:] + ys[:-1]) / 2.0))


def mask_counts(d, stride=1):
    counts = list(range(0, d, stride)) + [d]
    return np.array(counts)


def _curve_rows(values, noise, order, counts, mode):
    rows = np.empty((len(counts), values.size))
    for i, k in enumerate(counts):
        if mode == DELETION:
            row = values.copy()
            row[order[:k]] = noise[order[:k]]
        else:
            row = noise.copy()
            row[order[:k]] = values[order[:k]]
        rows[i] = row
    return rows


def evaluation_curves(model, target, ranking, config, mode=DELETION):
    """One curve per trial, each built from fresh standard-normal draws."""
    if mode not in (DELETION, INSERTION):
        raise InvalidParameter(f"unknown mode {mode!r}")
    d = target.d
    if ranking.d != d:
        raise DimensionMismatch(f"ranking covers {ranking.d} features, target has {d}")
    counts = mask_counts(d, config.stride)
    xs = counts / d
    key = 0 if mode == DELETION else 1
    curves = []
    for trial in range(config.n_trials):
        rng = np.random.default_rng(derive_seed(config.seed, trial, key))
        noise = rng.standard_normal(d)
        rows = _curve_rows(target.values, noise, ranking.order, counts, mode)
        guard.record_synthesized(rows.shape[0] - (1 if mode == DELETION else 0))
        try:
            probs = np.asarray(model.predict_proba(rows))[:, target.predicted_class]
        except Exception as err:  # noqa: BLE001
            raise TrialFailed(
                f"{mode} trial {trial} for target {target.ref} failed: {err}",
                trial=trial,
                completed=[c.auc for c in curves],
            ) from err
        curves.append(EvaluationCurve(xs, probs, label=mode))
    return curves


def deletion_score(model, target, ranking, config):
    return float(np.mean([c.auc for c in evaluation_curves(model, target, ranking, config, DELETION)]))


def insertion_score(model, target, ranking, config):
    return float(np.mean([c.auc for c in evaluation_curves(model, target, ranking, config, INSERTION)]))


def mean_curve(curves, label=""):
    return EvaluationCurve(curves[0].xs, np.mean([c.ys for c in curves], axis=0), label)


def average_ranks(scores, lower_is_better=True):
    """Mean per-row rank of each column (rows = datasets, columns = methods).

    Ties share the average rank; rank 1 is best.
    """
    scores = np.asarray(scores, dtype=float)
    keyed = scores if lower_is_better else -scores
    return rankdata(keyed, axis=1, method="average").mean(axis=0)


# ---------------------------------------------------------------- benchmark


@dataclass
class BenchmarkDataset:
    """Standardized training rows plus the target rows to explain."""

    name: str
    data: Dataset
    target_rows: np.ndarray
    target_ids: list = None

    def __post_init__(self):
        self.target_rows = np.atleast_2d(np.asarray(self.target_rows, dtype=float))
        if self.target_ids is None:
            self.target_ids = [str(i) for i in range(self.target_rows.shape[0])]


@dataclass
class BenchmarkContext:
    name: str
    data: Dataset
    preds: LabelVector
    model: object
    targets: list
    seed: int
    jobs: int = 1


class Method:
    name = "method"
    tag = "builtin"

    def explain(self, ctx):
        raise NotImplementedError


class DfaxMethod(Method):
    def __init__(self, backend="exact-gaussian", params=None, seed=0, name=None):
        self.backend = backend
        self.params = params
        self.seed = seed
        self.name = name or f"dfax-{backend}"

    def explain(self, ctx):
        expl = fit_explainer(ctx.data, ctx.preds, self.backend, self.params, seed=self.seed, jobs=ctx.jobs)
        return attribute_batch(expl, ctx.targets, jobs=ctx.jobs)


class RandomMethod(Method):
    name = "random"

    def __init__(self, seed=0):
        self.seed = seed

    def explain(self, ctx):
        return [
            random_attribution(ctx.data.d, derive_seed(self.seed, ctx.name, i), t.ref)
            for i, t in enumerate(ctx.targets)
        ]


class ShapleySamplingMethod(Method):
    name = "shapley-sampling"

    def __init__(self, n_subsets=64, n_background=100, seed=0):
        self.n_subsets = n_subsets
        self.n_background = n_background
        self.seed = seed

    def explain(self, ctx):
        return [
            shapley_sampling(ctx.data, ctx.preds, t, ctx.model, self.n_subsets, self.n_background,
                             derive_seed(self.seed, ctx.name, i))
            for i, t in enumerate(ctx.targets)
        ]


class ShapleyExactMethod(Method):
    name = "shapley-exact"

    def __init__(self, kind="nearest-centroid", seed=0):
        self.kind = kind
        self.seed = seed

    def explain(self, ctx):
        ev = RetrainEvaluator(ctx.data, ctx.preds, self.kind, self.seed)
        return [shapley_exact(ctx.data, ctx.preds, t, ev) for t in ctx.targets]


class PfiMethod(Method):
    """Global importance: the same ranking is reused for every target."""

    name = "pfi"

    def __init__(self, n_repeats=5, seed=0):
        self.n_repeats = n_repeats
        self.seed = seed

    def explain(self, ctx):
        g = pfi(ctx.data, ctx.preds, ctx.model, self.n_repeats, derive_seed(self.seed, ctx.name))
        return [AttributionVector(g.scores, "pfi", t.ref, {"global": True}) for t in ctx.targets]


class ImportedMethod(Method):
    """Scores read from an attribution file, looked up by instance id."""

    tag = "external"

    def __init__(self, name, scores_by_id):
        self.name = name
        self.scores_by_id = dict(scores_by_id)

    def explain(self, ctx):
        out = []
        for t in ctx.targets:
            if t.ref not in self.scores_by_id:
                raise InvalidParameter(f"imported scores have no row for instance {t.ref!r}")
            out.append(AttributionVector(self.scores_by_id[t.ref], self.name, t.ref, {"external": True}))
        return out


@dataclass
class BenchmarkCell:
    method: str
    dataset: str
    tag: str = "builtin"
    deletion: float = float("nan")
    insertion: float = float("nan")
    seconds_per_instance: float = float("nan")
    instance_deletion: list = field(default_factory=list)
    instance_insertion: list = field(default_factory=list)
    mean_deletion_curve: EvaluationCurve = None
    mean_insertion_curve: EvaluationCurve = None
    error: str = None

    @property
    def ok(self):
        return self.error is None


@dataclass
class BenchmarkReport:
    methods: list
    datasets: list
    cells: dict  # (method, dataset) -> BenchmarkCell
    deletion_ranks: dict = field(default_factory=dict)
    insertion_ranks: dict = field(default_factory=dict)
    sanity_flags: dict = field(default_factory=dict)

    def cell(self, method, dataset):
        return self.cells[(method, dataset)]

    def matrix(self, metric):
        return np.array([[getattr(self.cells[(m, ds)], metric) for m in self.methods] for ds in self.datasets])

    def mean(self, method, metric):
        vals = [getattr(self.cells[(method, ds)], metric) for ds in self.datasets]
        return float(np.mean(vals))

    def rows(self, timings=False):
        out = []
        for m in self.methods:
            for ds in self.datasets:
                c = self.cells[(m, ds)]
                row = {
                    "method": m,
                    "dataset": ds,
                    "tag": c.tag,
                    "deletion": c.deletion,
                    "insertion": c.insertion,
                    "deletion_rank": self.deletion_ranks.get(m, float("nan")),
                    "insertion_rank": self.insertion_ranks.get(m, float("nan")),
                    "below_random": bool(self.sanity_flags.get(m, False)),
                    "error": c.error or "",
                }
                if timings:
                    row["seconds_per_instance"] = c.seconds_per_instance
                out.append(row)
        return out


def _score_instances(model, targets, attrs, seeds, config, jobs):
    def one(i):
        ranking = rank_features(attrs[i])
        cfg = TrialConfig(config.n_trials, seeds[i], config.stride)
        dels = evaluation_curves(model, targets[i], ranking, cfg, DELETION)
        ins = evaluation_curves(model, targets[i], ranking, cfg, INSERTION)
        return dels, ins

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(one, range(len(targets))))
    return [one(i) for i in range(len(targets))]


def build_context(ds, model, master_seed=0, jobs=1):
    preds = LabelVector(model.predict(ds.data.rows), model.m)
    classes = model.predict(ds.target_rows)
    targets = [TargetInstance(r, c, ref) for r, c, ref in zip(ds.target_rows, classes, ds.target_ids)]
    return BenchmarkContext(ds.name, ds.data, preds, model, targets, master_seed, jobs)


def run_benchmark(methods, datasets, models, config, jobs=1):
    """Evaluate every method on every (dataset, model) pair.

    A failing cell is recorded with its error and the run continues. Average
    ranks are taken over datasets on which every method succeeded.
    """
    if len(datasets) != len(models):
        raise InvalidParameter("each dataset needs exactly one model")
    names = [m.name for m in methods]
    if len(set(names)) != len(names):
        raise InvalidParameter(f"method names must be unique: {names}")
    cells = {}
    for ds, model in zip(datasets, models):
        ctx = build_context(ds, model, config.seed, jobs)
        for method in methods:
            cell = BenchmarkCell(method.name, ds.name, method.tag)
            cells[(method.name, ds.name)] = cell
            try:
                t0 = time.perf_counter()
                attrs = method.explain(ctx)
                cell.seconds_per_instance = (time.perf_counter() - t0) / max(1, len(ctx.targets))
                seeds = [derive_seed(config.seed, method.name, ds.name, i) for i in range(len(ctx.targets))]
                results = _score_instances(model, ctx.targets, attrs, seeds, config, jobs)
            except DfaxError as err:
                cell.error = f"{type(err).__name__}: {err}"
                continue
            cell.instance_deletion = [float(np.mean([c.auc for c in dl])) for dl, _ in results]
            cell.instance_insertion = [float(np.mean([c.auc for c in il])) for _, il in results]
            cell.deletion = float(np.mean(cell.instance_deletion))
            cell.insertion = float(np.mean(cell.instance_insertion))
            cell.mean_deletion_curve = mean_curve([c for dl, _ in results for c in dl], f"{method.name} deletion")
            cell.mean_insertion_curve = mean_curve([c for _, il in results for c in il], f"{method.name} insertion")

    report = BenchmarkReport(names, [ds.name for ds in datasets], cells)
    complete = [ds.name for ds in datasets if all(cells[(m, ds.name)].ok for m in names)]
    if complete:
        dmat = np.array([[cells[(m, ds)].deletion for m in names] for ds in complete])
        imat = np.array([[cells[(m, ds)].insertion for m in names] for ds in complete])
        report.deletion_ranks = dict(zip(names, average_ranks(dmat, lower_is_better=True).tolist()))
        report.insertion_ranks = dict(zip(names, average_ranks(imat, lower_is_better=False).tolist()))
    if "random" in names:
        # compare each method with random on the datasets where both succeeded
        for m in names:
            shared = [ds.name for ds in datasets if cells[(m, ds.name)].ok and cells[("random", ds.name)].ok]
            if m == "random" or not shared:
                continue
            mean_ins = np.mean([cells[(m, ds)].insertion for ds in shared])
            ref = np.mean([cells[("random", ds)].insertion for ds in shared])
            report.sanity_flags[m] = bool(mean_ins < ref)
    return report
