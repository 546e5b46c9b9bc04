"""DFAX: class-conditional per-feature density differences.

For a target ``x*`` predicted as class ``y*``, the score of feature ``s`` is

    density of x*_s among rows predicted y*
      - density of x*_s among all rows predicted otherwise

with each density estimated in the one-dimensional subspace of feature ``s``.
All estimators are fitted once from the unmodified dataset and its
precomputed predictions. The explainer holds no model handle, so explaining
a target never queries the classifier.
"""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from dfax.core import AttributionVector, Dataset, LabelVector, derive_seed
from dfax.errors import (
    DegenerateComplement,
    DimensionMismatch,
    EmptyDataset,
    InvalidData,
    InvalidParameter,
    MissingTargetClass,
)
from dfax.kde import (
    ExactKde1D,
    GaussianKernelParams,
    KernelMeanMap1D,
    approx_density,
    build_feature_map,
    mapped_sum,
)
from dfax.sinne import SinneParams, fit_sinne

BACKENDS = ("exact-gaussian", "feature-map-gaussian", "sinne")
BACKEND_ALIASES = {
    "gaussian": "exact-gaussian",
    "exact": "exact-gaussian",
    "gaussian-map": "feature-map-gaussian",
    "feature-map": "feature-map-gaussian",
}

TARGET, COMPLEMENT = 0, 1


def resolve_backend(name):
    name = BACKEND_ALIASES.get(name, name)
    if name not in BACKENDS:
        raise InvalidParameter(f"unknown backend {name!r}; choose from {', '.join(BACKENDS)}")
    return name


@dataclass(frozen=True, eq=False)
class ClassPartition:
    indices: tuple  # one sorted index array per class
    n: int

    @classmethod
    def from_labels(cls, labels):
        lab = labels.labels
        parts = []
        for c in range(labels.m):
            idx = np.flatnonzero(lab == c)
            idx.setflags(write=False)
            parts.append(idx)
        return cls(tuple(parts), len(labels))

    @property
    def m(self):
        return len(self.indices)

    def members(self, c):
        return self.indices[c]

    def complement(self, c):
        mask = np.ones(self.n, dtype=bool)
        mask[self.indices[c]] = False
        return np.flatnonzero(mask)

    def counts(self):
        return np.array([len(ix) for ix in self.indices])


@dataclass(frozen=True, eq=False)
class MappedDensity:
    fmap: object
    mm: KernelMeanMap1D

    def density(self, q):
        return approx_density(self.mm, self.fmap, q)


@dataclass(frozen=True, eq=False)
class DfaxExplainer:
    backend: str
    params: object
    seed: int
    feature_names: tuple
    constant: np.ndarray
    class_counts: np.ndarray
    # cells[s][c] = (target-class estimator, complement estimator); None where empty
    cells: tuple
    feature_maps: tuple = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def d(self):
        return len(self.feature_names)

    @property
    def m(self):
        return len(self.class_counts)

    @property
    def n(self):
        return int(np.sum(self.class_counts))

    def estimator(self, s, c, side=TARGET):
        return self.cells[s][c][side]

    def attribute(self, target):
        return attribute(self, target)


def _default_params(backend):
    if backend == "sinne":
        return SinneParams()
    if backend == "feature-map-gaussian":
        return {"kernel": GaussianKernelParams(), "dimension": 2048}
    return GaussianKernelParams()


def _normalize_params(backend, params):
    if params is None:
        return _default_params(backend)
    if backend == "exact-gaussian":
        if isinstance(params, dict):
            params = params.get("kernel", GaussianKernelParams(params.get("gamma", 1.0)))
        if not isinstance(params, GaussianKernelParams):
            raise InvalidParameter("exact-gaussian backend takes GaussianKernelParams")
        return params
    if backend == "feature-map-gaussian":
        if isinstance(params, GaussianKernelParams):
            return {"kernel": params, "dimension": 2048}
        kernel = params.get("kernel") or GaussianKernelParams(params.get("gamma", 1.0))
        return {"kernel": kernel, "dimension": int(params.get("dimension", 2048))}
    if isinstance(params, dict):
        params = SinneParams(**params)
    if not isinstance(params, SinneParams):
        raise InvalidParameter("sinne backend takes SinneParams")
    return params


def fit_explainer(data, preds, backend="exact-gaussian", backend_params=None, seed=0, jobs=1):
    """Fit the d x m grid of class / complement density estimators.

    ``preds`` are the classifier's predictions for ``data`` (ground-truth
    labels go through the same path). Classes with no rows are flagged and
    only fail later, when a target needs them.
    """
    if not isinstance(data, Dataset):
        data = Dataset(data)
    if not isinstance(preds, LabelVector):
        preds = LabelVector(preds)
    if data.n == 0:
        raise EmptyDataset("cannot fit an explainer on an empty dataset")
    if len(preds) != data.n:
        raise InvalidData(f"{len(preds)} predictions for {data.n} rows")
    backend = resolve_backend(backend)
    params = _normalize_params(backend, backend_params)
    part = ClassPartition.from_labels(preds)
    counts = part.counts()
    empty = [c for c in range(part.m) if counts[c] == 0]
    if empty:
        warnings.warn(f"classes with no rows: {empty}", stacklevel=2)

    if backend == "sinne":
        small = [c for c in range(part.m) if 0 < counts[c] < params.psi]
        if small:
            raise InvalidParameter(f"classes {small} have fewer rows than psi={params.psi}")

    fmaps = None
    if backend == "feature-map-gaussian":
        fmaps = tuple(
            build_feature_map(params["kernel"], params["dimension"], derive_seed(seed, s))
            for s in range(data.d)
        )

    def fit_feature(s):
        col = data.rows[:, s]
        if backend == "feature-map-gaussian":
            fmap = fmaps[s]
            sums = [mapped_sum(fmap, col[part.members(c)]) if counts[c] else None for c in range(part.m)]
            total = np.zeros(fmap.dimension)
            for v in sums:
                if v is not None:
                    total += v
        row = []
        for c in range(part.m):
            own, rest = part.members(c), part.complement(c)
            pair = [None, None]
            if backend == "exact-gaussian":
                if own.size:
                    pair[TARGET] = ExactKde1D(col[own], params)
                if rest.size:
                    pair[COMPLEMENT] = ExactKde1D(col[rest], params)
            elif backend == "feature-map-gaussian":
                fp = fmaps[s].fingerprint()
                if own.size:
                    pair[TARGET] = MappedDensity(fmaps[s], KernelMeanMap1D(sums[c] / own.size, own.size, fp))
                if rest.size:
                    # complement mean map composed from the per-class sums
                    pair[COMPLEMENT] = MappedDensity(
                        fmaps[s], KernelMeanMap1D((total - sums[c]) / rest.size, rest.size, fp)
                    )
            else:
                for side, idx in ((TARGET, own), (COMPLEMENT, rest)):
                    if idx.size >= params.psi:
                        p = SinneParams(params.psi, params.t, derive_seed(seed, s, c, side))
                        pair[side] = fit_sinne(col[idx], p)
            row.append(tuple(pair))
        return tuple(row)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            cells = tuple(pool.map(fit_feature, range(data.d)))
    else:
        cells = tuple(fit_feature(s) for s in range(data.d))

    diagnostics = {"empty_classes": empty}
    if backend == "sinne":
        diagnostics["zero_radius_balls"] = int(
            sum(e.zero_radius_balls for row in cells for pair in row for e in pair if e is not None)
        )
    return DfaxExplainer(
        backend=backend,
        params=params,
        seed=int(seed),
        feature_names=data.feature_names,
        constant=data.constant.copy(),
        class_counts=counts,
        cells=cells,
        feature_maps=fmaps,
        diagnostics=diagnostics,
    )


def _check_target(expl, target):
    if target.d != expl.d:
        raise DimensionMismatch(f"target has {target.d} features, explainer expects {expl.d}")
    c = target.predicted_class
    if not 0 <= c < expl.m:
        raise MissingTargetClass(f"predicted class {c} is outside 0..{expl.m - 1}")
    if expl.class_counts[c] == 0:
        raise MissingTargetClass(f"no rows were predicted as class {c}")
    if expl.n - expl.class_counts[c] == 0:
        raise DegenerateComplement(f"every row is predicted as class {c}; the complement is empty")


def attribute_batch(expl, targets, jobs=1):
    """Score many targets; element i equals ``attribute(expl, targets[i])`` bit for bit."""
    targets = list(targets)
    if not targets:
        return []
    for i, t in enumerate(targets):
        try:
            _check_target(expl, t)
        except (DimensionMismatch, MissingTargetClass, DegenerateComplement) as err:
            exc = type(err)(f"target {i} ({t.ref}): {err}")
            exc.index = i
            raise exc from err

    values = np.stack([t.values for t in targets])
    classes = np.array([t.predicted_class for t in targets])
    scores = np.zeros((len(targets), expl.d))
    clamps = np.zeros(len(targets), dtype=np.int64)
    groups = [(c, np.flatnonzero(classes == c)) for c in range(expl.m)]
    groups = [(c, ix) for c, ix in groups if ix.size]

    def score_feature(s):
        col = np.zeros(len(targets))
        hits = np.zeros(len(targets), dtype=np.int64)
        if expl.constant[s]:
            return col, hits
        for c, ix in groups:
            own, rest = expl.cells[s][c]
            q = values[ix, s]
            p_own, k1 = _clamped_rows(own.density(q))
            p_rest, k2 = _clamped_rows(rest.density(q))
            col[ix] = p_own - p_rest
            hits[ix] = k1 + k2
        return col, hits

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(score_feature, range(expl.d)))
    else:
        results = [score_feature(s) for s in range(expl.d)]
    for s, (col, hits) in enumerate(results):
        scores[:, s] = col
        clamps += hits

    tag = f"dfax-{expl.backend}"
    return [
        AttributionVector(scores[i], tag, t.ref, {"clamp_events": int(clamps[i])})
        for i, t in enumerate(targets)
    ]


def _clamped_rows(values):
    values = np.atleast_1d(values)
    clipped = np.clip(values, 0.0, 1.0)
    return clipped, (clipped != values).astype(np.int64)


def attribute(expl, target):
    return attribute_batch(expl, [target])[0]
