"""Shared domain types: datasets, labels, targets, attributions, rankings."""

import zlib
from dataclasses import dataclass, field

import numpy as np

from dfax.errors import DimensionMismatch, InvalidData

STANDARDIZE_TOL = 1e-6


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """An n x d matrix of finite reals with unique feature names.

    ``constant`` flags columns that had zero spread before standardization;
    DFAX assigns those features a score of exactly 0.
    """

    rows: np.ndarray
    feature_names: tuple = None
    constant: np.ndarray = None
    standardized: bool = False

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2:
            raise InvalidData(f"dataset must be 2-D, got shape {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise InvalidData("dataset contains non-finite values")
        n, d = rows.shape
        names = self.feature_names
        if names is None:
            names = tuple(f"x{j}" for j in range(d))
        names = tuple(str(s) for s in names)
        if len(names) != d:
            raise InvalidData(f"{len(names)} feature names for {d} columns")
        if len(set(names)) != d:
            raise InvalidData("feature names must be unique")
        constant = self.constant
        if constant is None:
            constant = np.zeros(d, dtype=bool) if n == 0 else np.ptp(rows, axis=0) == 0
        constant = _frozen(constant, dtype=bool)
        if constant.shape != (d,):
            raise InvalidData("constant mask has the wrong length")
        object.__setattr__(self, "rows", _frozen(rows))
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "constant", constant)
        if self.standardized and n > 0:
            live = ~constant
            mu = rows[:, live].mean(axis=0)
            sd = rows[:, live].std(axis=0)
            if np.any(np.abs(mu) > STANDARDIZE_TOL) or np.any(np.abs(sd - 1) > STANDARDIZE_TOL):
                raise InvalidData("columns flagged standardized do not have mean 0 / std 1")

    @property
    def n(self):
        return self.rows.shape[0]

    @property
    def d(self):
        return self.rows.shape[1]

    def column(self, j):
        return self.rows[:, j]


@dataclass(frozen=True, eq=False)
class LabelVector:
    """Dense integer class ids in ``0..m-1`` (predictions or ground truth)."""

    labels: np.ndarray
    m: int = None

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise InvalidData("labels must be 1-D")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise InvalidData("labels must be integers")
        labels = labels.astype(np.int64)
        m = self.m
        if m is None:
            m = int(labels.max()) + 1 if labels.size else 0
        if labels.size and (labels.min() < 0 or labels.max() >= m):
            raise InvalidData(f"labels must lie in 0..{m - 1}")
        object.__setattr__(self, "labels", _frozen(labels, dtype=np.int64))
        object.__setattr__(self, "m", int(m))

    def __len__(self):
        return self.labels.shape[0]

    def counts(self):
        return np.bincount(self.labels, minlength=self.m)


@dataclass(frozen=True, eq=False)
class TargetInstance:
    values: np.ndarray
    predicted_class: int
    ref: str = "0"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise InvalidData("target values must be 1-D")
        if not np.all(np.isfinite(values)):
            raise InvalidData("target contains non-finite values")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "predicted_class", int(self.predicted_class))
        object.__setattr__(self, "ref", str(self.ref))

    @property
    def d(self):
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class AttributionVector:
    scores: np.ndarray
    method_tag: str = ""
    target_ref: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float)
        if scores.ndim != 1:
            raise InvalidData("scores must be 1-D")
        if not np.all(np.isfinite(scores)):
            raise InvalidData("attribution scores must be finite")
        object.__setattr__(self, "scores", _frozen(scores))

    @property
    def d(self):
        return self.scores.shape[0]


@dataclass(frozen=True, eq=False)
class AttributionRanking:
    """Feature indices, most important first."""

    order: np.ndarray

    def __post_init__(self):
        order = np.asarray(self.order, dtype=np.int64)
        if order.ndim != 1 or not np.array_equal(np.sort(order), np.arange(order.size)):
            raise InvalidData("ranking must be a permutation of 0..d-1")
        object.__setattr__(self, "order", _frozen(order, dtype=np.int64))

    @property
    def d(self):
        return self.order.shape[0]


@dataclass(frozen=True, eq=False)
class StandardizationParams:
    means: np.ndarray
    stds: np.ndarray
    constant: np.ndarray

    def apply(self, raw):
        """Map raw rows (or a single row) into standardized units."""
        raw = np.asarray(raw, dtype=float)
        if raw.shape[-1] != self.means.shape[0]:
            raise DimensionMismatch(
                f"expected {self.means.shape[0]} features, got {raw.shape[-1]}"
            )
        if not np.all(np.isfinite(raw)):
            raise InvalidData("non-finite values in input")
        out = (raw - self.means) / self.stds
        return np.where(self.constant, 0.0, out)

    def invert(self, rows):
        rows = np.asarray(rows, dtype=float)
        return np.where(self.constant, self.means, rows * self.stds + self.means)


def standardize(raw, feature_names=None):
    """Standardize columns to mean 0 and (population) std 1.

    Constant columns become all zeros and are flagged in both the returned
    dataset and the parameters.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2:
        raise InvalidData(f"expected a 2-D matrix, got shape {raw.shape}")
    if raw.shape[0] < 2:
        raise InvalidData("standardization needs at least 2 rows")
    if not np.all(np.isfinite(raw)):
        raise InvalidData("matrix contains non-finite values")
    means = raw.mean(axis=0)
    constant = np.ptp(raw, axis=0) == 0
    # scale deviations first so tiny or huge columns neither underflow nor overflow
    dev = raw - means
    scale = np.where(constant, 1.0, np.abs(dev).max(axis=0))
    stds = np.where(constant, 1.0, scale * np.sqrt(np.mean((dev / scale) ** 2, axis=0)))
    params = StandardizationParams(_frozen(means), _frozen(stds), _frozen(constant, dtype=bool))
    data = Dataset(params.apply(raw), feature_names, constant=constant, standardized=True)
    return data, params


def unstandardize(data, params):
    return params.invert(data.rows)


def rank_features(attr):
    """Order features by descending score; ties go to the lower index."""
    scores = attr.scores if isinstance(attr, AttributionVector) else np.asarray(attr, dtype=float)
    # stable sort on the negated score keeps ascending index within ties
    return AttributionRanking(np.argsort(-scores, kind="stable"))


def make_targets(rows, predicted_classes, refs=None):
    rows = np.asarray(rows, dtype=float)
    if refs is None:
        refs = [str(i) for i in range(rows.shape[0])]
    return [TargetInstance(r, c, ref) for r, c, ref in zip(rows, predicted_classes, refs)]


def derive_seed(master, *keys):
    """Child seed for a tuple of keys (ints, or strings hashed with CRC-32).

    Uses ``numpy.random.SeedSequence`` spawn keys, so a child seed depends only
    on ``(master, keys)`` and never on the order in which work is scheduled.
    """
    spawn = tuple(k if isinstance(k, (int, np.integer)) else zlib.crc32(str(k).encode()) for k in keys)
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in spawn))
    return int(ss.generate_state(1, np.uint64)[0])
