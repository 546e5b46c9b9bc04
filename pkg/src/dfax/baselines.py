"""Reference attribution methods used as benchmark baselines.

* :func:`shapley_exact` enumerates every feature subset and retrains a
  built-in classifier on each (Shapley regression values). Exponential in d.
* :func:`shapley_sampling` keeps the trained model and estimates the value of
  a subset by averaging the model over hybrid rows (target values on the
  subset, background values elsewhere). Those hybrid rows are synthetic, so
  its output is tagged as not built from the unmodified data.
* :func:`pfi` is global permutation feature importance (accuracy drop).
* :func:`random_attribution` is the sanity-check baseline.
"""

from math import factorial

import numpy as np

from dfax import guard
from dfax.core import AttributionVector, Dataset, LabelVector
from dfax.errors import InvalidParameter, ModelUnavailable, SubsetBlowup
from dfax.model import train_builtin

MAX_EXACT_FEATURES = 15


def shapley_weights(d):
    """``w[k] = k! (d-k-1)! / d!`` for subsets of size k = 0..d-1."""
    return np.array([factorial(k) * factorial(d - k - 1) / factorial(d) for k in range(d)])


def _subset_key(subset):
    return tuple(sorted(int(j) for j in subset))


class RetrainEvaluator:
    """Value of a subset = target-class probability of a model retrained on it.

    The empty subset has no model; its value is the frequency of the target
    class in the training labels. Results are cached per (subset, target).
    """

    def __init__(self, data, labels, kind="nearest-centroid", seed=0):
        self.rows = data.rows if isinstance(data, Dataset) else np.asarray(data, dtype=float)
        self.labels = labels if isinstance(labels, LabelVector) else LabelVector(labels)
        self.kind = kind
        self.seed = seed
        self._models = {}
        self.trainings = 0

    def model(self, subset):
        key = _subset_key(subset)
        if key not in self._models:
            # column slice is a fresh array; the shared dataset is never touched
            self._models[key] = train_builtin(self.kind, self.rows[:, list(key)], self.labels, self.seed)
            self.trainings += 1
        return self._models[key]

    def __call__(self, subset, target):
        key = _subset_key(subset)
        c = target.predicted_class
        if not key:
            return float(self.labels.counts()[c] / len(self.labels))
        probs = self.model(key).predict_proba(target.values[list(key)][None, :])
        return float(probs[0, c])


class MarginalEvaluator:
    """Value of a subset = mean model output over hybrid rows."""

    def __init__(self, model, background):
        self.model = model
        self.background = np.asarray(background, dtype=float)

    def hybrids(self, subset, target):
        rows = self.background.copy()
        idx = list(_subset_key(subset))
        rows[:, idx] = target.values[idx]
        guard.record_synthesized(rows.shape[0])
        return rows

    def __call__(self, subset, target):
        probs = _query(self.model, self.hybrids(subset, target))
        return float(probs[:, target.predicted_class].mean())


def _query(model, rows):
    try:
        return model.predict_proba(rows)
    except ModelUnavailable:
        raise
    except Exception as err:  # noqa: BLE001 - any failure inside a model is "unavailable"
        raise ModelUnavailable(f"model query failed: {err}") from err


def _all_subset_values(d, value):
    """``value(subset)`` for every bitmask 0..2^d-1."""
    out = np.empty(1 << d)
    for mask in range(1 << d):
        out[mask] = value([j for j in range(d) if mask >> j & 1])
    return out


def _combine(values, d):
    weights = shapley_weights(d)
    sizes = np.array([bin(mask).count("1") for mask in range(1 << d)])
    phi = np.zeros(d)
    for s in range(d):
        bit = 1 << s
        without = np.array([mask for mask in range(1 << d) if not mask & bit])
        phi[s] = np.sum(weights[sizes[without]] * (values[without | bit] - values[without]))
    return phi


def shapley_exact(data, labels, target, evaluator=None, kind="nearest-centroid", seed=0):
    d = data.d if isinstance(data, Dataset) else np.asarray(data).shape[1]
    if d > MAX_EXACT_FEATURES:
        raise SubsetBlowup(
            f"exact Shapley over d={d} features needs 2^{d} retrainings; use shapley_sampling"
        )
    if evaluator is None:
        evaluator = RetrainEvaluator(data, labels, kind=kind, seed=seed)
    values = _all_subset_values(d, lambda subset: evaluator(subset, target))
    return AttributionVector(
        _combine(values, d),
        "shapley-exact",
        target.ref,
        {"full_value": float(values[-1]), "empty_value": float(values[0])},
    )


def sample_background(data, n_background=100, seed=0):
    rows = data.rows if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    if n_background >= rows.shape[0]:
        return rows.copy()
    idx = np.sort(np.random.default_rng(seed).choice(rows.shape[0], n_background, replace=False))
    return rows[idx]


def shapley_sampling(data, labels, target, model, n_subsets=256, n_background=100, seed=0,
                     background=None):
    """Monte-Carlo Shapley values with marginal (hybrid-row) evaluation.

    Draws ``n_subsets`` random feature orderings; walking each ordering adds
    one feature at a time, and the change in value is that feature's marginal
    contribution. When ``n_subsets`` reaches ``2^(d-1)`` (every subset per
    feature) the power set is enumerated exactly instead.
    """
    if n_subsets < 1:
        raise InvalidParameter("n_subsets must be at least 1")
    rows = data.rows if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    d = rows.shape[1]
    if background is None:
        background = sample_background(rows, n_background, seed)
    ev = MarginalEvaluator(model, background)
    # hybrid rows splice background values into the target, off the data distribution
    meta = {"on_distribution": False, "n_subsets": int(n_subsets)}

    if d <= MAX_EXACT_FEATURES and n_subsets >= 1 << (d - 1):
        values = _all_subset_values(d, lambda subset: ev(subset, target))
        meta["enumerated"] = True
        return AttributionVector(_combine(values, d), "shapley-sampling", target.ref, meta)

    rng = np.random.default_rng(seed)
    orders = np.stack([rng.permutation(d) for _ in range(n_subsets)])
    c = target.predicted_class
    nb = background.shape[0]
    phi = np.zeros(d)
    batch = max(1, 4096 // ((d + 1) * nb))
    for start in range(0, n_subsets, batch):
        block = orders[start : start + batch]
        # rows for every prefix of every ordering: (orderings, d+1, background)
        stack = np.broadcast_to(background, (len(block), d + 1, nb, d)).copy()
        for b, order in enumerate(block):
            for k in range(1, d + 1):
                stack[b, k:, :, order[k - 1]] = target.values[order[k - 1]]
        flat = stack.reshape(-1, d)
        guard.record_synthesized(flat.shape[0])
        vals = _query(model, flat)[:, c].reshape(len(block), d + 1, nb).mean(axis=2)
        gains = np.diff(vals, axis=1)
        for b, order in enumerate(block):
            phi[order] += gains[b]
    meta["enumerated"] = False
    return AttributionVector(phi / n_subsets, "shapley-sampling", target.ref, meta)


def _accuracy(model, rows, labels):
    return float(np.mean(np.argmax(_query(model, rows), axis=1) == labels))


def pfi(data, labels, model, n_repeats=5, seed=0, permute=None):
    """Global permutation importance: baseline accuracy minus permuted accuracy.

    ``permute(rng, n) -> index array`` overrides the shuffling (test hook).
    """
    rows = data.rows if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    y = labels.labels if isinstance(labels, LabelVector) else np.asarray(labels)
    if rows.shape[0] < 2:
        raise InvalidParameter("permutation importance needs at least 2 rows")
    if permute is None:
        permute = lambda rng, n: rng.permutation(n)  # noqa: E731
    rng = np.random.default_rng(seed)
    base = _accuracy(model, rows, y)
    scores = np.zeros(rows.shape[1])
    for s in range(rows.shape[1]):
        accs = []
        for _ in range(n_repeats):
            shuffled = rows.copy()
            shuffled[:, s] = rows[permute(rng, rows.shape[0]), s]
            guard.record_synthesized(rows.shape[0])
            accs.append(_accuracy(model, shuffled, y))
        scores[s] = base - np.mean(accs)
    return AttributionVector(scores, "pfi", "global", {"baseline_accuracy": base})


def random_attribution(d, seed=0, target_ref=""):
    return AttributionVector(np.random.default_rng(seed).random(d), "random", target_ref)
