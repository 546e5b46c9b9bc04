"""Synthetic fixtures with known ground-truth importance."""

import numpy as np


def make_sign_dataset(n=2000, d=10, seed=0):
    """Standard-normal features; the class is ``x0 > 0``. Features 1..d-1 are noise."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    return x, (x[:, 0] > 0).astype(np.int64)


def make_blobs_1d(centers, n_per_class=50, spread=0.3, seed=0):
    rng = np.random.default_rng(seed)
    x = np.concatenate([c + spread * rng.standard_normal(n_per_class) for c in centers])
    y = np.repeat(np.arange(len(centers)), n_per_class)
    return x[:, None], y
