"""SiNNE used as a one-dimensional density estimator.

Each of ``t`` ensemble members draws ``psi`` support points without
replacement and places a closed ball on every drawn point, with radius equal
to the distance to its nearest neighbour inside the same subsample. The
density of a query is the fraction of members in which the query falls inside
at least one ball, so dense regions (many small, overlapping balls drawn
there) score high and regions away from the data score 0.
"""

from dataclasses import dataclass

import numpy as np

from dfax.errors import InsufficientSupport, InvalidParameter


@dataclass(frozen=True)
class SinneParams:
    psi: int = 2
    t: int = 1000
    seed: int = 0

    def __post_init__(self):
        if int(self.psi) < 2:
            raise InvalidParameter(f"psi must be at least 2, got {self.psi}")
        if int(self.t) < 1:
            raise InvalidParameter(f"ensemble size must be at least 1, got {self.t}")


@dataclass(frozen=True, eq=False)
class SinneModel1D:
    centers: np.ndarray  # (t, psi)
    radii: np.ndarray  # (t, psi)

    def __post_init__(self):
        for name in ("centers", "radii"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.centers.shape != self.radii.shape or self.centers.ndim != 2:
            raise InvalidParameter("centers and radii must be matching (t, psi) arrays")

    @property
    def t(self):
        return self.centers.shape[0]

    @property
    def psi(self):
        return self.centers.shape[1]

    @property
    def zero_radius_balls(self):
        """Balls collapsed to a point because the subsample held duplicates."""
        return int(np.count_nonzero(self.radii == 0))

    def members(self):
        return [list(zip(c.tolist(), r.tolist())) for c, r in zip(self.centers, self.radii)]

    def density(self, queries):
        q = np.asarray(queries, dtype=float)
        flat = q.ravel()
        out = np.empty(flat.size)
        lo = self.centers - self.radii
        hi = self.centers + self.radii
        step = max(1, (1 << 20) // self.centers.size)
        for i in range(0, flat.size, step):
            x = flat[i : i + step, None, None]
            covered = ((x >= lo) & (x <= hi)).any(axis=2)
            out[i : i + step] = covered.mean(axis=1)
        return float(out[0]) if q.ndim == 0 else out.reshape(q.shape)


def nearest_neighbour_radii(centers):
    centers = np.asarray(centers, dtype=float)
    gaps = np.abs(centers[:, :, None] - centers[:, None, :])
    idx = np.arange(centers.shape[1])
    gaps[:, idx, idx] = np.inf
    return gaps.min(axis=2)


def fit_sinne(support_points, params):
    pts = np.asarray(support_points, dtype=float).ravel()
    psi, t = int(params.psi), int(params.t)
    if pts.size < psi:
        raise InsufficientSupport(f"support of size {pts.size} is smaller than psi={psi}")
    rng = np.random.default_rng(params.seed)
    picks = np.empty((t, psi), dtype=np.int64)
    for i in range(t):
        picks[i] = rng.choice(pts.size, size=psi, replace=False)
    centers = pts[picks]
    return SinneModel1D(centers, nearest_neighbour_radii(centers))


def sinne_density(model, query):
    return model.density(query)
