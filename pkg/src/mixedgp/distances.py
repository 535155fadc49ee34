"""Distances and positive semi-definite kernels between level encodings.

Levels carrying empirical distributions are compared with the 1-D Wasserstein
distance (quantile estimator), its sliced extension in R^d, or the energy-
kernel maximum mean discrepancy; histogram payloads with chi-square, total
variation, or squared Hellinger divergences; scalar summaries with squared
Euclidean distance.  A distance matrix D is turned into a Gram matrix by the
substitution kernel T_ij = exp(-gamma * dist_ij^beta), which is positive
semi-definite for every metric implemented here (beta in [0, 2] where it
applies, fixed exponent 1 for MMD^2 and histogram divergences).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .encoders import EmpiricalDistribution, EncodingTable, Histogram
from .errors import ConfigError, DataError

METRICS = ("w2", "sw2", "mmd2", "chi2", "tv", "hellinger2", "euclid2")
HISTOGRAM_METRICS = ("chi2", "tv", "hellinger2")

DEFAULT_QUANTILES = 100
DEFAULT_DIRECTIONS = 100

_METRIC_KINDS = {
    "w2": ("distributional_1d",),
    "sw2": ("distributional_1d", "distributional_md"),
    "mmd2": ("distributional_1d", "distributional_md"),
    "chi2": ("histogram",),
    "tv": ("histogram",),
    "hellinger2": ("histogram",),
    "euclid2": ("mean", "mean_std", "onehot"),
}


def _as_distribution(p) -> EmpiricalDistribution:
    if isinstance(p, EmpiricalDistribution):
        return p
    return EmpiricalDistribution(np.asarray(p, dtype=float))


def _quantile_indices(m: int, n_quantiles: int) -> np.ndarray:
    """0-based order-statistic index of the right-continuous ecdf inverse.

    F^{-1}(t) = x_(ceil(t*m)) on the sorted sample, evaluated at the grid
    t_q = (q - 0.5)/Q for q = 1..Q.
    """
    t = (np.arange(1, n_quantiles + 1) - 0.5) / n_quantiles
    return np.minimum(np.ceil(t * m).astype(np.int64) - 1, m - 1)


def _wasserstein_power_sorted(a: np.ndarray, b: np.ndarray, r: float, n_quantiles: int) -> float:
    """Mean |quantile difference|^r between two sorted 1-D samples.

    When both samples share a size m <= n_quantiles the quantile grid visits
    every order statistic equally often, so the exact sorted-sample formula
    is used instead of the grid.
    """
    m1, m2 = a.size, b.size
    if m1 == m2 and m1 <= n_quantiles:
        diffs = np.abs(a - b)
    else:
        qa = a[_quantile_indices(m1, n_quantiles)]
        qb = b[_quantile_indices(m2, n_quantiles)]
        diffs = np.abs(qa - qb)
    return float(np.mean(diffs ** r))


def wasserstein_1d(p, q, r: float = 2.0, n_quantiles: int = DEFAULT_QUANTILES) -> float:
    """Order-r Wasserstein distance between univariate empirical distributions.

    Computes ``((1/Q) sum_q |F_P^{-1}(t_q) - F_Q^{-1}(t_q)|^r)^(1/r)`` on the
    grid t_q = (q - 0.5)/Q, with empirical quantiles taken as the
    right-continuous inverse of the step ecdf.

    Parameters
    ----------
    p, q : EmpiricalDistribution or array_like
        Univariate samples.
    r : float
        Order of the distance, r >= 1.
    n_quantiles : int
        Grid size Q.

    Returns
    -------
    float
        Nonnegative, symmetric distance estimate.
    """
    if r < 1:
        raise ConfigError(f"order r must be >= 1, got {r}")
    if n_quantiles < 1:
        raise ConfigError("n_quantiles must be >= 1")
    P, Q = _as_distribution(p), _as_distribution(q)
    if P.dim != 1 or Q.dim != 1:
        raise DataError("wasserstein_1d requires univariate distributions")
    return _wasserstein_power_sorted(P.sorted_1d, Q.sorted_1d, r, n_quantiles) ** (1.0 / r)


def _sphere_directions(rng: np.random.Generator, n_directions: int, dim: int) -> np.ndarray:
    v = rng.standard_normal((n_directions, dim))
    norms = np.linalg.norm(v, axis=1)
    while np.any(norms == 0.0):
        bad = norms == 0.0
        v[bad] = rng.standard_normal((int(bad.sum()), dim))
        norms = np.linalg.norm(v, axis=1)
    return v / norms[:, None]


def _sliced_power_sorted(sp: np.ndarray, sq: np.ndarray, r: float, n_quantiles: int) -> np.ndarray:
    """Per-direction mean |quantile difference|^r for pre-sorted projections."""
    m1, m2 = sp.shape[0], sq.shape[0]
    if m1 == m2 and m1 <= n_quantiles:
        diffs = np.abs(sp - sq)
    else:
        diffs = np.abs(sp[_quantile_indices(m1, n_quantiles)] - sq[_quantile_indices(m2, n_quantiles)])
    return np.mean(diffs ** r, axis=0)


def sliced_wasserstein(p, q, r: float = 2.0, n_directions: int = DEFAULT_DIRECTIONS,
                       seed: int = 0, n_quantiles: int = DEFAULT_QUANTILES) -> float:
    """Sliced order-r Wasserstein distance by Monte-Carlo over directions.

    Projects both sample clouds onto ``n_directions`` directions drawn
    uniformly on the unit sphere from ``seed`` and averages the r-th powers
    of the 1-D distances: ``((1/R) sum_j W_r^r(proj_j P, proj_j Q))^(1/r)``.
    For d=1 the projections are just sign flips, so the result equals
    :func:`wasserstein_1d` exactly and no directions are drawn.
    """
    if n_directions < 1:
        raise ConfigError("n_directions must be >= 1")
    P, Q = _as_distribution(p), _as_distribution(q)
    if P.dim != Q.dim:
        raise DataError(f"dimension mismatch: {P.dim} vs {Q.dim}")
    if P.dim == 1:
        return wasserstein_1d(P, Q, r=r, n_quantiles=n_quantiles)
    if r < 1:
        raise ConfigError(f"order r must be >= 1, got {r}")
    dirs = _sphere_directions(np.random.default_rng(seed), n_directions, P.dim)
    sp = np.sort(P.samples @ dirs.T, axis=0)
    sq = np.sort(Q.samples @ dirs.T, axis=0)
    return float(np.mean(_sliced_power_sorted(sp, sq, r, n_quantiles)) ** (1.0 / r))


def energy_base_kernel(x, x2) -> float:
    """Hyperparameter-free base kernel k(x, x') = (|x| + |x'| - |x - x'|)/2.

    The associated feature map embeds points by distance to the origin, so
    k(0, x) = 0 and k(x, x) = |x|.
    """
    a = np.atleast_1d(np.asarray(x, dtype=float))
    b = np.atleast_1d(np.asarray(x2, dtype=float))
    if a.shape != b.shape:
        raise DataError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(0.5 * (np.linalg.norm(a) + np.linalg.norm(b) - np.linalg.norm(a - b)))


def mmd_squared(p, q) -> float:
    """Squared maximum mean discrepancy under the energy base kernel.

    V-statistic plug-in of E k(X,X') + E k(Y,Y') - 2 E k(X,Y), which
    simplifies to ``E|X-Y| - E|X-X'|/2 - E|Y-Y'|/2`` (half the energy
    distance).  Nonnegative up to roundoff.
    """
    P, Q = _as_distribution(p), _as_distribution(q)
    if P.dim != Q.dim:
        raise DataError(f"dimension mismatch: {P.dim} vs {Q.dim}")
    cross = cdist(P.samples, Q.samples).mean()
    within_p = cdist(P.samples, P.samples).mean()
    within_q = cdist(Q.samples, Q.samples).mean()
    return float(cross - 0.5 * within_p - 0.5 * within_q)


def histogram_psi(a, b, kind: str) -> float:
    """Divergence between two class-frequency vectors.

    ``chi2``: sum (a_m - b_m)^2 / (a_m + b_m), empty bins contributing 0;
    ``tv``: sum |a_m - b_m|; ``hellinger2``: sum (sqrt(a_m) - sqrt(b_m))^2.
    """
    if kind not in HISTOGRAM_METRICS:
        raise ConfigError(f"unknown histogram divergence {kind!r}")
    fa = a.freqs if isinstance(a, Histogram) else np.asarray(a, dtype=float)
    fb = b.freqs if isinstance(b, Histogram) else np.asarray(b, dtype=float)
    if fa.shape != fb.shape:
        raise DataError(f"length mismatch: {fa.shape} vs {fb.shape}")
    if kind == "chi2":
        denom = fa + fb
        num = (fa - fb) ** 2
        return float(np.sum(np.where(denom > 0, num / np.where(denom > 0, denom, 1.0), 0.0)))
    if kind == "tv":
        return float(np.sum(np.abs(fa - fb)))
    return float(np.sum((np.sqrt(fa) - np.sqrt(fb)) ** 2))


@dataclass(frozen=True)
class LevelDistanceMatrix:
    """Symmetric matrix of squared distances between level payloads.

    ``values[i, j]`` stores W2^2, SW2^2, MMD^2, a histogram divergence, or a
    squared Euclidean distance depending on ``metric``.  For sliced metrics
    the direction count and seed used to draw the shared direction set are
    recorded so the matrix can be reproduced or extended exactly.
    """

    metric: str
    labels: tuple[str, ...]
    values: np.ndarray
    n_directions: int | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}")
        v = np.asarray(self.values, dtype=float)
        L = len(self.labels)
        if v.shape != (L, L):
            raise DataError(f"distance matrix shape {v.shape} does not match {L} labels")
        if not np.array_equal(v, v.T):
            raise DataError("distance matrix must be symmetric")
        if np.any(np.abs(np.diag(v)) > 1e-12):
            raise DataError("distance matrix diagonal must be 0")
        if np.any(v < -1e-12):
            raise DataError("distance matrix entries must be >= -1e-12")
        v = np.clip(v, 0.0, None)
        np.fill_diagonal(v, 0.0)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n_levels(self) -> int:
        return len(self.labels)

    def normalized(self) -> np.ndarray:
        """Values divided by the largest off-diagonal entry (if positive)."""
        if self.n_levels < 2:
            return self.values.copy()
        off = self.values[~np.eye(self.n_levels, dtype=bool)]
        peak = off.max()
        return self.values / peak if peak > 0 else self.values.copy()


def level_distance_matrix(table: EncodingTable, metric: str, r: float = 2.0,
                          n_quantiles: int = DEFAULT_QUANTILES,
                          n_directions: int = DEFAULT_DIRECTIONS,
                          seed: int = 0) -> LevelDistanceMatrix:
    """All-pairs squared distances between the payloads of an encoding table.

    Parameters
    ----------
    table : EncodingTable
    metric : str
        One of ``w2``, ``sw2``, ``mmd2``, ``chi2``, ``tv``, ``hellinger2``,
        ``euclid2``; must be compatible with the table kind.
    r, n_quantiles : Wasserstein estimator parameters (``w2``/``sw2``).
    n_directions, seed : int
        Shared direction set for ``sw2``; one draw serves the whole matrix
        so the sliced distances stay jointly embeddable.
    """
    if metric not in METRICS:
        raise ConfigError(f"unknown metric {metric!r}")
    if table.kind not in _METRIC_KINDS[metric]:
        raise ConfigError(f"metric {metric!r} incompatible with table kind {table.kind!r}")
    L = table.n_levels
    D = np.zeros((L, L))
    meta = {}

    if metric == "w2" or (metric == "sw2" and table.payload_dim == 1):
        sorted_views = [p.sorted_1d for p in table.payloads]
        for i in range(L):
            for j in range(i + 1, L):
                w_pow = _wasserstein_power_sorted(sorted_views[i], sorted_views[j], r, n_quantiles)
                D[i, j] = D[j, i] = w_pow ** (2.0 / r)
        if metric == "sw2":
            meta = {"n_directions": n_directions, "seed": seed}
    elif metric == "sw2":
        dim = table.payload_dim
        dirs = _sphere_directions(np.random.default_rng(seed), n_directions, dim)
        proj = [np.sort(p.samples @ dirs.T, axis=0) for p in table.payloads]
        for i in range(L):
            for j in range(i + 1, L):
                w_pow = np.mean(_sliced_power_sorted(proj[i], proj[j], r, n_quantiles))
                D[i, j] = D[j, i] = w_pow ** (2.0 / r)
        meta = {"n_directions": n_directions, "seed": seed}
    elif metric == "mmd2":
        clouds = [p.samples for p in table.payloads]
        within = [cdist(c, c).mean() for c in clouds]
        for i in range(L):
            for j in range(i + 1, L):
                v = cdist(clouds[i], clouds[j]).mean() - 0.5 * (within[i] + within[j])
                D[i, j] = D[j, i] = v
    elif metric in HISTOGRAM_METRICS:
        for i in range(L):
            for j in range(i + 1, L):
                D[i, j] = D[j, i] = histogram_psi(table.payloads[i], table.payloads[j], metric)
    else:  # euclid2
        if table.kind == "onehot":
            # distances keyed on labels, so tables extended with new levels
            # stay consistent regardless of payload vector length
            D = 2.0 * (1.0 - np.eye(L))
        else:
            vecs = np.vstack([np.asarray(p, dtype=float) for p in table.payloads])
            D = cdist(vecs, vecs, metric="sqeuclidean")

    return LevelDistanceMatrix(metric, table.levels, D, **meta)


@dataclass(frozen=True)
class SubstitutionKernelParams:
    """Parameters of the distance-substitution kernel exp(-gamma * dist^beta).

    ``beta`` applies to the w2/sw2/euclid2 metrics and must lie in [0, 2] to
    keep the kernel positive semi-definite; mmd2 and the histogram
    divergences enter with fixed exponent 1.
    """

    gamma: float
    beta: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.gamma) or self.gamma <= 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if not 0.0 <= self.beta <= 2.0:
            raise ConfigError(f"beta must lie in [0, 2], got {self.beta}")


def substitution_exponent(D: LevelDistanceMatrix, beta: float) -> np.ndarray:
    """The matrix E with T = exp(-gamma * E) for the substitution kernel.

    For squared-distance metrics (w2, sw2, euclid2) E = (D)^{beta/2}, which
    yields exp(-gamma * dist^beta); MMD^2 and histogram divergences enter
    untouched.
    """
    base = D.values
    if D.metric in ("w2", "sw2", "euclid2"):
        return base ** (beta / 2.0)
    return base.copy()


def substitution_gram(D: LevelDistanceMatrix, params: SubstitutionKernelParams) -> np.ndarray:
    """Gram matrix of the substitution kernel over the table's levels.

    The diagonal is exactly 1 and entries lie in (0, 1].  The result is
    positive semi-definite for every supported metric; if Monte-Carlo noise
    in a sliced estimate leaves the smallest eigenvalue marginally below
    -1e-8, a 1e-10 diagonal jitter is added with a warning.
    """
    T = np.exp(-params.gamma * substitution_exponent(D, params.beta))
    np.fill_diagonal(T, 1.0)
    if np.linalg.eigvalsh(T)[0] < -1e-8:
        warnings.warn(f"substitution gram for metric {D.metric!r} marginally indefinite; "
                      "adding 1e-10 diagonal jitter", RuntimeWarning)
        T = T + 1e-10 * np.eye(T.shape[0])
    return T


def distance_matrix_to_csv(D: LevelDistanceMatrix, normalize: bool = False) -> str:
    """Render a distance matrix as CSV with level labels as header column/row."""
    vals = D.normalized() if normalize else D.values
    lines = ["level," + ",".join(D.labels)]
    for lab, row in zip(D.labels, vals):
        lines.append(lab + "," + ",".join(format(v, ".17g") for v in row))
    return "\n".join(lines) + "\n"


def distance_matrix_to_json(D: LevelDistanceMatrix, normalize: bool = False) -> dict:
    """JSON-compatible dict form of a distance matrix."""
    vals = D.normalized() if normalize else D.values
    out = {"metric": D.metric, "labels": list(D.labels), "normalized": bool(normalize),
           "values": [[float(v) for v in row] for row in vals]}
    if D.n_directions is not None:
        out["n_directions"] = int(D.n_directions)
        out["seed"] = int(D.seed)
    return out
