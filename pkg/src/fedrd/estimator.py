"""Single-site additive hazards estimation.

The estimator is closed form. With risk-set means ``xbar(t)`` and the
ordered observation times ``y_(1) <= ... <= y_(n)``::

    A     = sum_i sum_{l: y_l >= y_(i)} (x_l - xbar(y_(i)))^{(x)2} * (y_(i) - y_(i-1))
    D     = sum_i delta_i (x_i - xbar(y_i))
    Sigma = sum_i delta_i (x_i - xbar(y_i))^{(x)2}

    beta_hat = A^{-1} D,    cov(beta_hat) = A^{-1} Sigma A^{-1}

All three sums are kept raw (no 1/n). The normalizing constants cancel in
``beta_hat`` and the raw sandwich is already the finite-sample covariance
of ``beta_hat``, so sums from different sites can simply be added.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .data import SurvivalDataset, TimeGrid, build_time_grid
from .errors import LocalTimeMissingFromGrid, SingularInformation

__all__ = [
    "METHODS",
    "Accumulators",
    "FitResult",
    "centered_sums",
    "compute_components",
    "fit_from_accumulators",
    "fit_local",
    "risk_set_sums",
    "solve_spd",
    "xbar_lookup",
]

METHODS = ("local", "pooled", "meta", "fedrd_u", "fedrd_s")

PIVOT_RTOL = 1e-12
RESIDUAL_RTOL = 1e-8


@dataclass(frozen=True, eq=False)
class Accumulators:
    a_mat: np.ndarray
    d_vec: np.ndarray
    sigma_mat: np.ndarray
    n: int

    @property
    def p(self) -> int:
        return self.d_vec.shape[0]

    def __add__(self, other: "Accumulators") -> "Accumulators":
        return Accumulators(
            self.a_mat + other.a_mat,
            self.d_vec + other.d_vec,
            self.sigma_mat + other.sigma_mat,
            self.n + other.n,
        )


@dataclass(frozen=True, eq=False)
class FitResult:
    """Estimated risk differences with their covariance.

    Attributes
    ----------
    beta : ndarray, shape (p,)
        Additive hazard coefficients (hazard units per covariate unit).
    cov : ndarray, shape (p, p)
        Covariance of ``beta``.
    n : int
        Number of subjects that contributed.
    method : str
        One of ``local``, ``pooled``, ``meta``, ``fedrd_u``, ``fedrd_s``.
    """

    beta: np.ndarray
    cov: np.ndarray
    n: int
    method: str

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method tag {self.method!r}")
        if self.cov.shape != (self.beta.shape[0],) * 2:
            raise ValueError("cov shape does not match beta")

    @property
    def p(self) -> int:
        return self.beta.shape[0]

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def retag(self, method: str) -> "FitResult":
        return FitResult(self.beta, self.cov, self.n, method)


def _ldl(m: np.ndarray):
    p = m.shape[0]
    lower = np.eye(p)
    piv = np.zeros(p)
    diag_max = float(np.max(np.diag(m))) if p else 0.0
    tol = PIVOT_RTOL * max(diag_max, 0.0)
    for j in range(p):
        w = lower[j, :j] * piv[:j]
        piv[j] = m[j, j] - lower[j, :j] @ w
        if not piv[j] > tol:
            raise SingularInformation(
                f"pivot {piv[j]:.3g} at position {j} is not above 1e-12 x max diagonal ({diag_max:.3g})"
            )
        lower[j + 1 :, j] = (m[j + 1 :, j] - lower[j + 1 :, :j] @ w) / piv[j]
    return lower, piv


def _ldl_solve(lower, piv, rhs):
    y = solve_triangular(lower, rhs, lower=True, unit_diagonal=True)
    y = y / (piv[:, None] if y.ndim == 2 else piv)
    return solve_triangular(lower.T, y, lower=False, unit_diagonal=True)


def solve_spd(m, rhs) -> np.ndarray:
    """Solve ``m @ z = rhs`` for symmetric ``m`` by an LDL^T factorization.

    ``rhs`` may be a vector or a matrix of right-hand sides. Raises
    :class:`SingularInformation` when a pivot is not above ``1e-12`` times the
    largest diagonal entry, or when the solution misses the residual bound
    ``||m z - rhs||_inf <= 1e-8 ||rhs||_inf`` after one refinement step.
    """
    m = np.asarray(m, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    if rhs.shape[0] != m.shape[0]:
        raise ValueError("right-hand side does not match matrix dimension")
    lower, piv = _ldl(m)
    z = _ldl_solve(lower, piv, rhs)
    bound = RESIDUAL_RTOL * np.max(np.abs(rhs), initial=0.0)
    resid = rhs - m @ z
    if np.max(np.abs(resid), initial=0.0) > bound:
        z = z + _ldl_solve(lower, piv, resid)
        if np.max(np.abs(rhs - m @ z), initial=0.0) > bound:
            raise SingularInformation("matrix too ill-conditioned for a reliable solve")
    return z


def _reverse_cumsum(arr: np.ndarray) -> np.ndarray:
    # Row j holds the sum over rows j..n-1; an extra zero row sits at index n.
    out = np.zeros((arr.shape[0] + 1,) + arr.shape[1:])
    out[:-1] = np.cumsum(arr[::-1], axis=0)[::-1]
    return out


def risk_set_sums(time, x, grid_times):
    """Counts and covariate sums over ``{l : time_l >= t}`` for each grid time ``t``."""
    order = np.argsort(time, kind="stable")
    t = np.asarray(time)[order]
    first = np.searchsorted(t, grid_times, side="left")
    counts = t.shape[0] - first
    xsums = _reverse_cumsum(np.asarray(x)[order])[first]
    return counts, xsums


def xbar_lookup(grid: TimeGrid, xbars: np.ndarray, time) -> np.ndarray:
    """Risk-set means at the given times, matched to the grid by value.

    Raises :class:`LocalTimeMissingFromGrid` if a time is not a grid entry.
    """
    idx = np.searchsorted(grid.times, time, side="left")
    ok = idx < len(grid)
    ok[ok] = grid.times[idx[ok]] == np.asarray(time)[ok]
    if not np.all(ok):
        missing = np.asarray(time)[~ok]
        raise LocalTimeMissingFromGrid(f"{missing.size} local time(s) absent from grid, e.g. {missing[0]!r}")
    return xbars[idx]


def centered_sums(data: SurvivalDataset, grid: TimeGrid, xbars: np.ndarray) -> Accumulators:
    """Raw ``A``, ``D``, ``Sigma`` contributions of ``data`` given grid-wide means.

    ``xbars[i]`` is the risk-set mean at ``grid.times[i]``. The subjects in
    ``data`` may be only part of the population that defined ``xbars``; the
    contributions of disjoint parts add up to the whole. Covariates are
    shifted by ``xbars[0]`` before forming scatter sums; every sum is
    invariant to a common shift and the shift keeps them accurate.
    """
    center = xbars[0]
    z = data.x - center
    u = xbars - center
    order = np.argsort(data.time, kind="stable")
    zs = z[order]
    first = np.searchsorted(data.time[order], grid.times, side="left")
    counts = data.n - first
    s1 = _reverse_cumsum(zs)[first]
    s2 = _reverse_cumsum(zs[:, :, None] * zs[:, None, :])[first]
    cross = s1[:, :, None] * u[:, None, :]
    inner = s2 - cross - np.swapaxes(cross, 1, 2) + counts[:, None, None] * (u[:, :, None] * u[:, None, :])
    a = np.einsum("i,ijk->jk", grid.deltas, inner)
    a = 0.5 * (a + a.T)

    events = data.status == 1
    resid = z[events] - (xbar_lookup(grid, xbars, data.time[events]) - center)
    d = resid.sum(axis=0)
    sigma = resid.T @ resid
    return Accumulators(a, d, sigma, data.n)


def compute_components(data: SurvivalDataset) -> Accumulators:
    """Raw ``A``, ``D`` and ``Sigma`` sums for one dataset on its own time grid."""
    grid = build_time_grid(data.time)
    counts, xsums = risk_set_sums(data.time, data.x, grid.times)
    return centered_sums(data, grid, xsums / counts[:, None])


def fit_from_accumulators(acc: Accumulators, method: str) -> FitResult:
    """Closed-form estimate and sandwich covariance from raw sums."""
    beta = solve_spd(acc.a_mat, acc.d_vec)
    half = solve_spd(acc.a_mat, acc.sigma_mat)
    cov = solve_spd(acc.a_mat, half.T)
    cov = 0.5 * (cov + cov.T)
    return FitResult(beta, cov, int(acc.n), method)


def fit_local(data: SurvivalDataset) -> FitResult:
    if data.n_events == 0:
        raise SingularInformation("no observed events")
    return fit_from_accumulators(compute_components(data), "local")
