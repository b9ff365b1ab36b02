"""Site and coordinator steps of the two federated protocols.

Unstratified protocol (common baseline hazard, three rounds)::

    site         SortedTimes       -> coordinator   merge into a global TimeGrid
    coordinator  TimeGrid          -> sites
    site         RiskAggregate     -> coordinator   pooled risk-set means
    coordinator  XbarSeries        -> sites
    site         SiteContributionU -> coordinator   add up, solve

Stratified protocol (site-specific baselines, one round)::

    site         SiteSummaryS      -> coordinator   add up, solve

Every function here is pure; moving payloads between processes is the job
of :mod:`fedrd.transport`. Payloads are raw sums, so the coordinator only
ever adds them. The unstratified result equals the pooled fit on the
concatenated data, not just asymptotically.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import SurvivalDataset, TimeGrid, build_time_grid
from .errors import DataError, LocalTimeMissingFromGrid, ProtocolError, ZeroRiskSet
from .estimator import (
    Accumulators,
    FitResult,
    centered_sums,
    compute_components,
    fit_from_accumulators,
    risk_set_sums,
)

log = logging.getLogger(__name__)

__all__ = [
    "RiskAggregate",
    "SiteContributionU",
    "SiteSummaryS",
    "SortedTimes",
    "XbarSeries",
    "coordinator_assemble_s",
    "coordinator_assemble_u",
    "coordinator_merge_times",
    "coordinator_xbar",
    "fit_fedrd_s",
    "fit_fedrd_u",
    "site_diagnostics",
    "site_round1_u",
    "site_round2_u",
    "site_round3_u",
    "site_summary_s",
]


@dataclass(frozen=True, eq=False)
class SortedTimes:
    site_id: str
    times: np.ndarray


@dataclass(frozen=True, eq=False)
class RiskAggregate:
    site_id: str
    counts: np.ndarray
    xsums: np.ndarray


@dataclass(frozen=True, eq=False)
class XbarSeries:
    grid: TimeGrid
    xbars: np.ndarray


@dataclass(frozen=True, eq=False)
class SiteContributionU:
    site_id: str
    a_part: np.ndarray
    d_part: np.ndarray
    sigma_part: np.ndarray
    n_k: int


@dataclass(frozen=True, eq=False)
class SiteSummaryS:
    site_id: str
    a_k: np.ndarray
    d_k: np.ndarray
    sigma_k: np.ndarray
    n_k: int


def _site_id(data: SurvivalDataset, site_id: str | None) -> str:
    if site_id is not None:
        return site_id
    return data.site_id if data.site_id is not None else "site"


def _sum(arrays):
    arrays = list(arrays)
    total = arrays[0].copy()
    for arr in arrays[1:]:
        total += arr
    return total


# ---------------------------------------------------------------- unstratified


def site_round1_u(data: SurvivalDataset, site_id: str | None = None) -> SortedTimes:
    """Observed times in ascending order, with subject labels dropped."""
    return SortedTimes(_site_id(data, site_id), np.sort(data.time, kind="stable"))


def coordinator_merge_times(all_times: Sequence[SortedTimes]) -> TimeGrid:
    if not all_times or all(t.times.size == 0 for t in all_times):
        raise DataError("no observed times to merge")
    return build_time_grid(np.concatenate([t.times for t in all_times]))


def _check_covers(grid: TimeGrid, time: np.ndarray) -> None:
    idx = np.searchsorted(grid.times, time, side="left")
    ok = idx < len(grid)
    ok[ok] = grid.times[idx[ok]] == time[ok]
    if not np.all(ok):
        raise LocalTimeMissingFromGrid(
            f"{int((~ok).sum())} local time(s) are not on the global grid (protocol desync)"
        )


def site_round2_u(data: SurvivalDataset, grid: TimeGrid, site_id: str | None = None) -> RiskAggregate:
    """Local at-risk counts and covariate sums at every global grid time."""
    _check_covers(grid, data.time)
    counts, xsums = risk_set_sums(data.time, data.x, grid.times)
    return RiskAggregate(_site_id(data, site_id), counts.astype(np.int64), xsums)


def coordinator_xbar(aggs: Sequence[RiskAggregate], grid: TimeGrid) -> XbarSeries:
    if not aggs:
        raise DataError("no risk aggregates")
    if any(a.counts.shape[0] != len(grid) or a.xsums.shape[0] != len(grid) for a in aggs):
        raise ProtocolError("risk aggregate length does not match the grid")
    p = aggs[0].xsums.shape[1]
    if any(a.xsums.shape[1] != p for a in aggs):
        raise ProtocolError("sites disagree on covariate dimension p")
    counts = _sum(a.counts for a in aggs)
    if np.any(counts <= 0):
        i = int(np.argmax(counts <= 0))
        raise ZeroRiskSet(f"empty pooled risk set at grid entry {i} (t={grid.times[i]!r})")
    xsums = _sum(a.xsums for a in aggs)
    return XbarSeries(grid, xsums / counts[:, None])


def site_round3_u(data: SurvivalDataset, xbar: XbarSeries, site_id: str | None = None) -> SiteContributionU:
    _check_covers(xbar.grid, data.time)
    acc = centered_sums(data, xbar.grid, xbar.xbars)
    return SiteContributionU(_site_id(data, site_id), acc.a_mat, acc.d_vec, acc.sigma_mat, acc.n)


def coordinator_assemble_u(contribs: Sequence[SiteContributionU]) -> FitResult:
    if not contribs:
        raise DataError("no site contributions")
    acc = Accumulators(
        _sum(c.a_part for c in contribs),
        _sum(c.d_part for c in contribs),
        _sum(c.sigma_part for c in contribs),
        sum(c.n_k for c in contribs),
    )
    return fit_from_accumulators(acc, "fedrd_u")


def fit_fedrd_u(sites: Sequence[SurvivalDataset]) -> FitResult:
    """Run all three unstratified rounds in-process."""
    ids = [f"site{k + 1}" for k in range(len(sites))]
    grid = coordinator_merge_times([site_round1_u(d, i) for d, i in zip(sites, ids)])
    xbar = coordinator_xbar([site_round2_u(d, grid, i) for d, i in zip(sites, ids)], grid)
    return coordinator_assemble_u([site_round3_u(d, xbar, i) for d, i in zip(sites, ids)])


# ------------------------------------------------------------------ stratified


def site_summary_s(data: SurvivalDataset, site_id: str | None = None) -> SiteSummaryS:
    """Local sums on the local grid with local risk-set means.

    The per-grid risk-set counts and sums are intermediates and stay on site.
    """
    acc = compute_components(data)
    return SiteSummaryS(_site_id(data, site_id), acc.a_mat, acc.d_vec, acc.sigma_mat, acc.n)


def site_diagnostics(summaries: Sequence[SiteSummaryS]) -> dict[str, int]:
    """Numerical rank of each site's own ``A`` matrix."""
    out = {}
    for s in summaries:
        scale = float(np.max(np.abs(s.a_k), initial=0.0))
        tol = 1e-12 * scale if scale > 0 else None
        out[s.site_id] = int(np.linalg.matrix_rank(s.a_k, tol=tol)) if scale > 0 else 0
    return out


def coordinator_assemble_s(summaries: Sequence[SiteSummaryS]) -> FitResult:
    """Stratified estimate from per-site raw sums.

    Adding raw sums equals weighting each site's normalized sums by
    ``n_k / n``, so no weights are needed here.
    """
    if not summaries:
        raise DataError("no site summaries")
    ranks = site_diagnostics(summaries)
    p = summaries[0].d_k.shape[0]
    deficient = {k: r for k, r in ranks.items() if r < p}
    if deficient:
        log.info("sites with rank-deficient local information: %s", deficient)
    acc = Accumulators(
        _sum(s.a_k for s in summaries),
        _sum(s.d_k for s in summaries),
        _sum(s.sigma_k for s in summaries),
        sum(s.n_k for s in summaries),
    )
    return fit_from_accumulators(acc, "fedrd_s")


def fit_fedrd_s(sites: Sequence[SurvivalDataset]) -> FitResult:
    return coordinator_assemble_s([site_summary_s(d, f"site{k + 1}") for k, d in enumerate(sites)])
