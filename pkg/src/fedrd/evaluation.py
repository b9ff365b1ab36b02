"""Harrell's concordance index for additive-hazards risk scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SurvivalDataset
from .errors import DataError, NoComparablePairs

__all__ = ["ConcordanceResult", "c_index", "risk_score"]

_BLOCK = 2048


@dataclass(frozen=True)
class ConcordanceResult:
    c_index: float
    comparable_pairs: int
    concordant: float


def risk_score(beta, x) -> float | np.ndarray:
    """``beta' x``; a larger score means a larger hazard.

    ``x`` may be one covariate vector or an ``(n, p)`` matrix of them.
    """
    beta = np.asarray(beta, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != beta.shape[0]:
        raise DataError(f"dimension mismatch: beta has {beta.shape[0]} entries, x has {x.shape[-1]}")
    out = x @ beta
    return float(out) if out.ndim == 0 else out


def c_index(data: SurvivalDataset, beta) -> ConcordanceResult:
    """Fraction of comparable pairs ordered correctly by the risk score.

    A pair ``(i, j)`` is comparable when ``y_i < y_j`` and subject ``i`` had
    an event. It is concordant when ``score_i > score_j``; tied scores earn
    half credit. Pairs with equal observed times are skipped.
    """
    score = risk_score(beta, data.x)
    y = data.time
    events = np.flatnonzero(data.status == 1)
    pairs = 0
    conc = 0.0
    for start in range(0, events.size, _BLOCK):
        i = events[start : start + _BLOCK]
        comparable = y[i][:, None] < y[None, :]
        diff = score[i][:, None] - score[None, :]
        pairs += int(comparable.sum())
        conc += float((comparable & (diff > 0)).sum()) + 0.5 * float((comparable & (diff == 0)).sum())
    if pairs == 0:
        raise NoComparablePairs("no pair with y_i < y_j and an event at y_i")
    return ConcordanceResult(conc / pairs, pairs, conc)
