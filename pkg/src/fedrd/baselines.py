"""Comparator estimators: the pooled oracle and fixed-effect meta-analysis."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .data import SurvivalDataset, concat_datasets
from .errors import DataError, NonPositiveVariance
from .estimator import FitResult, fit_local

__all__ = ["fit_meta", "fit_pooled"]


def fit_pooled(datasets: Sequence[SurvivalDataset]) -> FitResult:
    """Fit on the concatenated individual-level data of all sites.

    Not available in a real federation; serves as the reference answer.
    """
    if not datasets:
        raise DataError("no datasets")
    pooled = datasets[0] if len(datasets) == 1 else concat_datasets(datasets)
    return fit_local(pooled).retag("pooled")


def fit_meta(fits: Sequence[FitResult]) -> FitResult:
    """Per-coefficient inverse-variance weighted average of local fits.

    Off-diagonal covariance is not combined; the returned covariance is
    diagonal with entries ``1 / sum_k (1 / v_kj)``. A single fit is passed
    through unchanged apart from its method tag.
    """
    if not fits:
        raise DataError("no fits to combine")
    p = fits[0].p
    if any(f.p != p for f in fits):
        raise DataError("fits disagree on covariate dimension p")
    betas = np.array([f.beta for f in fits])
    variances = np.array([np.diag(f.cov) for f in fits])
    if not np.all(variances > 0):
        raise NonPositiveVariance("every per-coefficient variance must be positive")
    if len(fits) == 1:
        return fits[0].retag("meta")
    weights = 1.0 / variances
    total = weights.sum(axis=0)
    beta = (weights * betas).sum(axis=0) / total
    return FitResult(beta, np.diag(1.0 / total), int(sum(f.n for f in fits)), "meta")
