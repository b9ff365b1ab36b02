"""Federated risk-difference estimation for right-censored survival data.

Sites holding survival data estimate a shared additive hazards model
``lambda(t | x) = lambda0(t) + beta' x`` by exchanging summary sums only.
"""

from .baselines import fit_meta, fit_pooled
from .data import (
    Subject,
    SurvivalDataset,
    TimeGrid,
    build_time_grid,
    concat_datasets,
    load_dataset,
    save_dataset,
)
from .errors import *  # noqa: F401,F403
from .estimator import Accumulators, FitResult, compute_components, fit_local, solve_spd
from .evaluation import ConcordanceResult, c_index, risk_score
from .federation import fit_fedrd_s, fit_fedrd_u
from .inference import WaldSummary, normal_quantile, wald

__version__ = "0.1.0"
