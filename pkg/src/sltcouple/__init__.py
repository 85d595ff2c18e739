"""Soft local times for finite Markov chains and their coupling with i.i.d. sampling."""

__version__ = "0.1.0"

from .binproc import EnumerationInfeasible, exact_tv_binomial, prop51_bound
from .bounds import BoundInputs, f_value, theorem1_factor
from .coupling import CouplingOutcome, run_coupling
from .model import ModelError, TransitionModel, load_model, two_state, validate_model
from .oracle import chain_localtime_dist, exact_tv_localtimes, trajectory_tv, xi_event_probs
from .slt_engine import run_classical, run_iid, run_permuted, run_regen

__all__ = [
    "BoundInputs",
    "CouplingOutcome",
    "EnumerationInfeasible",
    "ModelError",
    "TransitionModel",
    "chain_localtime_dist",
    "exact_tv_binomial",
    "exact_tv_localtimes",
    "f_value",
    "load_model",
    "prop51_bound",
    "run_classical",
    "run_coupling",
    "run_iid",
    "run_permuted",
    "run_regen",
    "theorem1_factor",
    "trajectory_tv",
    "two_state",
    "validate_model",
    "xi_event_probs",
]
