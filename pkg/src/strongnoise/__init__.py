"""Optimal filtering of finite-state Markov chains in strong and weak noise."""
from .model import (
    ChainSpec,
    ModelError,
    NoiseModel,
    as_simplex,
    cauchy,
    custom,
    fisher_information,
    gaussian,
    kl_shifted,
    noise_model,
    noise_score,
    validate_chain,
)
from .markov import is_ergodic, simulate_path_ct, simulate_path_dt, slow_chain, stationary_distribution
from .filtering import filter_run, generate_observations, point_estimates, predict, update
from .wonham import generate_observations_ct, simulate_z_ct, wonham_run, wonham_step
from . import asymptotics

__version__ = "0.1.0"

__all__ = [
    "ChainSpec", "ModelError", "NoiseModel", "as_simplex", "cauchy", "custom", "fisher_information",
    "gaussian", "kl_shifted", "noise_model", "noise_score", "validate_chain",
    "is_ergodic", "simulate_path_ct", "simulate_path_dt", "slow_chain", "stationary_distribution",
    "filter_run", "generate_observations", "point_estimates", "predict", "update",
    "generate_observations_ct", "simulate_z_ct", "wonham_run", "wonham_step",
    "asymptotics",
]
