"""Langevin posterior sampling for reinforcement learning."""

from .agents import AgentConfig, EpisodeRecord, epsilon_schedule, lapsrl_run, psrl_exact_run
from .harness import ExperimentConfig, kl_gaussian, run_experiment, sublinearity_fit
from .models import GaussianPosterior, MixturePrior, make_model
from .sampler import LangevinSchedule, SamplerDivergence, langevin_schedule, sarah_ld

__version__ = "0.1.0"

__all__ = [
    "AgentConfig", "EpisodeRecord", "ExperimentConfig", "GaussianPosterior", "LangevinSchedule",
    "MixturePrior", "SamplerDivergence", "epsilon_schedule", "kl_gaussian", "langevin_schedule",
    "lapsrl_run", "make_model", "psrl_exact_run", "run_experiment", "sarah_ld", "sublinearity_fit",
]
