"""Interpretable policy iteration: a Gaussian mixture of prototype-anchored
experts trained under KL and entropy constraints, with prototypes selected
verbatim from trajectory data by randomized discrete search."""

from .core import (ConfigError, Episode, NumericalError, StateNormalizer,
                   TrajectoryDataset, Transition, normalize, parameter_count,
                   seeded_rng)
from .driver import (ExperimentConfig, ExperimentResult, IterationRecord,
                     run_diffproto, run_experiment)
from .envs import make_env, rollout
from .gae import GaeConfig, ValueFunction, compute_gae, fit_value, normalize_advantages
from .policy import KLBreakdown, MoEPolicy, expected_kl, state_kl
from .projections import (ProjectionReport, UpdateConstraints,
                          entropy_projection, kl_projection_linear_gaussian,
                          moe_projection, weight_projection)
from .search import (SearchConfig, add_clusters, compress_policy, heuristic_h1,
                     heuristic_h2, polynomial_rank_sample, swap_clusters,
                     swap_objective)
from .updates import (OptimConfig, SurrogateBatch, surrogate_loss,
                      update_full_policy, update_mean_and_cov,
                      update_with_center_gradients)

__all__ = [name for name in dir() if not name.startswith("_")]
