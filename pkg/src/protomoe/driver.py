"""Experiment orchestration: the alternating policy-iteration loop.

Iteration 0 collects data, freezes the state normalizer, fits the critic,
fills the empty prototype slots from the highest-advantage transitions, and
runs a full differentiable update. Afterwards odd iterations update all
differentiable parameters, while even iterations first try to improve the
prototype list by randomized swaps plus compression and then update the
action matrix and covariance (or fall back to the full update when the
cluster composition did not change). The new policy becomes the data
generator for the next iteration.
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .core import ConfigError, StateNormalizer, seeded_rng
from .envs import evaluate, make_env, rollout
from .gae import GaeConfig, ValueFunction, compute_gae, fit_value
from .policy import MoEPolicy, expected_kl
from .projections import UpdateConstraints
from .reporting import metrics_header, metrics_line
from .search import SearchConfig, add_clusters, compress_policy, swap_clusters
from .updates import (OptimConfig, update_full_policy, update_mean_and_cov,
                      update_with_center_gradients)
from . import policy_io

CONFIG_DOC = {
    "env": "environment id: pendulum | pointmass",
    "clusters": "number of prototype slots K",
    "seed": "master RNG seed; fixes the whole run",
    "iterations": "policy-iteration count",
    "steps_per_iteration": "minimum environment steps collected per iteration",
    "eval_rollouts": "deterministic evaluation episodes after each update",
    "epsilon": "KL budget between consecutive policies",
    "tau": "feature temperature in normalized state coordinates",
    "sigma_init": "initial action standard deviation (every dimension)",
    "entropy_decay_per_100": "entropy floor decrease, nats per action dim per 100 iterations",
    "entropy_floor_per_dim": "hard entropy floor, nats per action dim",
    "gamma": "discount factor",
    "lam": "advantage estimation decay",
    "value_epochs": "critic fit epochs per iteration",
    "value_minibatch": "critic minibatch size",
    "value_step_size": "critic Adam step size",
    "search_top_n": "margin size N of the swap objective",
    "search_candidates": "proposals generated per swap count",
    "search_alpha": "polynomial randomization exponent",
    "search_max_attempts": "cap on proposal batches per swap call",
    "optim_step_size": "policy gradient-ascent step size",
    "optim_epochs": "gradient steps per policy update",
    "diffproto": "learn centers by gradient instead of discrete search",
    "archive_states": "store all visited training states for provenance checks",
}


@dataclass
class ExperimentConfig:
    env: str = "pendulum"
    clusters: int = 10
    seed: int = 0
    iterations: int = 300
    steps_per_iteration: int = 3000
    eval_rollouts: int = 5
    epsilon: float = 0.015
    tau: float = 0.5
    sigma_init: float = 1.0
    entropy_decay_per_100: float = 0.15
    entropy_floor_per_dim: float = -5.0
    gamma: float = 0.99
    lam: float = 0.95
    value_epochs: int = 10
    value_minibatch: int = 64
    value_step_size: float = 3e-4
    search_top_n: int = 3
    search_candidates: int = 10
    search_alpha: float = 2.0
    search_max_attempts: int = 50
    optim_step_size: float = 5e-3
    optim_epochs: int = 30
    diffproto: bool = False
    archive_states: bool = False

    def validate(self):
        if self.clusters < 1:
            raise ConfigError("clusters must be >= 1")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be > 0")
        if self.tau <= 0 or self.sigma_init <= 0:
            raise ConfigError("tau and sigma_init must be > 0")
        if not 1 <= self.search_top_n <= self.clusters:
            raise ConfigError("search_top_n must be in [1, clusters]")
        if self.steps_per_iteration < 1 or self.eval_rollouts < 0:
            raise ConfigError("steps_per_iteration must be >= 1, eval_rollouts >= 0")
        try:
            self.gae_config()
            self.search_config()
            self.optim_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def gae_config(self) -> GaeConfig:
        return GaeConfig(gamma=self.gamma, lam=self.lam,
                         value_epochs=self.value_epochs,
                         value_minibatch=self.value_minibatch,
                         value_step_size=self.value_step_size)

    def search_config(self) -> SearchConfig:
        return SearchConfig(top_n=self.search_top_n,
                            n_candidates=self.search_candidates,
                            alpha=self.search_alpha,
                            max_attempts=self.search_max_attempts)

    def optim_config(self) -> OptimConfig:
        return OptimConfig(step_size=self.optim_step_size, epochs=self.optim_epochs)


def config_to_text(config: ExperimentConfig) -> str:
    lines = ["# experiment configuration: key = value, '#' starts a comment"]
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"# {CONFIG_DOC[f.name]}")
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> ExperimentConfig:
    types = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
    defaults = ExperimentConfig()
    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {line_no}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in types:
            raise ConfigError(f"config line {line_no}: unknown key {key!r}")
        current = getattr(defaults, key)
        try:
            if isinstance(current, bool):
                if raw.lower() not in ("true", "false"):
                    raise ValueError(raw)
                values[key] = raw.lower() == "true"
            elif isinstance(current, int):
                values[key] = int(raw)
            elif isinstance(current, float):
                values[key] = float(raw)
            else:
                values[key] = raw
        except ValueError:
            raise ConfigError(f"config line {line_no}: bad value {raw!r} for {key!r}") from None
    return dataclasses.replace(defaults, **values)


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="ascii") as fh:
        return config_from_text(fh.read())


def entropy_floor(beta0: float, action_dim: int, iteration: int,
                  decay_per_100: float, floor_per_dim: float) -> float:
    beta = beta0 - decay_per_100 * action_dim * iteration / 100.0
    return max(beta, floor_per_dim * action_dim)


@dataclass
class IterationRecord:
    iteration: int
    eval_return_mean: float
    eval_returns: list
    expected_kl: float
    entropy: float
    beta: float
    swap_accepted: int = 0
    swap_objective_before: float = math.nan
    swap_objective_after: float = math.nan
    compression_removed: int = 0
    active_clusters: int = 0
    swap_kl_checks: list = field(default_factory=list)
    compression_kl_checks: list = field(default_factory=list)
    update_rejected: bool = False


@dataclass
class ExperimentResult:
    records: list
    policy: MoEPolicy
    archive: np.ndarray | None = None

    @property
    def eval_curve(self) -> np.ndarray:
        return np.array([r.eval_return_mean for r in self.records])


def run_experiment(config: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Standard run: prototypes stay verbatim dataset states."""
    if config.diffproto:
        raise ConfigError("config has diffproto set; use run_diffproto")
    return _run(config, out_dir)


def run_diffproto(config: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Ablation run: centers follow the surrogate gradient; swaps disabled.

    The dataset-provenance guarantee is deliberately waived and the output
    policy is tagged 'diffproto'.
    """
    if not config.diffproto:
        raise ConfigError("config must have diffproto set for run_diffproto")
    return _run(config, out_dir)


def _run(config: ExperimentConfig, out_dir=None) -> ExperimentResult:
    config.validate()
    env = make_env(config.env)
    rng = seeded_rng(config.seed)
    gae_cfg = config.gae_config()
    search_cfg = config.search_config()
    optim_cfg = config.optim_config()
    episodes_per_iter = max(1, math.ceil(config.steps_per_iteration / env.horizon))

    value_fn = ValueFunction(env.dim_s, hidden=(64, 64), rng=rng)
    first_state = env.reset(rng)
    policy = MoEPolicy.initial(first_state, config.clusters, env.dim_a,
                               config.sigma_init, config.tau,
                               StateNormalizer.unit(env.dim_s))
    if config.diffproto:
        policy = policy.replace(kind="diffproto")
    beta0 = policy.entropy()

    metrics_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.txt"), "w", encoding="ascii") as fh:
            fh.write(config_to_text(config))
        metrics_fh = open(os.path.join(out_dir, "metrics.tsv"), "w", encoding="ascii")
        metrics_fh.write(metrics_header())

    records = []
    archive_chunks = [] if config.archive_states else None
    iteration = -1
    try:
        for iteration in range(config.iterations):
            data = rollout(env, policy, rng, episodes_per_iter,
                           start_state=first_state if iteration == 0 else None)
            if archive_chunks is not None:
                archive_chunks.append(data.all_states())

            if iteration == 0:
                normalizer = StateNormalizer.fit(data.all_states())
                policy = policy.replace(normalizer=normalizer)
                value_fn.set_normalizer(normalizer)

            compute_gae(data, value_fn, gae_cfg)
            fit_value(value_fn, data.all_states(), data.all_value_targets(),
                      gae_cfg, rng)
            if iteration == 0:
                policy = add_clusters(policy, data)

            beta = entropy_floor(beta0, env.dim_a, iteration,
                                 config.entropy_decay_per_100,
                                 config.entropy_floor_per_dim)
            constraints = UpdateConstraints(epsilon=config.epsilon, beta=beta)
            q = policy

            swap_rep = None
            comp_removed = 0
            comp_kls = []
            rejected = False
            if iteration == 0 or iteration % 2 == 1:
                policy, urep = update_full_policy(q, data, constraints, optim_cfg)
            elif config.diffproto:
                policy, urep = update_with_center_gradients(q, data, constraints,
                                                            optim_cfg)
            else:
                swapped, swap_rep = swap_clusters(q, data, constraints,
                                                  search_cfg, rng)
                compressed, comp_removed, comp_kls = compress_policy(
                    swapped, data, constraints)
                if swap_rep.changed or comp_removed > 0:
                    policy, urep = update_mean_and_cov(compressed, q, data,
                                                       constraints, optim_cfg)
                    rejected = urep.rejected
                else:
                    policy, urep = update_full_policy(q, data, constraints,
                                                      optim_cfg)

            kl, _ = expected_kl(policy, q, data.all_states())
            eval_returns = evaluate(env, policy, rng, config.eval_rollouts)
            rec = IterationRecord(
                iteration=iteration,
                eval_return_mean=float(np.mean(eval_returns)) if eval_returns else math.nan,
                eval_returns=eval_returns,
                expected_kl=kl,
                entropy=policy.entropy(),
                beta=beta,
                swap_accepted=swap_rep.total_swapped if swap_rep else 0,
                swap_objective_before=swap_rep.objective_before if swap_rep else math.nan,
                swap_objective_after=swap_rep.objective_after if swap_rep else math.nan,
                compression_removed=comp_removed,
                active_clusters=policy.n_live,
                swap_kl_checks=[k for _, _, k in swap_rep.accepted] if swap_rep else [],
                compression_kl_checks=comp_kls,
                update_rejected=rejected,
            )
            records.append(rec)
            if metrics_fh is not None:
                metrics_fh.write(metrics_line(rec))
                metrics_fh.flush()
    except Exception as exc:
        if out_dir is not None:
            crash_path = os.path.join(out_dir, "crash.txt")
            with open(crash_path, "w", encoding="ascii") as fh:
                fh.write(f"iteration {iteration}\n{type(exc).__name__}: {exc}\n")
            policy_io.serialize_policy(policy, os.path.join(out_dir, "crash_policy.txt"))
        raise
    finally:
        if metrics_fh is not None:
            metrics_fh.close()

    archive = np.concatenate(archive_chunks) if archive_chunks else None
    if out_dir is not None:
        policy_io.serialize_policy(policy, os.path.join(out_dir, "policy.txt"))
        if archive is not None:
            policy_io.save_archive(archive, os.path.join(out_dir, "states.npy"))
    return ExperimentResult(records=records, policy=policy, archive=archive)
