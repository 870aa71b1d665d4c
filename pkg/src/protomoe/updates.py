"""Projected gradient ascent on the importance-weighted advantage surrogate.

The surrogate is the batch mean of (pi(a|s) / q(a|s)) * A, with advantages
standardized so the surrogate is exactly zero at q. Gradients through the
memberships, the mean, and the Gaussian density are computed analytically;
after every ascent step the parameters are projected back into the KL and
entropy constraint set, treating the interpolation coefficients as constants
for that step. The best feasible iterate by surrogate value is returned, so
the result is never worse than q.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import TrajectoryDataset
from .gae import normalize_advantages
from .policy import SIGMA_FLOOR, MoEPolicy
from .projections import (UpdateConstraints, _mean_part,
                          kl_projection_linear_gaussian, moe_projection)

LOG_RATIO_CLIP = 20.0


@dataclass
class OptimConfig:
    step_size: float = 5e-3
    epochs: int = 30
    adapt_step: bool = True

    def __post_init__(self):
        if self.step_size <= 0 or self.epochs < 1:
            raise ValueError("optimizer settings must be positive")


@dataclass
class SurrogateBatch:
    states: np.ndarray
    actions: np.ndarray
    behavior_logp: np.ndarray
    advantages: np.ndarray  # standardized

    def __post_init__(self):
        n = len(self.states)
        if not (len(self.actions) == len(self.behavior_logp) == len(self.advantages) == n > 0):
            raise ValueError("batch arrays must share a positive length")
        if not np.isfinite(self.behavior_logp).all():
            raise ValueError("behavior log-densities must be finite")

    @classmethod
    def from_dataset(cls, data: TrajectoryDataset) -> "SurrogateBatch":
        return cls(states=data.all_states(), actions=data.all_actions(),
                   behavior_logp=data.all_behavior_logp(),
                   advantages=normalize_advantages(data.all_advantages()))


def surrogate_loss(policy: MoEPolicy, batch: SurrogateBatch, wrt_centers: bool = False):
    """Surrogate value with analytic gradients for c, M, sigma (and optionally
    the centers, in normalized-via-raw coordinates).

    Log importance ratios are clipped at +/-20; clipped samples contribute a
    constant to the objective (zero gradient) and are counted in the result.
    Returns (value, grads dict, clipped count).
    """
    phi = policy.features(batch.states)
    w = policy.c * phi
    denom = w.sum(axis=1) + 1.0
    psi = w / denom[:, None]
    mu = psi @ policy.M
    var = np.square(policy.sigma)

    zsq = np.square(batch.actions - mu) / var
    logp = (-0.5 * (zsq.sum(axis=1) + policy.action_dim * np.log(2.0 * np.pi))
            - np.log(policy.sigma).sum())
    log_ratio = logp - batch.behavior_logp
    clipped = np.abs(log_ratio) > LOG_RATIO_CLIP
    ratio = np.exp(np.clip(log_ratio, -LOG_RATIO_CLIP, LOG_RATIO_CLIP))

    n = len(batch.states)
    value = float((ratio * batch.advantages).mean())

    weight = ratio * batch.advantages / n
    weight = np.where(clipped, 0.0, weight)

    resid = (batch.actions - mu) / var                       # d logp / d mu
    grad_m = psi.T @ (weight[:, None] * resid)
    grad_sigma = (weight[:, None] * (np.square(batch.actions - mu) / var - 1.0)
                  / policy.sigma).sum(axis=0)

    mr = resid @ policy.M.T                                  # (B, K)
    mu_dot_r = (mu * resid).sum(axis=1)                      # (B,)
    base = (weight / denom)[:, None] * phi * (mr - mu_dot_r[:, None])
    grad_c = base.sum(axis=0)

    grads = {"c": grad_c, "M": grad_m, "sigma": grad_sigma}
    if wrt_centers:
        z = policy.normalizer(batch.states)
        zc = policy.normalizer(policy.centers)
        cb = base * policy.c                                 # (B, K)
        grad_zc = 2.0 * policy.tau * (cb.T @ z - cb.sum(axis=0)[:, None] * zc)
        grads["centers"] = grad_zc / policy.normalizer.std
    return value, grads, int(clipped.sum())


@dataclass
class UpdateReport:
    surrogate_q: float = 0.0
    surrogate_final: float = 0.0
    per_step_kl: list = field(default_factory=list)
    per_step_entropy: list = field(default_factory=list)
    clipped: int = 0
    rejected: bool = False


def _adapted_lr(lr: float, kl_trial: float, epsilon: float) -> float:
    """Rescale the step so the unprojected proposal lands near the KL radius.

    The KL is locally quadratic in the parameter step, so sqrt(eps / kl)
    is the natural correction; growth and shrinkage are clamped per epoch.
    The projection still owns constraint satisfaction.
    """
    if kl_trial <= 0.0:
        return lr * 4.0
    return lr * min(max(math.sqrt(epsilon / kl_trial), 0.25), 4.0)


def update_full_policy(q: MoEPolicy, data: TrajectoryDataset,
                       constraints: UpdateConstraints, cfg: OptimConfig):
    """Ascend the surrogate over (c, M, sigma), projecting after every step."""
    batch = SurrogateBatch.from_dataset(data)
    states = batch.states
    phi = q.features(states)

    report = UpdateReport()
    report.surrogate_q, _, _ = surrogate_loss(q, batch)
    best_policy, best_value = q, report.surrogate_q

    from .policy import expected_kl

    cur = q
    lr = cfg.step_size
    for _ in range(cfg.epochs):
        _, grads, nclip = surrogate_loss(cur, batch)
        report.clipped += nclip

        def stepped(rate):
            c = np.maximum(cur.c + rate * grads["c"], 0.0)
            m = cur.M + rate * grads["M"]
            sigma = np.maximum(cur.sigma + rate * grads["sigma"], SIGMA_FLOOR)
            return c, m, sigma

        c, m, sigma = stepped(lr)
        if cfg.adapt_step:
            kl_trial, _ = expected_kl(q.replace(c=c, M=m, sigma=sigma), q, states)
            lr = _adapted_lr(lr, kl_trial, constraints.epsilon)
            c, m, sigma = stepped(lr)
        cur, prep = moe_projection(c, m, sigma, q, states, constraints, phi=phi)
        report.per_step_kl.append(prep.kl_after)
        report.per_step_entropy.append(prep.entropy_after)
        value, _, _ = surrogate_loss(cur, batch)
        if value > best_value:
            best_policy, best_value = cur, value

    report.surrogate_final = best_value
    return best_policy, report


def update_mean_and_cov(candidate: MoEPolicy, q: MoEPolicy, data: TrajectoryDataset,
                        constraints: UpdateConstraints, cfg: OptimConfig):
    """Ascend over (M, sigma) only, with the candidate's centers and weights frozen.

    Requires the candidate's feature change alone to fit the KL budget;
    otherwise the whole candidate is rejected and q is returned unchanged.
    """
    batch = SurrogateBatch.from_dataset(data)
    states = batch.states
    psi = candidate.memberships(states)

    report = UpdateReport()
    report.surrogate_q, _, _ = surrogate_loss(q, batch)

    floor = _mean_part(psi @ q.M - q.memberships(states) @ q.M, q.sigma)
    if floor > constraints.epsilon:
        report.rejected = True
        report.surrogate_final = report.surrogate_q
        return q, report

    best_policy, best_value = q, report.surrogate_q

    m0, sigma0, prep = kl_projection_linear_gaussian(
        candidate.M, candidate.sigma, q, states, constraints, psi=psi)
    cur = candidate.replace(M=m0, sigma=sigma0)
    report.per_step_kl.append(prep.kl_after)
    report.per_step_entropy.append(prep.entropy_after)
    value, _, _ = surrogate_loss(cur, batch)
    if value > best_value:
        best_policy, best_value = cur, value

    from .policy import expected_kl

    lr = cfg.step_size
    for _ in range(cfg.epochs):
        _, grads, nclip = surrogate_loss(cur, batch)
        report.clipped += nclip

        def stepped(rate):
            m = cur.M + rate * grads["M"]
            sigma = np.maximum(cur.sigma + rate * grads["sigma"], SIGMA_FLOOR)
            return m, sigma

        m, sigma = stepped(lr)
        if cfg.adapt_step:
            kl_trial, _ = expected_kl(cur.replace(M=m, sigma=sigma), q, states)
            lr = _adapted_lr(lr, kl_trial, constraints.epsilon)
            m, sigma = stepped(lr)
        m_p, sigma_p, prep = kl_projection_linear_gaussian(
            m, sigma, q, states, constraints, psi=psi)
        cur = cur.replace(M=m_p, sigma=sigma_p)
        report.per_step_kl.append(prep.kl_after)
        report.per_step_entropy.append(prep.entropy_after)
        value, _, _ = surrogate_loss(cur, batch)
        if value > best_value:
            best_policy, best_value = cur, value

    report.surrogate_final = best_value
    return best_policy, report


CENTER_BUDGET_FRACTION = 0.5  # share of epsilon the center drift may consume


def update_with_center_gradients(q: MoEPolicy, data: TrajectoryDataset,
                                 constraints: UpdateConstraints, cfg: OptimConfig):
    """Variant of the mean-and-covariance update where the centers themselves
    follow the surrogate gradient (weights frozen at q's).

    Every center step is backtracked (halving) until the feature-change KL
    fits within half the budget, after which (M, sigma) are projected as
    usual. The resulting prototypes are generally no longer dataset states.
    """
    batch = SurrogateBatch.from_dataset(data)
    states = batch.states
    mu_q = q.memberships(states) @ q.M
    floor_budget = CENTER_BUDGET_FRACTION * constraints.epsilon

    report = UpdateReport()
    report.surrogate_q, _, _ = surrogate_loss(q, batch)
    best_policy, best_value = q, report.surrogate_q

    cur = q.replace(kind="diffproto")
    lr = cfg.step_size

    def feature_floor(policy):
        return _mean_part(policy.memberships(states) @ q.M - mu_q, q.sigma)

    from .policy import expected_kl

    for _ in range(cfg.epochs):
        _, grads, nclip = surrogate_loss(cur, batch, wrt_centers=True)
        report.clipped += nclip

        if cfg.adapt_step:
            trial = cur.replace(
                centers=cur.centers + lr * grads["centers"],
                M=cur.M + lr * grads["M"],
                sigma=np.maximum(cur.sigma + lr * grads["sigma"], SIGMA_FLOOR))
            kl_trial, _ = expected_kl(trial, q, states)
            lr = _adapted_lr(lr, kl_trial, constraints.epsilon)

        delta = lr * grads["centers"]
        t = 1.0
        moved = cur
        for _ in range(20):
            trial = cur.replace(centers=cur.centers + t * delta)
            if feature_floor(trial) <= floor_budget:
                moved = trial
                break
            t *= 0.5
        cur = moved

        m = cur.M + lr * grads["M"]
        sigma = np.maximum(cur.sigma + lr * grads["sigma"], SIGMA_FLOOR)
        psi = cur.memberships(states)
        m_p, sigma_p, prep = kl_projection_linear_gaussian(
            m, sigma, q, states, constraints, psi=psi)
        cur = cur.replace(M=m_p, sigma=sigma_p)
        report.per_step_kl.append(prep.kl_after)
        report.per_step_entropy.append(prep.entropy_after)
        value, _, _ = surrogate_loss(cur, batch)
        if value > best_value:
            best_policy, best_value = cur, value

    report.surrogate_final = best_value
    if best_policy is q:
        best_policy = q.replace(kind="diffproto")
    return best_policy, report
