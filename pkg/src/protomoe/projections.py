"""Differentiable projections onto the KL and entropy constraint set.

The update keeps the new policy inside a KL ball of radius epsilon around the
data-generating policy q (expectation over q's states) and above an entropy
floor beta. Projection happens in three stages: cluster weights are pulled
toward q's weights with a coefficient eta solved from closed-form upper
bounds on the mean-shift term; then, holding the resulting features fixed,
the covariance and the action matrix are interpolated toward q's with
coefficients eta_g and eta_m. A closed-form KL recheck is authoritative: if
the interpolation formulas ever leave residual violation, a bisection pulls
the parameters further toward q.

All expectations run over the full dataset with a fixed reduction order, so
projections are deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .policy import MoEPolicy, gaussian_entropy


class ProjectionPreconditionError(ValueError):
    """The feature change alone already exceeds the KL budget."""


@dataclass(frozen=True)
class UpdateConstraints:
    epsilon: float
    beta: float

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")


@dataclass
class ProjectionReport:
    """What each projection stage did; eta values of 1.0 mean 'not fired'."""

    eta_weights: float = 1.0
    eta_g: float = 1.0
    eta_m: float = 1.0
    chosen_bound: str | None = None
    kl_before: float = math.nan
    kl_after: float = math.nan
    entropy_before: float = math.nan
    entropy_after: float = math.nan
    quad_a: float = math.nan
    quad_b: float = math.nan
    quad_c: float = math.nan
    recheck_fallback: bool = False


def entropy_projection(sigma, beta: float) -> np.ndarray:
    """Scale every variance uniformly so the entropy reaches beta, if below it."""
    sigma = np.asarray(sigma, dtype=np.float64)
    h = gaussian_entropy(sigma)
    if h >= beta:
        return sigma.copy()
    return sigma * math.exp((beta - h) / len(sigma))


def _mean_part(mu_diff, sigma_q) -> float:
    """Half the state-averaged squared mean difference in the Sigma_q metric."""
    return 0.5 * float(np.square(mu_diff / sigma_q).sum(axis=1).mean())


def _cov_parts(var, var_q):
    r = 0.5 * float((var / var_q).sum() - len(var))
    e = 0.5 * float(np.log(var_q / var).sum())
    return r, e


def weight_projection(c, q: MoEPolicy, states, epsilon_budget: float, phi=None):
    """Interpolate cluster weights toward q's so the mean-shift term fits the budget.

    With the action matrix held at q's, the state-averaged squared mean shift
    is bounded by two closed forms in eta: one quadratic (always valid) and
    one linear (valid when 2*||w||*||w_q|| > ||w_q||^2 at every state, norms
    counting the default expert's constant membership). The larger feasible
    eta wins. Returns (new weights, eta, chosen bound name).
    """
    c = np.asarray(c, dtype=np.float64)
    if phi is None:
        phi = q.features(states)
    w = c * phi
    w_q = q.c * phi
    nw = w.sum(axis=1) + 1.0
    nq = w_q.sum(axis=1) + 1.0
    diff_mu = (w / nw[:, None] - w_q / nq[:, None]) @ q.M
    m1 = np.square(diff_mu / q.sigma).sum(axis=1)

    budget = max(float(epsilon_budget), 0.0)
    ratio2 = np.maximum(np.square(nw / nq), 1.0)
    c13 = float((ratio2 * m1).mean())
    eta13 = 1.0 if c13 <= budget else math.sqrt(budget / c13)

    eta14 = -1.0
    denom = 2.0 * nq * nw - np.square(nq)
    if np.all(denom > 0.0):
        c14 = float((np.square(nw) / denom * m1).mean())
        eta14 = 1.0 if c14 <= budget else budget / c14

    if eta14 > eta13:
        eta, bound = eta14, "linear"
    else:
        eta, bound = eta13, "quadratic"
    if eta >= 1.0:
        return c.copy(), 1.0, bound
    return eta * c + (1.0 - eta) * q.c, eta, bound


def kl_projection_linear_gaussian(M, sigma, q: MoEPolicy, states,
                                  constraints: UpdateConstraints, psi=None):
    """Project (M, Sigma) of a linear-Gaussian candidate with features psi.

    The precondition is that the feature change alone (q's action matrix with
    the candidate features) stays strictly inside the KL budget; callers
    establish it through the weight projection or by rejecting center swaps
    that break it. The entropy floor is applied first; interpolation toward
    q's parameters preserves it as long as q itself satisfies the floor.
    """
    M = np.array(M, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    eps = constraints.epsilon
    if psi is None:
        psi = q.memberships(states)
    psi_q = q.memberships(states)
    mu_q = psi_q @ q.M
    var_q = np.square(q.sigma)

    floor = _mean_part(psi @ q.M - mu_q, q.sigma)
    if floor > eps:
        raise ProjectionPreconditionError(
            f"feature-change KL {floor:.6g} exceeds budget {eps:.6g}")

    report = ProjectionReport(entropy_before=gaussian_entropy(sigma))
    sigma = entropy_projection(sigma, constraints.beta)
    var = np.square(sigma)

    m_M = _mean_part(psi @ M - mu_q, q.sigma)
    r, e = _cov_parts(var, var_q)
    report.kl_before = m_M + r + e

    if floor + r + e > eps:
        denom = m_M + r + e
        eta_g = (eps - floor) / denom if denom > 0 else 0.0
        eta_g = min(max(eta_g, 0.0), 1.0)
        var = eta_g * var + (1.0 - eta_g) * var_q
        r, e = _cov_parts(var, var_q)
        report.eta_g = eta_g

    if m_M + r + e > eps:
        u = (psi @ (M - q.M)) / q.sigma
        v = (psi @ q.M - mu_q) / q.sigma
        a = 0.5 * float(np.square(u).sum(axis=1).mean())
        b = 0.5 * float((u * v).sum(axis=1).mean())
        cc = floor + r + e - eps
        disc = b * b - a * cc
        if a <= 1e-300 or disc < 0.0:
            eta_m = 0.0
        else:
            eta_m = min(max((-b + math.sqrt(disc)) / a, 0.0), 1.0)
        M = eta_m * M + (1.0 - eta_m) * q.M
        report.eta_m = eta_m
        report.quad_a, report.quad_b, report.quad_c = a, b, cc

    # Closed-form recheck is authoritative; the interpolation coefficients are
    # conservative, so the bisection below fires only on numerical corner cases.
    kl = _mean_part(psi @ M - mu_q, q.sigma) + sum(_cov_parts(var, var_q))
    if kl > eps:
        report.recheck_fallback = True
        lo, hi = 0.0, 1.0
        m_hi, var_hi = M, var
        for _ in range(60):
            t = 0.5 * (lo + hi)
            m_t = t * m_hi + (1.0 - t) * q.M
            var_t = t * var_hi + (1.0 - t) * var_q
            kl_t = (_mean_part(psi @ m_t - mu_q, q.sigma)
                    + sum(_cov_parts(var_t, var_q)))
            if kl_t <= eps:
                lo = t
            else:
                hi = t
        M = lo * m_hi + (1.0 - lo) * q.M
        var = lo * var_hi + (1.0 - lo) * var_q
        kl = _mean_part(psi @ M - mu_q, q.sigma) + sum(_cov_parts(var, var_q))

    sigma = np.sqrt(var)
    report.kl_after = kl
    report.entropy_after = gaussian_entropy(sigma)
    return M, sigma, report


def moe_projection(c, M, sigma, q: MoEPolicy, states,
                   constraints: UpdateConstraints, phi=None):
    """Full projection pipeline for a candidate sharing q's center list.

    Weights first (with the full KL budget on the mean-shift term, action
    matrix held at q's), then covariance and action matrix under the
    remaining budget with the new features fixed.
    """
    if phi is None:
        phi = q.features(states)
    cand = q.replace(c=np.maximum(np.asarray(c, dtype=np.float64), 0.0),
                     M=np.asarray(M, dtype=np.float64),
                     sigma=np.asarray(sigma, dtype=np.float64))
    from .policy import expected_kl
    kl_before, _ = expected_kl(cand, q, states)

    c_new, eta_w, bound = weight_projection(cand.c, q, states,
                                            constraints.epsilon, phi=phi)
    w = c_new * phi
    psi = w / (w.sum(axis=1)[:, None] + 1.0)
    m_new, sigma_new, report = kl_projection_linear_gaussian(
        cand.M, cand.sigma, q, states, constraints, psi=psi)
    report.eta_weights = eta_w
    report.chosen_bound = bound
    report.kl_before = kl_before

    projected = q.replace(c=c_new, M=m_new, sigma=sigma_new)
    return projected, report
