"""Gaussian policy whose mean blends per-prototype actions.

Each expert is a (center, weight, action row) triple. A state's unnormalized
membership to expert i is ``w_i(s) = c_i * exp(-tau * ||z - z_i||^2)`` with z
the normalized state; memberships are normalized by ``||w||_1 + 1``, the +1
being the default expert whose action is the zero vector. Far from every
prototype the memberships vanish and the policy falls back to the default
action, which also makes unfamiliar states visible as a small membership sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import StateNormalizer, normalize

SIGMA_FLOOR = 1e-4

LOG_2PI = math.log(2.0 * math.pi)


class MoEPolicy:
    """Mixture-of-prototype-experts diagonal Gaussian policy.

    Parameters are value objects: evaluation methods are pure, and updates
    produce new instances via :meth:`replace`. Centers are stored in raw
    state coordinates; distances are measured after normalization.
    """

    def __init__(self, centers, c, M, sigma, tau, normalizer: StateNormalizer,
                 active=None, kind: str = "standard"):
        self.centers = np.array(centers, dtype=np.float64)
        self.c = np.array(c, dtype=np.float64)
        self.M = np.array(M, dtype=np.float64)
        self.sigma = np.array(sigma, dtype=np.float64)
        self.tau = float(tau)
        self.normalizer = normalizer
        self.kind = kind
        if active is None:
            active = np.ones(len(self.centers), dtype=bool)
        self.active = np.array(active, dtype=bool)

        k, ds = self.centers.shape
        da = self.M.shape[1]
        if self.c.shape != (k,) or self.M.shape != (k, da) or self.active.shape != (k,):
            raise ValueError("inconsistent cluster parameter shapes")
        if normalizer.dim != ds:
            raise ValueError("normalizer dimension does not match centers")
        if np.any(self.c < 0):
            raise ValueError("cluster weights must be nonnegative")
        if np.any(self.sigma <= 0):
            raise ValueError("sigma entries must be positive")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        # Cached normalized centers; instances are treated as immutable.
        self._zc = normalize(self.centers, normalizer)

    # -- construction ----------------------------------------------------

    @classmethod
    def initial(cls, first_state, n_clusters: int, action_dim: int, sigma_init,
                tau: float, normalizer: StateNormalizer) -> "MoEPolicy":
        """Fresh policy: every slot holds the first observed state.

        Only slot 0 is active (weight 1); the remaining slots are inactive
        placeholders with zero weight, so the action distribution is
        N(0, diag(sigma_init^2)) everywhere until real prototypes arrive.
        """
        first_state = np.asarray(first_state, dtype=np.float64)
        ds = len(first_state)
        centers = np.tile(first_state, (n_clusters, 1))
        c = np.zeros(n_clusters)
        c[0] = 1.0
        active = np.zeros(n_clusters, dtype=bool)
        active[0] = True
        sigma = np.broadcast_to(np.asarray(sigma_init, dtype=np.float64), (action_dim,))
        return cls(centers, c, np.zeros((n_clusters, action_dim)), sigma.copy(),
                   tau, normalizer, active=active)

    def replace(self, **kwargs) -> "MoEPolicy":
        fields = dict(centers=self.centers, c=self.c, M=self.M, sigma=self.sigma,
                      tau=self.tau, normalizer=self.normalizer, active=self.active,
                      kind=self.kind)
        fields.update(kwargs)
        return MoEPolicy(**fields)

    # -- shape accessors --------------------------------------------------

    @property
    def n_clusters(self) -> int:
        return len(self.centers)

    @property
    def state_dim(self) -> int:
        return self.centers.shape[1]

    @property
    def action_dim(self) -> int:
        return self.M.shape[1]

    @property
    def n_live(self) -> int:
        """Clusters that currently influence the distribution (weight > 0)."""
        return int(np.count_nonzero(self.c > 0))

    # -- features and memberships ------------------------------------------

    def features(self, states) -> np.ndarray:
        """phi_i = exp(-tau * ||z - z_i||^2) for one state (K,) or a batch (B, K)."""
        z = normalize(states, self.normalizer)
        if z.ndim == 1:
            d2 = np.square(self._zc - z).sum(axis=1)
            return np.exp(-self.tau * d2)
        d2 = (np.square(z).sum(axis=1)[:, None]
              + np.square(self._zc).sum(axis=1)[None, :]
              - 2.0 * z @ self._zc.T)
        return np.exp(-self.tau * np.maximum(d2, 0.0))

    def memberships(self, states) -> np.ndarray:
        """psi = (c * phi) / (||c * phi||_1 + 1); rows sum to strictly less than 1."""
        w = self.c * self.features(states)
        denom = w.sum(axis=-1, keepdims=w.ndim > 1) + 1.0
        return w / denom

    def mean_action(self, state) -> np.ndarray:
        return self.memberships(state) @ self.M

    def mean_actions(self, states) -> np.ndarray:
        return self.memberships(states) @ self.M

    # -- distribution -----------------------------------------------------

    def sample(self, state, rng: np.random.Generator):
        """Draw an action and return (action, log_density(state, action))."""
        mu = self.mean_action(state)
        a = mu + self.sigma * rng.standard_normal(self.action_dim)
        return a, self.log_density(state, a)

    def log_density(self, state, action) -> float:
        mu = self.mean_action(state)
        zsq = np.square((np.asarray(action, dtype=np.float64) - mu) / self.sigma)
        return float(-0.5 * (zsq.sum() + self.action_dim * LOG_2PI)
                     - np.log(self.sigma).sum())

    def log_density_batch(self, states, actions) -> np.ndarray:
        mu = self.mean_actions(states)
        zsq = np.square((np.asarray(actions, dtype=np.float64) - mu) / self.sigma)
        return (-0.5 * (zsq.sum(axis=1) + self.action_dim * LOG_2PI)
                - np.log(self.sigma).sum())

    def entropy(self) -> float:
        """Differential entropy; state-independent for a fixed-covariance Gaussian."""
        return gaussian_entropy(self.sigma)


def gaussian_entropy(sigma) -> float:
    sigma = np.asarray(sigma, dtype=np.float64)
    return float(0.5 * len(sigma) * (1.0 + LOG_2PI) + np.log(sigma).sum())


@dataclass(frozen=True)
class KLBreakdown:
    """Closed-form KL components: KL = (m + r + e) / 2.

    m: squared mean difference in the Sigma_q^-1 metric (state-dependent),
    r: covariance rotation tr(Sigma_q^-1 Sigma_p) - d,
    e: entropy change log(|Sigma_q| / |Sigma_p|).
    """

    m: float
    r: float
    e: float

    @property
    def total(self) -> float:
        return 0.5 * (self.m + self.r + self.e)


def _cov_terms(p: MoEPolicy, q: MoEPolicy):
    var_p = np.square(p.sigma)
    var_q = np.square(q.sigma)
    r = float((var_p / var_q).sum() - p.action_dim)
    e = float(np.log(var_q / var_p).sum())
    return r, e


def state_kl(p: MoEPolicy, q: MoEPolicy, state):
    """KL(p(.|s) || q(.|s)) with its (m, r, e) breakdown."""
    diff = p.mean_action(state) - q.mean_action(state)
    m = float(np.square(diff / q.sigma).sum())
    r, e = _cov_terms(p, q)
    br = KLBreakdown(m=m, r=r, e=e)
    return br.total, br


def expected_kl(p: MoEPolicy, q: MoEPolicy, states):
    """State-averaged KL over a batch, with the breakdown of expectations."""
    diff = p.mean_actions(states) - q.mean_actions(states)
    m = float(np.square(diff / q.sigma).sum(axis=1).mean())
    r, e = _cov_terms(p, q)
    br = KLBreakdown(m=m, r=r, e=e)
    return br.total, br
