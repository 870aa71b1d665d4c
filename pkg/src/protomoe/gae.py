"""Value-function approximation and advantage estimation.

The critic is a small tanh MLP trained with Adam; backpropagation is written
out by hand so the package carries no autodiff dependency. Advantages use the
exponentially weighted temporal-difference recursion, never crossing episode
boundaries, with value bootstrap at horizon truncation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import StateNormalizer, TrajectoryDataset


@dataclass
class GaeConfig:
    gamma: float = 0.99
    lam: float = 0.95
    value_epochs: int = 10
    value_minibatch: int = 64
    value_step_size: float = 3e-4

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must be in [0, 1]")
        if self.value_epochs < 1 or self.value_minibatch < 1 or self.value_step_size <= 0:
            raise ValueError("value-fit settings must be positive")


class ValueFunction:
    """Feed-forward state-value approximator with in-module backprop.

    ``hidden=()`` degenerates to a linear model, which the gradient tests
    exercise directly. Adam moment buffers live on the instance so optimizer
    state persists across fit calls.
    """

    def __init__(self, state_dim: int, hidden=(64, 64), rng=None,
                 normalizer: StateNormalizer | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        sizes = [state_dim, *hidden, 1]
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            self.weights.append(rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in))
            self.biases.append(np.zeros(fan_out))
        self.normalizer = normalizer
        self._adam_m = [np.zeros_like(p) for p in self._params()]
        self._adam_v = [np.zeros_like(p) for p in self._params()]
        self._adam_t = 0

    def _params(self):
        return [*self.weights, *self.biases]

    def set_normalizer(self, normalizer: StateNormalizer):
        self.normalizer = normalizer

    def _inputs(self, states) -> np.ndarray:
        x = np.atleast_2d(np.asarray(states, dtype=np.float64))
        if self.normalizer is not None:
            x = self.normalizer(x)
        return x

    def value(self, states) -> np.ndarray:
        """V(s) for a batch (n,) or a single state (scalar array of shape ())."""
        single = np.asarray(states).ndim == 1
        h = self._inputs(states)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.tanh(h)
        out = h[:, 0]
        return out[0] if single else out

    def _loss_and_grads(self, states, targets):
        """Mean-squared-error and its gradient for every weight and bias."""
        x = self._inputs(states)
        y = np.asarray(targets, dtype=np.float64)
        n = len(y)
        last = len(self.weights) - 1

        pre, post = [], [x]
        h = x
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre.append(z)
            h = np.tanh(z) if i < last else z
            post.append(h)

        pred = post[-1][:, 0]
        err = pred - y
        loss = float(np.mean(err ** 2))

        delta = (2.0 / n) * err[:, None]
        gw = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        for i in range(last, -1, -1):
            gw[i] = post[i].T @ delta
            gb[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (1.0 - post[i] ** 2)
        return loss, gw + gb

    def _adam_step(self, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self._adam_t += 1
        t = self._adam_t
        for p, g, m, v in zip(self._params(), grads, self._adam_m, self._adam_v):
            m *= beta1
            m += (1 - beta1) * g
            v *= beta2
            v += (1 - beta2) * g * g
            mhat = m / (1 - beta1 ** t)
            vhat = v / (1 - beta2 ** t)
            p -= lr * mhat / (np.sqrt(vhat) + eps)

    # Flat-vector access used by the finite-difference tests.

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self._params()])

    def set_flat_params(self, vec: np.ndarray):
        i = 0
        for p in self._params():
            p[...] = vec[i:i + p.size].reshape(p.shape)
            i += p.size

    def loss_and_flat_grad(self, states, targets):
        loss, grads = self._loss_and_grads(states, targets)
        return loss, np.concatenate([g.ravel() for g in grads])

    def snapshot(self):
        return [p.copy() for p in self._params()]

    def restore(self, snap):
        for p, s in zip(self._params(), snap):
            p[...] = s


@dataclass
class FitReport:
    initial_loss: float
    final_loss: float
    epoch_losses: list = field(default_factory=list)
    reverted: bool = False


def fit_value(v: ValueFunction, states, targets, cfg: GaeConfig,
              rng: np.random.Generator) -> FitReport:
    """Fit V to the targets; never returns parameters worse than the input ones.

    Minibatch order comes from the experiment RNG so runs stay reproducible.
    """
    states = np.asarray(states, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(states) != len(targets) or len(states) == 0:
        raise ValueError("states and targets must be non-empty and aligned")
    if not np.isfinite(targets).all():
        raise ValueError("non-finite value targets")

    snap = v.snapshot()
    initial = float(np.mean((v.value(states) - targets) ** 2))
    n = len(states)
    epoch_losses = []
    for _ in range(cfg.value_epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.value_minibatch):
            idx = order[lo:lo + cfg.value_minibatch]
            _, grads = v._loss_and_grads(states[idx], targets[idx])
            v._adam_step(grads, cfg.value_step_size)
        epoch_losses.append(float(np.mean((v.value(states) - targets) ** 2)))

    final = epoch_losses[-1]
    reverted = final > initial
    if reverted:
        v.restore(snap)
        final = initial
    return FitReport(initial_loss=initial, final_loss=final,
                     epoch_losses=epoch_losses, reverted=reverted)


def compute_gae(data: TrajectoryDataset, v: ValueFunction, cfg: GaeConfig):
    """Fill per-episode advantages and value targets on the dataset.

    delta_t = r_t + gamma * V(s_{t+1}) * (1 - terminal_t) - V(s_t), summed
    with weight (gamma * lambda)^l inside the episode. Targets are A + V(s).
    """
    if len(data.episodes) == 0:
        raise ValueError("empty dataset")
    advantages, targets = [], []
    gl = cfg.gamma * cfg.lam
    for ep in data.episodes:
        values = np.atleast_1d(v.value(ep.states))
        v_final = 0.0 if ep.terminal else float(v.value(ep.final_state))
        v_next = np.append(values[1:], v_final)
        delta = ep.rewards + cfg.gamma * v_next - values
        adv = np.empty_like(delta)
        acc = 0.0
        for t in range(len(delta) - 1, -1, -1):
            acc = delta[t] + gl * acc
            adv[t] = acc
        advantages.append(adv)
        targets.append(adv + values)
    data.advantages = advantages
    data.value_targets = targets
    return advantages, targets


def normalize_advantages(advantages) -> np.ndarray:
    """Standardize to zero mean and unit std (std floored at 1e-8)."""
    a = np.asarray(advantages, dtype=np.float64)
    if a.size < 2:
        raise ValueError("need at least 2 advantage samples to normalize")
    return (a - a.mean()) / max(float(a.std()), 1e-8)
