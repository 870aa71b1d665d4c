"""Deterministic desk-scale continuous-action environments.

Steps are pure functions of (state, action): the environment object carries
only static task constants, so oracles and rollouts can replay transitions
exactly. Actions are clipped at the environment boundary; the policy's
pre-clipping sample is what gets recorded, keeping logged densities exact.
"""

from __future__ import annotations

import math

import numpy as np

from .core import ConfigError, Episode, NumericalError, TrajectoryDataset


class PendulumEnv:
    """Torque-limited swing-up. Observation (cos th, sin th, thdot).

    thdd = 15 sin(th) + 3 a with dt 0.05, velocity clipped to [-8, 8];
    cost is th^2 + 0.1 thdot^2 + 0.001 a^2 on the pre-step state with the
    angle wrapped to [-pi, pi]. Episodes never terminate early.
    """

    dim_s = 3
    dim_a = 1
    horizon = 200
    action_low = -2.0
    action_high = 2.0

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        th = rng.uniform(-math.pi, math.pi)
        thdot = rng.uniform(-1.0, 1.0)
        return np.array([math.cos(th), math.sin(th), thdot])

    def step(self, s, a):
        u = min(max(float(a[0]), self.action_low), self.action_high)
        th = math.atan2(s[1], s[0])
        thdot = float(s[2])
        reward = -(th * th + 0.1 * thdot * thdot + 0.001 * u * u)
        thdd = 15.0 * math.sin(th) + 3.0 * u
        thdot_new = min(max(thdot + 0.05 * thdd, -8.0), 8.0)
        th_new = th + 0.05 * thdot_new
        s_new = np.array([math.cos(th_new), math.sin(th_new), thdot_new])
        return s_new, reward, False


class PointMassEnv:
    """Force-controlled 2-d double integrator driven toward the origin.

    State (px, py, vx, vy); semi-implicit Euler with dt 0.1; cost is
    squared distance to the goal plus 0.01 ||a||^2 on the pre-step state.
    """

    dim_s = 4
    dim_a = 2
    horizon = 100
    action_low = -1.0
    action_high = 1.0
    dt = 0.1

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        pos = rng.uniform(-1.0, 1.0, size=2)
        return np.array([pos[0], pos[1], 0.0, 0.0])

    def step(self, s, a):
        a = np.clip(np.asarray(a, dtype=np.float64), self.action_low, self.action_high)
        pos, vel = s[:2], s[2:]
        reward = float(-(pos @ pos) - 0.01 * (a @ a))
        vel_new = vel + self.dt * a
        pos_new = pos + self.dt * vel_new
        return np.concatenate([pos_new, vel_new]), reward, False


ENVIRONMENTS = {"pendulum": PendulumEnv, "pointmass": PointMassEnv}


def make_env(env_id: str):
    try:
        return ENVIRONMENTS[env_id]()
    except KeyError:
        raise ConfigError(f"unknown environment id {env_id!r}; "
                          f"known: {sorted(ENVIRONMENTS)}") from None


def rollout(env, policy, rng: np.random.Generator, episodes: int,
            start_state=None) -> TrajectoryDataset:
    """Collect full episodes under the stochastic policy.

    Records the pre-clipping action and its behavior log-density per step.
    ``start_state`` replaces the first episode's reset, letting the driver
    begin from the state the initial policy was anchored to.
    """
    data = TrajectoryDataset()
    for ep_idx in range(episodes):
        if ep_idx == 0 and start_state is not None:
            s = np.asarray(start_state, dtype=np.float64)
        else:
            s = env.reset(rng)
        states, actions, rewards, logps = [], [], [], []
        terminal = False
        for _ in range(env.horizon):
            a, logp = policy.sample(s, rng)
            s_next, r, terminal = env.step(s, a)
            if not np.all(np.isfinite(s_next)):
                raise NumericalError(f"environment produced a non-finite state: {s_next}")
            states.append(s)
            actions.append(a)
            rewards.append(r)
            logps.append(logp)
            s = s_next
            if terminal:
                break
        data.episodes.append(Episode(states, actions, rewards, logps,
                                     final_state=s, terminal=terminal))
    return data


def evaluate(env, policy, rng: np.random.Generator, episodes: int) -> list:
    """Episode returns under deterministic mean actions."""
    returns = []
    for _ in range(episodes):
        s = env.reset(rng)
        total = 0.0
        for _ in range(env.horizon):
            s, r, terminal = env.step(s, policy.mean_action(s))
            total += r
            if terminal:
                break
        returns.append(total)
    return returns
