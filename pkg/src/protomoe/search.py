"""Randomized discrete optimization of the prototype list.

Centers are only ever replaced by states taken verbatim from the current
dataset, keeping every prototype a real observed situation. A swap removes k
centers (biased toward low-activation ones) and inserts k dataset states
(biased toward poorly covered ones); it is kept only when it improves the
coverage-margin objective without leaving the KL ball around the current
policy, including the stricter feature-change check the follow-up
differentiable update relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .policy import MoEPolicy, expected_kl
from .projections import UpdateConstraints, _mean_part


@dataclass
class SearchConfig:
    top_n: int = 3              # margin size in the swap objective
    n_candidates: int = 10      # proposals generated per swap count
    alpha: float = 2.0          # polynomial randomization exponent
    max_attempts: int = 50      # cap on candidate batches per call

    def __post_init__(self):
        if self.top_n < 1 or self.n_candidates < 1 or self.alpha <= 0 or self.max_attempts < 1:
            raise ValueError("invalid search configuration")


@dataclass
class SwapProposal:
    remove_slots: np.ndarray
    insert_indices: np.ndarray
    objective: float
    kl: float
    floor_kl: float
    feasible: bool


@dataclass
class SwapReport:
    objective_before: float
    objective_after: float
    accepted: list = field(default_factory=list)  # (k, objective, kl) per acceptance
    total_swapped: int = 0
    proposals_evaluated: int = 0

    @property
    def changed(self) -> bool:
        return self.total_swapped > 0


def swap_objective(policy: MoEPolicy, states, top_n: int) -> float:
    """Coverage margin: mean over states of (max feature - mean of top-N features).

    Large values mean each state is close to one and only one prototype.
    Only active slots count; the value lies in [0, 1 - 1/N].
    """
    phi = policy.features(states)[:, policy.active]
    if phi.shape[1] < top_n:
        raise ValueError(f"top_n={top_n} exceeds the {phi.shape[1]} active centers")
    top = -np.partition(-phi, top_n - 1, axis=1)[:, :top_n]
    return float((top[:, 0] - top.mean(axis=1)).mean())


def heuristic_h1(policy: MoEPolicy, states) -> np.ndarray:
    """Mean share of each cluster in the membership mass; low = replaceable.

    Uses the plain membership normalization (no default-expert slack), with
    0/0 treated as 0 for states out of reach of every cluster.
    """
    w = policy.c * policy.features(states)
    total = w.sum(axis=1, keepdims=True)
    shares = np.divide(w, total, out=np.zeros_like(w), where=total > 0)
    return shares.mean(axis=0)


def heuristic_h2(states, policy: MoEPolicy) -> np.ndarray:
    """Total feature mass of a state; low = far from every prototype."""
    phi = policy.features(states)
    return phi.sum(axis=-1)


def polynomial_rank_sample(ranked_items, count: int, alpha: float,
                           rng: np.random.Generator) -> list:
    """Draw ``count`` items without replacement, rank r picked with weight r^-alpha.

    ``ranked_items`` must be ordered best-first (rank 1 at index 0).
    """
    items = list(ranked_items)
    if count > len(items):
        raise ValueError(f"cannot sample {count} items from {len(items)}")
    weights = np.arange(1, len(items) + 1, dtype=np.float64) ** (-alpha)
    chosen = []
    available = list(range(len(items)))
    for _ in range(count):
        p = weights[available]
        pick = rng.choice(len(available), p=p / p.sum())
        chosen.append(items[available.pop(pick)])
    return chosen


def _swapped(policy: MoEPolicy, slots, states_sel, actions_sel) -> MoEPolicy:
    """Replace the given slots: new centers take their own logged actions,
    inherit the replaced clusters' weights."""
    centers = policy.centers.copy()
    m = policy.M.copy()
    active = policy.active.copy()
    centers[slots] = states_sel
    m[slots] = actions_sel
    active[slots] = True
    return policy.replace(centers=centers, M=m, active=active)


def swap_clusters(policy: MoEPolicy, data, constraints: UpdateConstraints,
                  cfg: SearchConfig, rng: np.random.Generator):
    """Randomized swap search with a halving schedule on the swap count.

    Starts by attempting to swap every slot; whenever no generated proposal
    both improves the objective and stays KL-feasible with respect to the
    input policy, the swap count halves. Feasibility also requires the
    feature change alone (input action matrix on the new features) to stay
    strictly inside the KL budget, which the later mean-and-covariance
    update needs as its floor.
    """
    if data.advantages is None:
        raise ValueError("advantages must be computed before searching")
    states = data.all_states()
    actions = data.all_actions()
    if len(states) == 0:
        raise ValueError("empty dataset")

    q = policy
    psi_q = q.memberships(states)
    mu_q = psi_q @ q.M
    eps = constraints.epsilon

    cur = policy
    cur_obj = swap_objective(cur, states, cfg.top_n)
    report = SwapReport(objective_before=cur_obj, objective_after=cur_obj)

    k = min(policy.n_clusters, len(states))
    attempts = 0
    while k >= 1 and attempts < cfg.max_attempts:
        attempts += 1
        removal_rank = np.argsort(heuristic_h1(cur, states), kind="stable")
        insertion_rank = np.argsort(heuristic_h2(states, cur), kind="stable")

        best = None
        for _ in range(cfg.n_candidates):
            slots = np.array(polynomial_rank_sample(removal_rank, k, cfg.alpha, rng))
            inserts = np.array(polynomial_rank_sample(insertion_rank, k, cfg.alpha, rng))
            cand = _swapped(cur, slots, states[inserts], actions[inserts])

            kl, _ = expected_kl(cand, q, states)
            floor = _mean_part(cand.memberships(states) @ q.M - mu_q, q.sigma)
            feasible = kl <= eps and floor < eps
            obj = swap_objective(cand, states, cfg.top_n)
            report.proposals_evaluated += 1
            proposal = SwapProposal(slots, inserts, obj, kl, floor, feasible)
            if feasible and (best is None or obj > best[0].objective):
                best = (proposal, cand)

        if best is not None and best[0].objective > cur_obj:
            cur = best[1]
            cur_obj = best[0].objective
            report.accepted.append((k, cur_obj, best[0].kl))
            report.total_swapped += k
        else:
            k //= 2

    report.objective_after = cur_obj
    return cur, report


def compress_policy(policy: MoEPolicy, data, constraints: UpdateConstraints):
    """Zero cluster weights one at a time, keeping each deletion that leaves
    the result within the KL ball around the pre-compression policy."""
    states = data.all_states()
    ref = policy
    cur = policy
    removed = 0
    kl_checks = []
    for i in range(policy.n_clusters):
        if not cur.active[i] or cur.c[i] == 0.0:
            continue
        c2 = cur.c.copy()
        c2[i] = 0.0
        cand = cur.replace(c=c2)
        kl, _ = expected_kl(cand, ref, states)
        if kl <= constraints.epsilon:
            cur = cand
            removed += 1
            kl_checks.append(kl)
    return cur, removed, kl_checks


def add_clusters(policy: MoEPolicy, data) -> MoEPolicy:
    """Fill uninitialized slots with the highest-advantage transitions.

    The new clusters take their transitions' states and logged actions but
    keep zero weight, so the action distribution is unchanged everywhere.
    """
    if data.advantages is None:
        raise ValueError("advantages must be computed before adding clusters")
    free = np.flatnonzero(~policy.active)
    if len(free) == 0:
        return policy
    adv = data.all_advantages()
    states = data.all_states()
    actions = data.all_actions()
    order = np.argsort(-adv, kind="stable")[:len(free)]

    centers = policy.centers.copy()
    m = policy.M.copy()
    active = policy.active.copy()
    for slot, idx in zip(free, order):
        centers[slot] = states[idx]
        m[slot] = actions[idx]
        active[slot] = True
    return policy.replace(centers=centers, M=m, active=active)
