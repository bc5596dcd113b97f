"""Closed-form and brute-force references for evaluating the learned observer.

Everything here is independent of the network stack: Dirichlet-multinomial
predictives, Monte-Carlo expected KL between true and predicted policies,
exhaustive best-return search (the check on the value-iteration planner), and
an enumeration belief filter (the check on the agents' Bayesian filter).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .gridworld import (
    ACTION_DELTAS,
    N_ACTIONS,
    ContractViolation,
    GridWorld,
)

MAX_EXHAUSTIVE_HORIZON = 12
MAX_FILTER_CELLS = 25
MAX_FILTER_OBJECTS = 2


class BudgetError(Exception):
    """The requested instance is too large for brute-force enumeration."""


def dirichlet_posterior_predictive(counts, alpha: float) -> np.ndarray:
    """p(a) = (n_a + alpha) / (N + 5 alpha) for a symmetric Dirichlet prior."""
    if alpha <= 0:
        raise ContractViolation("alpha must be positive")
    n = np.asarray(counts, dtype=np.float64)
    if n.shape != (N_ACTIONS,) or (n < 0).any():
        raise ContractViolation("counts must be 5 non-negative values")
    return (n + alpha) / (n.sum() + N_ACTIONS * alpha)


def _log_evidence(counts: np.ndarray, alpha: float) -> float:
    # Sequence likelihood of the observed actions under Dir(alpha); the
    # multinomial coefficient is shared across components so it is dropped.
    big_a = N_ACTIONS * alpha
    return float(
        gammaln(big_a)
        - gammaln(counts.sum() + big_a)
        + np.sum(gammaln(counts + alpha) - gammaln(alpha))
    )


def mixture_posterior_predictive(counts, components) -> np.ndarray:
    """Predictive under a mixture of symmetric Dirichlet priors.

    ``components`` is a sequence of (weight, alpha) pairs; weights must form
    a simplex. Posterior component weights are computed in log space.
    """
    if len(components) == 0:
        raise ContractViolation("empty component list")
    weights = np.array([w for w, _ in components], dtype=np.float64)
    if abs(weights.sum() - 1.0) > 1e-9 or (weights < 0).any():
        raise ContractViolation("component weights must lie on a simplex")
    n = np.asarray(counts, dtype=np.float64)
    log_post = np.array(
        [math.log(w) + _log_evidence(n, a) if w > 0 else -np.inf for w, a in components]
    )
    log_post -= np.logaddexp.reduce(log_post)
    post = np.exp(log_post)
    pred = np.zeros(N_ACTIONS)
    for wk, (_, alpha) in zip(post, components):
        pred += wk * dirichlet_posterior_predictive(n, alpha)
    return pred


def mixture_posterior_weights(counts, components) -> np.ndarray:
    """Posterior component weights only (handy for tests and analysis)."""
    n = np.asarray(counts, dtype=np.float64)
    log_post = np.array(
        [math.log(w) + _log_evidence(n, a) if w > 0 else -np.inf for w, a in components]
    )
    log_post -= np.logaddexp.reduce(log_post)
    return np.exp(log_post)


def kl_divergence(p, q) -> float:
    """KL(p || q) in nats with the 0 log 0 := 0 convention."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


@dataclass(frozen=True)
class McEstimate:
    value: float
    stderr: float


def expected_kl_species(
    alpha_train: float,
    alpha_test: float,
    n_past: int,
    mc_samples: int = 10_000,
    rng: np.random.Generator | None = None,
) -> McEstimate:
    """Monte-Carlo E[KL(pi || predictive)] for a Bayes-optimal observer.

    The true policy is drawn from Dir(alpha_test); the observer sees n_past
    single-action episodes sampled from it and applies the Dir(alpha_train)
    posterior predictive.
    """
    if mc_samples < 1_000:
        raise ContractViolation("mc_samples must be at least 1000")
    if rng is None:
        rng = np.random.default_rng(0)
    pis = rng.dirichlet([alpha_test] * N_ACTIONS, size=mc_samples)
    if n_past > 0:
        # Vectorized multinomial draw per row via the counts of iid picks.
        u = rng.random((mc_samples, n_past))
        cdf = np.cumsum(pis, axis=1)
        acts = (u[:, :, None] > cdf[:, None, :]).sum(axis=2)
        counts = np.stack([(acts == a).sum(axis=1) for a in range(N_ACTIONS)], axis=1)
    else:
        counts = np.zeros((mc_samples, N_ACTIONS))
    pred = (counts + alpha_train) / (n_past + N_ACTIONS * alpha_train)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pis > 0, pis * (np.log(pis) - np.log(pred)), 0.0)
    kls = terms.sum(axis=1)
    return McEstimate(float(kls.mean()), float(kls.std(ddof=1) / math.sqrt(mc_samples)))


def exhaustive_best_return(
    world: GridWorld,
    reward,
    move_cost: float,
    wall_penalty: float,
    horizon: int,
) -> float:
    """Best achievable return over all action sequences of length <= horizon.

    Memoized top-down search over (position, steps_left); refuses horizons
    beyond MAX_EXHAUSTIVE_HORIZON. Every action (including STAY) costs
    ``move_cost``; bumping a wall or the boundary costs ``wall_penalty`` on
    top. Entering an object cell collects its reward and stops.
    """
    if horizon > MAX_EXHAUSTIVE_HORIZON:
        raise BudgetError(f"horizon {horizon} exceeds {MAX_EXHAUSTIVE_HORIZON}")
    reward = [float(r) for r in reward]
    object_at = {cell: k for k, cell in enumerate(world.objects)}
    memo: dict = {}

    def best(pos, steps_left: int) -> float:
        if steps_left == 0:
            return 0.0
        key = (pos, steps_left)
        if key in memo:
            return memo[key]
        value = -math.inf
        for a in range(N_ACTIONS):
            dr, dc = ACTION_DELTAS[a]
            nxt = (pos[0] + dr, pos[1] + dc)
            bump = nxt != pos and not world.passable(nxt)
            if bump:
                nxt = pos
            q = -move_cost - wall_penalty if bump else -move_cost
            k = object_at.get(nxt)
            if k is not None:
                q = q + reward[k]
            else:
                q = q + best(nxt, steps_left - 1)
            value = max(value, q)
        memo[key] = value
        return value

    return best(world.agent_start, horizon)


def exact_belief_filter(
    world: GridWorld,
    visibility_history,
    object_ids,
) -> np.ndarray:
    """Posterior over object locations by enumerating joint static placements.

    ``visibility_history`` is a sequence of boolean (H, W) arrays (the cells
    the agent could see at each step); observations are generated by the
    world's true object positions. Objects do not move in the enumerated
    dynamics. The prior is uniform over all cells (matching the agents' t=0
    prior, which does not know the walls), subject to the tracked objects
    occupying distinct cells. Returns an array of shape
    (len(object_ids), n_cells + 1); the final bin is "absent" and carries
    zero mass, since a terminal object cannot disappear mid-episode.

    Only instances up to MAX_FILTER_CELLS cells and MAX_FILTER_OBJECTS
    objects are accepted.
    """
    if world.n_cells > MAX_FILTER_CELLS:
        raise BudgetError(f"{world.n_cells} cells exceeds {MAX_FILTER_CELLS}")
    if len(object_ids) > MAX_FILTER_OBJECTS:
        raise BudgetError(f"{len(object_ids)} objects exceeds {MAX_FILTER_OBJECTS}")
    n = world.n_cells
    m = len(object_ids)

    # consistent[k][idx]: placing object k on cell idx reproduces every
    # observation. A hypothetical cell that was ever visible must match the
    # true position; a sighting of the true position pins the placement.
    consistent = np.ones((m, n), dtype=bool)
    for row, k in enumerate(object_ids):
        true_idx = world.flat(world.objects[k])
        for vis in visibility_history:
            flat_vis = np.asarray(vis, dtype=bool).reshape(-1)
            if flat_vis[true_idx]:
                pin = np.zeros(n, dtype=bool)
                pin[true_idx] = True
                consistent[row] &= pin
            else:
                consistent[row] &= ~flat_vis

    out = np.zeros((m, n + 1), dtype=np.float64)
    if m == 1:
        weights = consistent[0].astype(np.float64)
        total = weights.sum()
        if total == 0:
            raise ContractViolation("observations inconsistent with all placements")
        out[0, :n] = weights / total
        return out

    # Joint enumeration over distinct cell pairs.
    counts = np.zeros((m, n), dtype=np.float64)
    for i in range(n):
        if not consistent[0][i]:
            continue
        for j in range(n):
            if i == j or not consistent[1][j]:
                continue
            counts[0, i] += 1.0
            counts[1, j] += 1.0
    total = counts[0].sum()
    if total == 0:
        raise ContractViolation("observations inconsistent with all placements")
    out[:, :n] = counts / counts.sum(axis=1, keepdims=True)
    return out
