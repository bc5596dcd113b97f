"""Agent species whose behavioural traces the observer network consumes.

Species:

* ``RandomPolicy`` -- a fixed action distribution drawn from Dir(alpha).
* ``Planner`` -- full-observability finite-horizon value iteration over the
  true maze (the greedy subspecies just carries a large move cost).
* ``Blind`` -- walks its heading until it collides, then rotates by a fixed
  per-agent turn direction.
* ``WallFollower`` -- classic hand-on-wall rule over its 5x5 view; walks
  straight until it first meets a wall, then follows it. Steps onto any
  adjacent visible object opportunistically.
* ``BeliefPlanner`` -- partially observable planner: exact visibility-based
  Bayesian filter over object locations plus a persistent wall map; replans
  every step by value iteration on the maximum-a-posteriori map.

All ``act`` functions are pure: they take an ``AgentState`` and return the
action distribution together with the successor state, so rollouts can be
forked (used by the counterfactual swap evaluations).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .gridworld import (
    ACTION_DELTAS,
    BLIND,
    DOWN,
    LEFT,
    N_ACTIONS,
    N_OBJECTS,
    PLANE_AGENT,
    PLANE_MASK,
    PLANE_OBJECTS,
    PLANE_SUBGOAL,
    PLANE_WALL,
    RIGHT,
    STAY,
    SUBGOAL_ID,
    UP,
    ContractViolation,
    GridWorld,
    WorldState,
    render_partial,
)

PLANNER_MOVE_COST = 0.01
GREEDY_MOVE_COST = 0.5
PLANNER_WALL_PENALTY = 0.05
BELIEF_MOVE_COST = 0.005
BELIEF_WALL_PENALTY = 0.05
BELIEF_PLAN_HORIZON_CAP = 32

# heading rotations: clockwise cycle in screen coordinates (row 0 on top)
_CW = {UP: RIGHT, RIGHT: DOWN, DOWN: LEFT, LEFT: UP}
_CCW = {v: k for k, v in _CW.items()}
_BACK = {UP: DOWN, DOWN: UP, LEFT: RIGHT, RIGHT: LEFT}


@dataclass(frozen=True)
class RandomPolicy:
    probs: tuple  # length 5, on the simplex
    kind: str = "random"


@dataclass(frozen=True)
class Planner:
    rewards: tuple  # reward of object k, components in (0, 1)
    move_cost: float = PLANNER_MOVE_COST
    wall_penalty: float = PLANNER_WALL_PENALTY
    kind: str = "planner"

    @property
    def greedy(self) -> bool:
        return self.move_cost >= GREEDY_MOVE_COST


@dataclass(frozen=True)
class Blind:
    initial_heading: int = RIGHT
    turn_clockwise: bool = True
    kind: str = "blind"


@dataclass(frozen=True)
class WallFollower:
    hand: str = "right"  # "right" traces room boundaries clockwise
    initial_heading: int = UP
    fov: int = 5
    kind: str = "wall_follower"


@dataclass(frozen=True)
class BeliefPlanner:
    fov: Optional[int]  # 3, 5, 7, 9, or BLIND (None)
    preferred_object: int = 0
    subgoal_first: bool = True
    move_cost: float = BELIEF_MOVE_COST
    wall_penalty: float = BELIEF_WALL_PENALTY
    kind: str = "belief_planner"


Species = Union[RandomPolicy, Planner, Blind, WallFollower, BeliefPlanner]


@dataclass(frozen=True)
class AgentSpec:
    id: str
    species: Species

    @property
    def kind(self) -> str:
        return self.species.kind


@dataclass
class AgentState:
    """Per-episode hidden state; reset at every episode start."""

    belief: Optional[np.ndarray] = None  # (5, n_cells + 1), rows sum to 1
    known_walls: Optional[np.ndarray] = None  # (H, W) int8: -1 unknown, 0 free, 1 wall
    last_collision: bool = False
    last_action: Optional[int] = None
    heading: Optional[int] = None
    attached: bool = False
    subgoal_done: bool = False

    def copy(self) -> "AgentState":
        new = copy.copy(self)
        if self.belief is not None:
            new.belief = self.belief.copy()
        if self.known_walls is not None:
            new.known_walls = self.known_walls.copy()
        return new


# ---------------------------------------------------------------------------
# species sampling


def sample_random_agent(alpha: float, rng: np.random.Generator) -> RandomPolicy:
    """Draw a fixed policy vector from a symmetric Dirichlet."""
    if alpha <= 0:
        raise ContractViolation("alpha must be positive")
    probs = rng.dirichlet([alpha] * N_ACTIONS)
    return RandomPolicy(probs=tuple(float(p) for p in probs))


def sample_planner_agent(
    rng: np.random.Generator,
    reward_alpha: float = 0.01,
    greedy: bool = False,
) -> Planner:
    rewards = rng.dirichlet([reward_alpha] * N_OBJECTS)
    move_cost = GREEDY_MOVE_COST if greedy else PLANNER_MOVE_COST
    return Planner(rewards=tuple(float(r) for r in rewards), move_cost=move_cost)


def sample_blind_agent(rng: np.random.Generator) -> Blind:
    return Blind(
        initial_heading=int(rng.integers(4)),
        turn_clockwise=bool(rng.integers(2)),
    )


def sample_wall_follower(rng: np.random.Generator, hand: Optional[str] = None) -> WallFollower:
    if hand is None:
        hand = "right" if rng.integers(2) else "left"
    return WallFollower(hand=hand, initial_heading=int(rng.integers(4)))


def sample_belief_planner(
    rng: np.random.Generator,
    fov: Optional[int],
    preferred_object: Optional[int] = None,
    subgoal_first: bool = True,
) -> BeliefPlanner:
    if preferred_object is None:
        preferred_object = int(rng.integers(N_OBJECTS))
    return BeliefPlanner(fov=fov, preferred_object=preferred_object, subgoal_first=subgoal_first)


# ---------------------------------------------------------------------------
# finite-horizon value iteration (shared by Planner, BeliefPlanner, MAP plans)


def _transition_tables(passable_flat: np.ndarray, height: int, width: int):
    n = height * width
    idx = np.arange(n)
    rows, cols = idx // width, idx % width
    next_idx = np.empty((N_ACTIONS, n), dtype=np.int64)
    bump = np.zeros((N_ACTIONS, n), dtype=bool)
    for a, (dr, dc) in enumerate(ACTION_DELTAS):
        nr, nc = rows + dr, cols + dc
        inside = (nr >= 0) & (nr < height) & (nc >= 0) & (nc < width)
        tgt = np.where(inside, nr * width + nc, idx)
        ok = inside & passable_flat[np.clip(nr, 0, height - 1) * width + np.clip(nc, 0, width - 1)]
        if a == STAY:
            ok = np.ones(n, dtype=bool)
            tgt = idx
        next_idx[a] = np.where(ok, tgt, idx)
        bump[a] = ~ok if a != STAY else False
    return next_idx, bump


class PolicyPlan:
    """Backward-induction values plus greedy policy extraction.

    ``values[k]`` is the best return achievable with k steps remaining.
    Following any argmax action at each remaining-step level realises
    ``values[horizon][start]`` exactly.
    """

    def __init__(self, values, next_idx, bump, absorb, reward_flat, move_cost, wall_penalty):
        self.values = values
        self._next_idx = next_idx
        self._bump = bump
        self._absorb = absorb
        self._reward = reward_flat
        self._move_cost = move_cost
        self._wall_penalty = wall_penalty

    @property
    def horizon(self) -> int:
        return self.values.shape[0] - 1

    def q_values(self, steps_left: int) -> np.ndarray:
        """(5, n) action values with ``steps_left`` actions remaining."""
        if steps_left < 1 or steps_left > self.horizon:
            raise ContractViolation(f"steps_left {steps_left} outside 1..{self.horizon}")
        v_prev = self.values[steps_left - 1]
        nxt = self._next_idx
        step_cost = np.where(self._bump, -self._move_cost - self._wall_penalty, -self._move_cost)
        return step_cost + np.where(self._absorb[nxt], self._reward[nxt], v_prev[nxt])

    def action_probs(self, flat_cell: int, steps_left: int) -> np.ndarray:
        q = self.q_values(steps_left)[:, flat_cell]
        best = q == q.max()
        return best / best.sum()

    def policy_map(self, steps_left: Optional[int] = None) -> np.ndarray:
        """(n, 5) per-cell uniform distribution over argmax actions."""
        if steps_left is None:
            steps_left = self.horizon
        q = self.q_values(steps_left)
        best = (q == q.max(axis=0, keepdims=True)).astype(np.float64)
        return (best / best.sum(axis=0, keepdims=True)).T


def value_iteration(
    passable: np.ndarray,
    absorb: np.ndarray,
    reward_flat: np.ndarray,
    move_cost: float,
    wall_penalty: float,
    horizon: int,
) -> PolicyPlan:
    """Finite-horizon deterministic-MDP backward induction.

    Entering an absorbing cell collects ``reward_flat`` there and ends the
    plan; every action (STAY included) costs ``move_cost``; attempting to
    enter a wall or the boundary additionally costs ``wall_penalty`` and
    leaves the position unchanged.
    """
    height, width = passable.shape
    n = height * width
    passable_flat = passable.reshape(-1)
    next_idx, bump = _transition_tables(passable_flat, height, width)
    values = np.zeros((horizon + 1, n), dtype=np.float64)
    step_cost = np.where(bump, -move_cost - wall_penalty, -move_cost)
    for k in range(1, horizon + 1):
        v_prev = values[k - 1]
        q = step_cost + np.where(absorb[next_idx], reward_flat[next_idx], v_prev[next_idx])
        v = q.max(axis=0)
        v[absorb] = 0.0
        values[k] = v
    return PolicyPlan(values, next_idx, bump, absorb, reward_flat, move_cost, wall_penalty)


def plan_value_iteration(
    world: GridWorld,
    reward,
    move_cost: float = PLANNER_MOVE_COST,
    wall_penalty: float = PLANNER_WALL_PENALTY,
    horizon: int = 31,
) -> PolicyPlan:
    """Plan on the true maze: the four terminal objects absorb with their rewards."""
    passable = ~world.wall_array()
    n = world.n_cells
    absorb = np.zeros(n, dtype=bool)
    reward_flat = np.zeros(n, dtype=np.float64)
    for k, cell in enumerate(world.objects):
        absorb[world.flat(cell)] = True
        reward_flat[world.flat(cell)] = float(reward[k])
    return value_iteration(passable, absorb, reward_flat, move_cost, wall_penalty, horizon)


# ---------------------------------------------------------------------------
# belief filtering


def initial_belief(n_cells: int) -> np.ndarray:
    """Uniform over all cells, zero on the absent bin, for all 5 objects."""
    belief = np.zeros((N_OBJECTS + 1, n_cells + 1), dtype=np.float64)
    belief[:, :n_cells] = 1.0 / n_cells
    return belief


def init_agent_state(spec: AgentSpec, world: GridWorld) -> AgentState:
    species = spec.species
    state = AgentState()
    if isinstance(species, (Blind, WallFollower)):
        state.heading = species.initial_heading
    if isinstance(species, BeliefPlanner):
        state.belief = initial_belief(world.n_cells)
        state.known_walls = np.full((world.height, world.width), -1, dtype=np.int8)
    return state


def _parse_observation(obs: np.ndarray):
    """Split an agent-view tensor into (visible mask, wall, object cells, subgoal, agent)."""
    vis = obs[:, :, PLANE_MASK] == 0
    walls = obs[:, :, PLANE_WALL] == 1
    objects = []
    for k in range(N_OBJECTS):
        locs = np.argwhere(obs[:, :, PLANE_OBJECTS[k]] == 1)
        objects.append(tuple(locs[0]) if len(locs) else None)
    locs = np.argwhere(obs[:, :, PLANE_SUBGOAL] == 1)
    subgoal = tuple(locs[0]) if len(locs) else None
    locs = np.argwhere(obs[:, :, PLANE_AGENT] == 1)
    agent = tuple(locs[0]) if len(locs) else None
    return vis, walls, objects, subgoal, agent


def update_belief(state: AgentState, obs: np.ndarray) -> AgentState:
    """Exact visibility filter over per-object location distributions.

    A visible object collapses its row to a point mass; otherwise all mass on
    visible cells is zeroed and the row renormalized over unseen cells (plus
    the absent bin). If a row is contradicted outright (certain mass seen to
    be empty), it resets to uniform over the currently unseen cells.

    Swap events are only reflected through what the agent actually sees:
    unobserved swaps leave beliefs unchanged, so the species has a hard
    observability boundary. ``spread_swap_kernel`` is available for species
    that do model the swap dynamics; none of the shipped ones use it.
    """
    if state.belief is None:
        raise ContractViolation("update_belief on a species without beliefs")
    h, w, _ = obs.shape
    n = h * w
    vis, walls, objects, subgoal, _ = _parse_observation(obs)
    new = state.copy()
    belief = new.belief

    if new.known_walls is not None:
        new.known_walls[vis & walls] = 1
        new.known_walls[vis & ~walls] = 0

    flat_vis = vis.reshape(-1)
    seen = objects + [subgoal]
    for k in range(N_OBJECTS + 1):
        if k == SUBGOAL_ID and new.subgoal_done:
            belief[k] = 0.0
            belief[k, n] = 1.0
            continue
        if seen[k] is not None:
            belief[k] = 0.0
            belief[k, seen[k][0] * w + seen[k][1]] = 1.0
            continue
        row = belief[k]
        row[:n][flat_vis] = 0.0
        total = row.sum()
        if total <= 0.0:
            unseen = ~flat_vis
            if unseen.any():
                row[:n][unseen] = 1.0 / unseen.sum()
                row[n] = 0.0
            else:
                row[:] = 0.0
                row[n] = 1.0
        else:
            row /= total
    return new


def spread_swap_kernel(belief: np.ndarray, swap_prob: float) -> np.ndarray:
    """Marginal effect of a possible uniform object permutation.

    Under a uniform draw from all 4! permutations, each object lands on each
    object's previous cell with probability 1/4, so the marginal posterior is
    a (1 - p, p)-mixture of staying put and the average of all four rows.
    """
    out = belief.copy()
    spread = belief[:N_OBJECTS, :].mean(axis=0)
    out[:N_OBJECTS] = (1 - swap_prob) * belief[:N_OBJECTS] + swap_prob * spread
    return out


def map_estimate(belief_row: np.ndarray, width: int, agent_pos, n_cells: int):
    """Argmax cell; ties broken by Manhattan distance to the agent, then index."""
    cells = belief_row[:n_cells]
    best = cells.max()
    if belief_row[n_cells] > best:
        return None  # most likely absent
    candidates = np.flatnonzero(cells == best)
    ar, ac = agent_pos
    dist = np.abs(candidates // width - ar) + np.abs(candidates % width - ac)
    order = np.lexsort((candidates, dist))
    flat = int(candidates[order[0]])
    return (flat // width, flat % width)


# ---------------------------------------------------------------------------
# acting


def act_random(species: RandomPolicy, state: AgentState) -> tuple[np.ndarray, AgentState]:
    return np.array(species.probs, dtype=np.float64), state


def act_planner(
    species: Planner,
    state: AgentState,
    ws: WorldState,
    plan: PolicyPlan,
) -> tuple[np.ndarray, AgentState]:
    remaining = ws.timeout - ws.step_count
    probs = plan.action_probs(ws.world.flat(ws.agent_pos), remaining)
    return probs, state


def _blocked(cell, known_free) -> bool:
    r, c = cell
    h, w = known_free.shape
    return not (0 <= r < h and 0 <= c < w) or not known_free[r, c]


def act_scripted(
    spec_species: Species,
    state: AgentState,
    obs: np.ndarray,
) -> tuple[np.ndarray, AgentState]:
    """Blind and WallFollower policies. Deterministic given the state."""
    if isinstance(spec_species, Blind):
        new = state.copy()
        if new.last_collision:
            rot = _CW if spec_species.turn_clockwise else _CCW
            new.heading = rot[new.heading]
        probs = np.zeros(N_ACTIONS)
        probs[new.heading] = 1.0
        return probs, new
    if not isinstance(spec_species, WallFollower):
        raise ContractViolation(f"act_scripted on species {spec_species.kind}")

    vis, walls, objects, subgoal, agent = _parse_observation(obs)
    if agent is None:
        raise ContractViolation("agent not visible in its own observation")
    free = vis & ~walls  # only visibly-free cells count as open
    new = state.copy()

    # Opportunistic consumption: step onto any adjacent visible object.
    targets = [c for c in objects if c is not None]
    if subgoal is not None:
        targets.append(subgoal)
    for a in (UP, DOWN, LEFT, RIGHT):
        dr, dc = ACTION_DELTAS[a]
        cell = (agent[0] + dr, agent[1] + dc)
        if cell in targets:
            new.heading = a
            probs = np.zeros(N_ACTIONS)
            probs[a] = 1.0
            return probs, new

    rot = _CW if spec_species.hand == "right" else _CCW
    anti = _CCW if spec_species.hand == "right" else _CW

    def ahead_of(h):
        dr, dc = ACTION_DELTAS[h]
        return (agent[0] + dr, agent[1] + dc)

    h = new.heading
    if not new.attached:
        if not _blocked(ahead_of(h), free):
            probs = np.zeros(N_ACTIONS)
            probs[h] = 1.0
            return probs, new
        new.attached = True
        for _ in range(3):
            h = rot[h]
            if not _blocked(ahead_of(h), free):
                break
        new.heading = h
        probs = np.zeros(N_ACTIONS)
        probs[h if not _blocked(ahead_of(h), free) else STAY] = 1.0
        return probs, new

    side = anti[h]
    choice = None
    if not _blocked(ahead_of(side), free):
        choice = side  # wall on the hand side ended: wrap the corner
    elif not _blocked(ahead_of(h), free):
        choice = h
    elif not _blocked(ahead_of(rot[h]), free):
        choice = rot[h]
    elif not _blocked(ahead_of(_BACK[h]), free):
        choice = _BACK[h]
    probs = np.zeros(N_ACTIONS)
    if choice is None:
        probs[STAY] = 1.0
    else:
        new.heading = choice
        probs[choice] = 1.0
    return probs, new


def act_belief_planner(
    species: BeliefPlanner,
    state: AgentState,
    obs: np.ndarray,
    ws_step_count: int,
    timeout: int,
    plan_cache: Optional[dict] = None,
) -> tuple[np.ndarray, AgentState]:
    """Update beliefs from the observation, then plan on the MAP map."""
    h, w, _ = obs.shape
    n = h * w
    new = update_belief(state, obs)
    _, _, _, _, agent = _parse_observation(obs)
    if agent is None:
        # Blind agents do not appear in their own (fully masked) view; the
        # driver passes the position separately via state bookkeeping.
        raise ContractViolation("belief planner requires the agent position")

    if not new.subgoal_done and species.subgoal_first:
        target = map_estimate(new.belief[SUBGOAL_ID], w, agent, n)
    else:
        target = map_estimate(new.belief[species.preferred_object], w, agent, n)
    if target is None or target == agent:
        probs = np.zeros(N_ACTIONS)
        probs[STAY] = 1.0
        return probs, new

    known_free = np.ones((h, w), dtype=bool)
    if new.known_walls is not None:
        known_free = new.known_walls != 1  # unknown cells treated as free

    absorb = np.zeros(n, dtype=bool)
    reward_flat = np.zeros(n, dtype=np.float64)
    for k in range(N_OBJECTS):
        cell = map_estimate(new.belief[k], w, agent, n)
        if cell is not None:
            absorb[cell[0] * w + cell[1]] = True
    t_flat = target[0] * w + target[1]
    absorb[t_flat] = True
    reward_flat[t_flat] = 1.0

    remaining = timeout - ws_step_count
    horizon = min(remaining, BELIEF_PLAN_HORIZON_CAP)
    key = None
    plan = None
    if plan_cache is not None:
        key = (known_free.tobytes(), absorb.tobytes(), t_flat, horizon)
        plan = plan_cache.get(key)
    if plan is None:
        plan = value_iteration(
            known_free, absorb, reward_flat,
            species.move_cost, species.wall_penalty, horizon,
        )
        if plan_cache is not None:
            plan_cache[key] = plan
    probs = plan.action_probs(agent[0] * w + agent[1], horizon)
    return probs, new


# ---------------------------------------------------------------------------
# unified per-step driver


class AgentRunner:
    """Drives one agent through one episode; exposes fork() for counterfactuals."""

    def __init__(self, spec: AgentSpec, world: GridWorld, timeout: int):
        self.spec = spec
        self.world = world
        self.timeout = timeout
        self.state = init_agent_state(spec, world)
        self._plan = None
        self._plan_cache: dict = {}
        if isinstance(spec.species, Planner):
            self._plan = plan_value_iteration(
                world,
                spec.species.rewards,
                spec.species.move_cost,
                spec.species.wall_penalty,
                horizon=timeout,
            )

    def fork(self) -> "AgentRunner":
        new = AgentRunner.__new__(AgentRunner)
        new.spec = self.spec
        new.world = self.world
        new.timeout = self.timeout
        new.state = self.state.copy()
        new._plan = self._plan
        new._plan_cache = self._plan_cache  # plans are immutable, safe to share
        return new

    def policy(self, ws: WorldState) -> np.ndarray:
        """Action distribution at ws; commits the belief/heading update."""
        species = self.spec.species
        if isinstance(species, RandomPolicy):
            probs, self.state = act_random(species, self.state)
        elif isinstance(species, Planner):
            probs, self.state = act_planner(species, self.state, ws, self._plan)
        elif isinstance(species, (Blind, WallFollower)):
            fov = species.fov if isinstance(species, WallFollower) else BLIND
            obs = render_partial(ws, fov)
            probs, self.state = act_scripted(species, self.state, obs)
        elif isinstance(species, BeliefPlanner):
            obs = render_partial(ws, species.fov)
            if species.fov is BLIND:
                # A blind planner still knows where it stands.
                obs = obs.copy()
                obs[ws.agent_pos[0], ws.agent_pos[1], PLANE_AGENT] = 1
            probs, self.state = act_belief_planner(
                species, self.state, obs, ws.step_count, self.timeout, self._plan_cache
            )
        else:
            raise ContractViolation(f"unknown species {species}")
        return probs

    def belief_snapshot(self, ws: WorldState) -> Optional[np.ndarray]:
        """Belief after observing ws, without committing the update.

        Used to label the final state of an episode, where the agent no
        longer acts. Blind and wall-following species report the prior.
        """
        species = self.spec.species
        if isinstance(species, BeliefPlanner):
            obs = render_partial(ws, species.fov)
            return update_belief(self.state, obs).belief
        return None

    def observe_outcome(self, outcome, ws_before: Optional[WorldState] = None,
                        action: Optional[int] = None) -> None:
        """Feed back the step outcome (collision flag, subgoal consumption).

        For belief planners, a collision additionally reveals the attempted
        cell as a wall -- the only wall evidence a blind planner ever gets.
        """
        self.state.last_collision = outcome.collision
        self.state.last_action = action
        if (
            outcome.collision
            and self.state.known_walls is not None
            and ws_before is not None
            and action is not None
        ):
            dr, dc = ACTION_DELTAS[action]
            r, c = ws_before.agent_pos[0] + dr, ws_before.agent_pos[1] + dc
            if 0 <= r < self.world.height and 0 <= c < self.world.width:
                self.state.known_walls[r, c] = 1
        if outcome.consumed_subgoal:
            self.state.subgoal_done = True


@dataclass
class EpisodeTrace:
    """Full record of one episode: enough to replay every observer state."""

    world: GridWorld
    timeout: int
    positions: list  # agent position at t = 0..T
    actions: list  # length T
    object_pos_seq: list  # object positions at t = 0..T
    subgoal_flag_seq: list  # subgoal consumed as of t = 0..T
    swaps: list  # (step index, permutation) pairs
    consumed_object: Optional[int]
    subgoal_step: Optional[int]
    timed_out: bool
    beliefs: Optional[np.ndarray] = None  # (T+1, 5, n_cells+1) agent beliefs

    @property
    def length(self) -> int:
        return len(self.actions)


def rollout(
    spec: AgentSpec,
    world: GridWorld,
    timeout: int,
    rng: np.random.Generator,
    swap_prob: float = 0.0,
    forced_actions=None,
    record_beliefs: bool = False,
) -> EpisodeTrace:
    """Roll one episode. ``forced_actions`` overrides the policy (off-policy
    forcing used by the hand-crafted probes); the agent's internal state still
    updates from what it observes."""
    from .gridworld import initial_state, step  # local import avoids cycle noise

    runner = AgentRunner(spec, world, timeout)
    ws = initial_state(world, timeout)
    positions = [ws.agent_pos]
    object_pos_seq = [ws.object_pos]
    subgoal_flag_seq = [ws.subgoal_consumed]
    actions: list = []
    swaps: list = []
    beliefs: list = []
    consumed_object = None
    subgoal_step = None
    timed_out = False
    t = 0
    while not ws.terminated:
        probs = runner.policy(ws)
        if record_beliefs:
            beliefs.append(runner.state.belief.copy() if runner.state.belief is not None else None)
        if forced_actions is not None and t < len(forced_actions):
            action = int(forced_actions[t])
        else:
            action = int(rng.choice(N_ACTIONS, p=probs))
        ws_before = ws
        ws, outcome = step(ws, action, swap_prob, rng)
        runner.observe_outcome(outcome, ws_before, action)
        actions.append(action)
        positions.append(ws.agent_pos)
        object_pos_seq.append(ws.object_pos)
        subgoal_flag_seq.append(ws.subgoal_consumed)
        if outcome.swap is not None:
            swaps.append((t, outcome.swap))
        if outcome.consumed_subgoal:
            subgoal_step = t
        if outcome.consumed_object is not None:
            consumed_object = outcome.consumed_object
        timed_out = outcome.timed_out
        t += 1
    if record_beliefs:
        final = runner.belief_snapshot(ws)
        beliefs.append(final if final is not None else (
            runner.state.belief.copy() if runner.state.belief is not None else None))
    belief_arr = None
    if record_beliefs and beliefs and beliefs[0] is not None:
        belief_arr = np.stack(beliefs)
    return EpisodeTrace(
        world=world,
        timeout=timeout,
        positions=positions,
        actions=actions,
        object_pos_seq=object_pos_seq,
        subgoal_flag_seq=subgoal_flag_seq,
        swaps=swaps,
        consumed_object=consumed_object,
        subgoal_step=subgoal_step,
        timed_out=timed_out,
        beliefs=belief_arr,
    )
