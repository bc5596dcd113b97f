"""Maze POMDPs: world sampling, deterministic stepping, and observation tensors.

Worlds are square grids (11x11 in all shipped experiments) containing wall
cells, four terminal objects, an optional subgoal, and a single agent.
Consuming a terminal object ends the episode; consuming the subgoal does not,
but may trigger a "swap event" that permutes the objects' locations.

Coordinates are (row, col) with row 0 at the top when rendered. The action
index order is fixed: UP=0, DOWN=1, LEFT=2, RIGHT=3, STAY=4.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

Cell = tuple[int, int]

UP, DOWN, LEFT, RIGHT, STAY = range(5)
N_ACTIONS = 5
ACTION_NAMES = ("up", "down", "left", "right", "stay")
ACTION_DELTAS = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))

N_OBJECTS = 4
SUBGOAL_ID = 4  # index used for the subgoal in belief arrays and planes

# Observation plane layout. Agent views carry all 9 planes; observer views
# drop the trailing mask plane (the observer sees everything).
PLANE_EMPTY = 0
PLANE_WALL = 1
PLANE_OBJECTS = (2, 3, 4, 5)
PLANE_SUBGOAL = 6
PLANE_AGENT = 7
PLANE_MASK = 8
N_PLANES_AGENT = 9
N_PLANES_OBSERVER = 8

# Episode outcome sentinels (WorldState.terminal)
TIMEOUT = -1

# fov sentinel: a blind agent observes nothing. fov=11 means full view.
BLIND = None
FULL_VIEW_FOV = 11


class ContractViolation(Exception):
    """An operation was called outside its stated preconditions."""


class GenerationError(Exception):
    """World sampling could not satisfy the placement invariants."""


@dataclass(frozen=True)
class WorldConfig:
    width: int = 11
    height: int = 11
    wall_range: tuple[int, int] = (0, 4)
    subgoal: bool = False
    timeout: int = 31
    swap_prob: float = 0.0
    max_retries: int = 100

    def __post_init__(self):
        lo, hi = self.wall_range
        if lo < 0 or hi < lo:
            raise ContractViolation(f"bad wall_range {self.wall_range}")
        if self.timeout <= 0:
            raise ContractViolation("timeout must be positive")
        if not 0.0 <= self.swap_prob <= 1.0:
            raise ContractViolation("swap_prob must be a probability")


@dataclass(frozen=True)
class GridWorld:
    width: int
    height: int
    walls: frozenset
    wall_segments: tuple
    objects: tuple  # cell of object k at spawn, k = 0..3
    subgoal: Optional[Cell]
    agent_start: Cell

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    def in_bounds(self, cell: Cell) -> bool:
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width

    def passable(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and cell not in self.walls

    def flat(self, cell: Cell) -> int:
        return cell[0] * self.width + cell[1]

    def validate(self) -> None:
        if len(self.objects) != N_OBJECTS:
            raise ContractViolation("exactly 4 terminal objects required")
        special = list(self.objects) + [self.agent_start]
        if self.subgoal is not None:
            special.append(self.subgoal)
        if len(set(special)) != len(special):
            raise ContractViolation("object/subgoal/start cells must be distinct")
        for cell in special:
            if not self.in_bounds(cell) or cell in self.walls:
                raise ContractViolation(f"special cell {cell} out of bounds or on a wall")

    def wall_array(self) -> np.ndarray:
        arr = np.zeros((self.height, self.width), dtype=bool)
        for (r, c) in self.walls:
            arr[r, c] = True
        return arr


@dataclass(frozen=True)
class StepOutcome:
    collision: bool = False
    consumed_object: Optional[int] = None
    consumed_subgoal: bool = False
    swap: Optional[tuple] = None  # permutation applied to object ids, or None
    timed_out: bool = False


@dataclass(frozen=True)
class WorldState:
    world: GridWorld
    agent_pos: Cell
    object_pos: tuple  # current cell of object k (swaps move these)
    subgoal_pos: Optional[Cell]
    subgoal_consumed: bool
    step_count: int
    timeout: int
    terminal: Optional[int] = None  # object id, TIMEOUT, or None (running)

    @property
    def terminated(self) -> bool:
        return self.terminal is not None

    @property
    def consumed(self) -> frozenset:
        out = set()
        if self.terminal is not None and self.terminal >= 0:
            out.add(self.terminal)
        if self.subgoal_consumed:
            out.add(SUBGOAL_ID)
        return frozenset(out)


def initial_state(world: GridWorld, timeout: int) -> WorldState:
    return WorldState(
        world=world,
        agent_pos=world.agent_start,
        object_pos=tuple(world.objects),
        subgoal_pos=world.subgoal,
        subgoal_consumed=False,
        step_count=0,
        timeout=timeout,
    )


def _raster_line(p0: Cell, p1: Cell) -> list:
    """Bresenham's integer line algorithm, endpoints inclusive.

    Chosen as the documented rasterization rule for diagonal wall segments.
    """
    r0, c0 = p0
    r1, c1 = p1
    cells = []
    dr = abs(r1 - r0)
    dc = abs(c1 - c0)
    sr = 1 if r0 < r1 else -1
    sc = 1 if c0 < c1 else -1
    err = dc - dr
    r, c = r0, c0
    while True:
        cells.append((r, c))
        if (r, c) == (r1, c1):
            break
        e2 = 2 * err
        if e2 > -dr:
            err -= dr
            c += sc
        if e2 < dc:
            err += dc
            r += sr
    return cells


def sample_world(config: WorldConfig, rng: np.random.Generator) -> GridWorld:
    """Sample a maze: wall segments first, then distinct free special cells.

    Walls are line segments between two random endpoints (possibly diagonal),
    rasterized by Bresenham's rule. The whole world is rejection-sampled up to
    ``config.max_retries`` times if the placement invariants cannot be met.
    """
    h, w = config.height, config.width
    lo, hi = config.wall_range
    n_special = N_OBJECTS + 1 + (1 if config.subgoal else 0)
    for _ in range(config.max_retries):
        n_segments = int(rng.integers(lo, hi + 1))
        walls = set()
        segments = []
        for _ in range(n_segments):
            p0 = (int(rng.integers(h)), int(rng.integers(w)))
            p1 = (int(rng.integers(h)), int(rng.integers(w)))
            segments.append((p0, p1))
            walls.update(_raster_line(p0, p1))
        free = [(r, c) for r in range(h) for c in range(w) if (r, c) not in walls]
        if len(free) < n_special:
            continue
        picks = rng.choice(len(free), size=n_special, replace=False)
        cells = [free[i] for i in picks]
        world = GridWorld(
            width=w,
            height=h,
            walls=frozenset(walls),
            wall_segments=tuple(segments),
            objects=tuple(cells[:N_OBJECTS]),
            subgoal=cells[N_OBJECTS] if config.subgoal else None,
            agent_start=cells[-1],
        )
        try:
            world.validate()
        except ContractViolation:
            continue
        return world
    raise GenerationError(
        f"could not place {n_special} special cells after {config.max_retries} retries"
    )


def step(
    state: WorldState,
    action: int,
    swap_prob: float,
    rng: np.random.Generator,
) -> tuple[WorldState, StepOutcome]:
    """Advance one time step. Deterministic except for the swap draw.

    Moving into a wall or the boundary leaves the agent in place and raises
    the collision flag. Entering a terminal object's cell consumes it and
    terminates. Entering the (unconsumed) subgoal cell consumes it and, with
    probability ``swap_prob``, permutes the objects' locations uniformly over
    all 4! permutations (identity included).
    """
    if state.terminated:
        raise ContractViolation("step() on a terminated state")
    if not 0 <= action < N_ACTIONS:
        raise ContractViolation(f"unknown action {action}")

    dr, dc = ACTION_DELTAS[action]
    target = (state.agent_pos[0] + dr, state.agent_pos[1] + dc)
    collision = False
    if target != state.agent_pos and not state.world.passable(target):
        target = state.agent_pos
        collision = True

    object_pos = state.object_pos
    subgoal_consumed = state.subgoal_consumed
    consumed_object = None
    consumed_subgoal = False
    swap = None

    for k, cell in enumerate(object_pos):
        if target == cell:
            consumed_object = k
            break
    if (
        consumed_object is None
        and not subgoal_consumed
        and state.subgoal_pos is not None
        and target == state.subgoal_pos
    ):
        consumed_subgoal = True
        subgoal_consumed = True
        if rng.random() < swap_prob:
            perm = tuple(int(i) for i in rng.permutation(N_OBJECTS))
            object_pos = tuple(object_pos[perm[k]] for k in range(N_OBJECTS))
            swap = perm

    step_count = state.step_count + 1
    terminal = consumed_object
    timed_out = False
    if terminal is None and step_count >= state.timeout:
        terminal = TIMEOUT
        timed_out = True

    new_state = replace(
        state,
        agent_pos=target,
        object_pos=object_pos,
        subgoal_consumed=subgoal_consumed,
        step_count=step_count,
        terminal=terminal,
    )
    outcome = StepOutcome(
        collision=collision,
        consumed_object=consumed_object,
        consumed_subgoal=consumed_subgoal,
        swap=swap,
        timed_out=timed_out,
    )
    return new_state, outcome


def apply_swap(state: WorldState, perm: Sequence[int]) -> WorldState:
    """Force a specific object permutation (used by counterfactual evals)."""
    object_pos = tuple(state.object_pos[perm[k]] for k in range(N_OBJECTS))
    return replace(state, object_pos=object_pos)


def _content_planes(state: WorldState) -> np.ndarray:
    """The 8 content planes (no mask), uint8, shape (H, W, 8)."""
    world = state.world
    h, w = world.height, world.width
    planes = np.zeros((h, w, N_PLANES_OBSERVER), dtype=np.uint8)
    occupied = np.zeros((h, w), dtype=bool)
    for (r, c) in world.walls:
        planes[r, c, PLANE_WALL] = 1
        occupied[r, c] = True
    for k, cell in enumerate(state.object_pos):
        if state.terminal == k:
            continue  # consumed objects are absent
        r, c = cell
        planes[r, c, PLANE_OBJECTS[k]] = 1
        occupied[r, c] = True
    if state.subgoal_pos is not None and not state.subgoal_consumed:
        r, c = state.subgoal_pos
        planes[r, c, PLANE_SUBGOAL] = 1
        occupied[r, c] = True
    r, c = state.agent_pos
    planes[r, c, PLANE_AGENT] = 1
    occupied[r, c] = True
    planes[:, :, PLANE_EMPTY] = (~occupied).astype(np.uint8)
    return planes


def render_observer(state: WorldState) -> np.ndarray:
    """Full-observability tensor, shape (H, W, 8), entries in {0, 1}."""
    return _content_planes(state)


def visibility_mask(state: WorldState, fov) -> np.ndarray:
    """Boolean (H, W) array: True where the agent can see.

    ``fov`` is an odd window side length in {3,5,7,9}, 11 for a full view,
    or BLIND (None) for no view at all.
    """
    h, w = state.world.height, state.world.width
    if fov is BLIND:
        return np.zeros((h, w), dtype=bool)
    if fov % 2 == 0:
        raise ContractViolation(f"fov must be odd, got {fov}")
    if fov >= FULL_VIEW_FOV:
        return np.ones((h, w), dtype=bool)
    half = fov // 2
    r, c = state.agent_pos
    vis = np.zeros((h, w), dtype=bool)
    vis[max(0, r - half): r + half + 1, max(0, c - half): c + half + 1] = True
    return vis


def render_partial(state: WorldState, fov) -> np.ndarray:
    """Agent-view tensor, shape (H, W, 9): masked content plus a mask plane.

    Cells outside the fov window are flagged on the mask plane and zeroed on
    every content plane. fov=11 equals the observer render plus an all-zero
    mask plane; BLIND yields an all-ones mask and zero content.
    """
    content = _content_planes(state)
    vis = visibility_mask(state, fov)
    planes = np.zeros(content.shape[:2] + (N_PLANES_AGENT,), dtype=np.uint8)
    planes[:, :, :N_PLANES_OBSERVER] = content * vis[:, :, None]
    planes[:, :, PLANE_MASK] = (~vis).astype(np.uint8)
    return planes
