"""Dataset generation, NDJSON persistence, and replay into training arrays.

A dataset is one JSON header line (schema version, config hash, manifest
reference) followed by one episode record per line. Records hold only what
cannot be recomputed: the world, the action sequence, swap events, and
outcome labels, plus a ``hidden`` block (species, parameters) that is used
for targets and analysis only -- observer-facing tensors are materialized
from the world and actions alone, so no species information can leak.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .. import agents as ag
from .. import gridworld as gw
from ..gridworld import BLIND, GridWorld, WorldConfig

SCHEMA = "tomlab-episodes"
SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# populations


def sample_population(pop_cfg: dict, n_agents: int, role: str,
                      rng: np.random.Generator) -> list:
    """Draw agent specs for one population role ("train" or "test")."""
    kind = pop_cfg["species"]
    specs = []
    for i in range(n_agents):
        agent_id = f"{role}-{i:05d}"
        if kind == "random":
            species = ag.sample_random_agent(pop_cfg["alpha"], rng)
        elif kind == "random_mixture":
            alphas = pop_cfg["alphas"]
            alpha = alphas[i % len(alphas)]
            species = ag.sample_random_agent(alpha, rng)
        elif kind == "planner":
            greedy = rng.random() < pop_cfg.get("greedy_fraction", 0.0)
            species = ag.sample_planner_agent(
                rng, reward_alpha=pop_cfg.get("reward_alpha", 0.01), greedy=greedy)
        elif kind == "belief_planner":
            fovs = pop_cfg.get("fovs", [5])
            fov = fovs[i % len(fovs)]
            fov = None if fov in (None, "blind") else int(fov)
            species = ag.sample_belief_planner(rng, fov,
                                               preferred_object=int(rng.integers(4)))
        else:
            raise ValueError(f"unknown species kind {kind!r}")
        specs.append(ag.AgentSpec(agent_id, species))
    return specs


def _species_params(species) -> dict:
    if isinstance(species, ag.RandomPolicy):
        return {"probs": list(species.probs)}
    if isinstance(species, ag.Planner):
        return {"rewards": list(species.rewards), "move_cost": species.move_cost,
                "wall_penalty": species.wall_penalty}
    if isinstance(species, ag.Blind):
        return {"initial_heading": species.initial_heading,
                "turn_clockwise": species.turn_clockwise}
    if isinstance(species, ag.WallFollower):
        return {"hand": species.hand, "initial_heading": species.initial_heading,
                "fov": species.fov}
    if isinstance(species, ag.BeliefPlanner):
        return {"fov": species.fov, "preferred_object": species.preferred_object,
                "subgoal_first": species.subgoal_first}
    raise ValueError(f"unknown species {species}")


def species_from_params(kind: str, params: dict):
    if kind == "random":
        return ag.RandomPolicy(probs=tuple(params["probs"]))
    if kind == "planner":
        return ag.Planner(rewards=tuple(params["rewards"]),
                          move_cost=params["move_cost"],
                          wall_penalty=params["wall_penalty"])
    if kind == "blind":
        return ag.Blind(initial_heading=params["initial_heading"],
                        turn_clockwise=params["turn_clockwise"])
    if kind == "wall_follower":
        return ag.WallFollower(hand=params["hand"],
                               initial_heading=params["initial_heading"],
                               fov=params["fov"])
    if kind == "belief_planner":
        fov = params["fov"]
        return ag.BeliefPlanner(fov=None if fov is None else int(fov),
                                preferred_object=params["preferred_object"],
                                subgoal_first=params["subgoal_first"])
    raise ValueError(f"unknown species kind {kind!r}")


# ---------------------------------------------------------------------------
# record <-> trace


def world_to_json(world: GridWorld) -> dict:
    return {
        "w": world.width,
        "h": world.height,
        "walls": sorted([list(c) for c in world.walls]),
        "segments": [[*a, *b] for a, b in world.wall_segments],
        "objects": [list(c) for c in world.objects],
        "subgoal": list(world.subgoal) if world.subgoal else None,
        "start": list(world.agent_start),
    }


def world_from_json(d: dict) -> GridWorld:
    return GridWorld(
        width=d["w"], height=d["h"],
        walls=frozenset(tuple(c) for c in d["walls"]),
        wall_segments=tuple(((s[0], s[1]), (s[2], s[3])) for s in d["segments"]),
        objects=tuple(tuple(c) for c in d["objects"]),
        subgoal=tuple(d["subgoal"]) if d["subgoal"] else None,
        agent_start=tuple(d["start"]),
    )


def trace_to_record(agent_id: str, episode_idx: int, spec: ag.AgentSpec,
                    trace: ag.EpisodeTrace) -> dict:
    return {
        "agent_id": agent_id,
        "episode": episode_idx,
        "world": world_to_json(trace.world),
        "timeout": trace.timeout,
        "actions": [int(a) for a in trace.actions],
        "swaps": [[int(t), list(perm)] for t, perm in trace.swaps],
        "consumed": trace.consumed_object,
        "subgoal_step": trace.subgoal_step,
        "timed_out": trace.timed_out,
        "hidden": {"species": spec.kind, "params": _species_params(spec.species)},
    }


def _truncate_record(rec: dict, keep: int) -> dict:
    """Keep only the first ``keep`` steps of a recorded episode."""
    if len(rec["actions"]) <= keep:
        return rec
    rec = dict(rec)
    rec["actions"] = rec["actions"][:keep]
    rec["swaps"] = [s for s in rec["swaps"] if s[0] < keep]
    rec["consumed"] = None  # consumption terminates, so it was past ``keep``
    if rec["subgoal_step"] is not None and rec["subgoal_step"] >= keep:
        rec["subgoal_step"] = None
    rec["timed_out"] = False
    return rec


def generate_dataset(
    world_cfg: WorldConfig,
    specs: list,
    episodes_per_agent: int,
    seed: int,
    truncate_steps: Optional[int] = None,
) -> list:
    """Roll out every agent on fresh worlds; deterministic given the seed.

    ``truncate_steps`` stores only each episode's first k steps (the
    random-agent protocol keeps a single observation/action pair).
    """
    records = []
    root = np.random.SeedSequence(seed)
    for spec, ss in zip(specs, root.spawn(len(specs))):
        rng = np.random.default_rng(ss)
        for j in range(episodes_per_agent):
            world = gw.sample_world(world_cfg, rng)
            trace = ag.rollout(spec, world, world_cfg.timeout, rng,
                               swap_prob=world_cfg.swap_prob)
            rec = trace_to_record(spec.id, j, spec, trace)
            if truncate_steps is not None:
                rec = _truncate_record(rec, truncate_steps)
            records.append(rec)
    return records


def write_ndjson(path, records: list, header: dict) -> None:
    head = {"schema": SCHEMA, "version": SCHEMA_VERSION}
    head.update(header)
    with open(path, "w") as fh:
        fh.write(json.dumps(head, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_ndjson(path) -> tuple[dict, list]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty dataset file")
    header = json.loads(lines[0])
    if header.get("schema") != SCHEMA:
        raise ValueError(f"{path}: not a {SCHEMA} file")
    return header, [json.loads(line) for line in lines[1:]]


# ---------------------------------------------------------------------------
# replay


def replay_states(world: GridWorld, actions, swaps, timeout: int):
    """Deterministically rebuild the state sequence of a recorded episode."""
    swap_at = {t: tuple(perm) for t, perm in swaps}
    ws = gw.initial_state(world, timeout)
    states = [ws]
    rng = np.random.default_rng(0)  # never consulted: swap_prob=0
    for t, action in enumerate(actions):
        ws, out = gw.step(ws, int(action), 0.0, rng)
        if t in swap_at:
            if not out.consumed_subgoal:
                raise ValueError("recorded swap outside a subgoal consumption")
            ws = gw.apply_swap(ws, swap_at[t])
        states.append(ws)
    return states


@dataclass
class LoadedEpisode:
    """One episode unpacked to arrays, ready for batch assembly."""

    world: GridWorld
    timeout: int
    observer: np.ndarray  # (T+1, H, W, 8) uint8
    actions: np.ndarray  # (T,) int64
    positions_flat: np.ndarray  # (T+1,) int64
    object_pos: np.ndarray  # (T+1, 4) flat cells
    subgoal_consumed: np.ndarray  # (T+1,) bool
    consumed: Optional[int]
    subgoal_step: Optional[int]
    timed_out: bool
    hidden: dict
    states: list  # WorldState sequence (for counterfactual evals)
    beliefs: Optional[np.ndarray] = None  # (T+1, 5, n_cells+1) float32

    @property
    def length(self) -> int:
        return len(self.actions)


def load_episode(record: dict, with_beliefs: bool = False) -> LoadedEpisode:
    world = world_from_json(record["world"])
    timeout = record["timeout"]
    states = replay_states(world, record["actions"], record["swaps"], timeout)
    observer = np.stack([gw.render_observer(s) for s in states])
    positions = np.array([world.flat(s.agent_pos) for s in states], dtype=np.int64)
    object_pos = np.array(
        [[world.flat(c) for c in s.object_pos] for s in states], dtype=np.int64)
    subgoal_consumed = np.array([s.subgoal_consumed for s in states], dtype=bool)
    beliefs = None
    if with_beliefs:
        beliefs = belief_trajectory(world, states, record["hidden"])
    return LoadedEpisode(
        world=world,
        timeout=timeout,
        observer=observer,
        actions=np.array(record["actions"], dtype=np.int64),
        positions_flat=positions,
        object_pos=object_pos,
        subgoal_consumed=subgoal_consumed,
        consumed=record["consumed"],
        subgoal_step=record["subgoal_step"],
        timed_out=record["timed_out"],
        hidden=record["hidden"],
        states=states,
        beliefs=beliefs,
    )


def belief_trajectory(world: GridWorld, states, hidden: dict) -> np.ndarray:
    """Replay the agent's belief filter along the episode.

    The filter is deterministic given the observations, so this reproduces
    the agent's actual in-episode beliefs exactly. Species without a filter
    (random/planner/scripted) carry the static uniform prior.
    """
    fov = hidden["params"].get("fov", BLIND) if hidden["species"] == "belief_planner" else BLIND
    n = world.n_cells
    state = ag.AgentState(belief=ag.initial_belief(n),
                          known_walls=np.full((world.height, world.width), -1, np.int8))
    out = np.empty((len(states), ag.N_OBJECTS + 1, n + 1), dtype=np.float32)
    for t, ws in enumerate(states):
        state.subgoal_done = ws.subgoal_consumed
        obs = gw.render_partial(ws, fov)
        state = ag.update_belief(state, obs)
        out[t] = state.belief
    return out


class Dataset:
    """Episodes grouped by agent, unpacked once and shared by all samplers."""

    def __init__(self, header: dict, records: list, with_beliefs: bool = False):
        self.header = header
        by_agent: dict = {}
        for rec in records:
            by_agent.setdefault(rec["agent_id"], []).append(rec)
        self.agent_ids = sorted(by_agent)
        self.episodes = {
            aid: [load_episode(r, with_beliefs) for r in
                  sorted(recs, key=lambda r: r["episode"])]
            for aid, recs in by_agent.items()
        }

    @classmethod
    def from_file(cls, path, with_beliefs: bool = False) -> "Dataset":
        header, records = read_ndjson(path)
        return cls(header, records, with_beliefs)

    @property
    def n_agents(self) -> int:
        return len(self.agent_ids)

    def agent_episodes(self, agent_id: str) -> list:
        return self.episodes[agent_id]

    def hidden(self, agent_id: str) -> dict:
        return self.episodes[agent_id][0].hidden
