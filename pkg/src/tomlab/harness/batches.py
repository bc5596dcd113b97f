"""Assembly of model batches from loaded episodes.

Packing contract (consumed by the model's recurrent loops): step tensors are
stacked flat, grouped contiguously per sequence in time order, and addressed
by ``time_index`` -- a list over t of (packed row indices active at t, owner
indices, both ascending). Owners' active sets shrink with t because
sequences are contiguous prefixes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..gridworld import N_ACTIONS
from ..nn import tensor as T
from ..tomnet import ToMnetConfig, empirical_sr, spatialise_concat
from .dataset import LoadedEpisode


@dataclass
class Sample:
    """One training/eval example: past episodes, current episode, split time."""

    past: list  # list[LoadedEpisode]
    current: LoadedEpisode
    split_t: int


def _onehot_actions(actions: np.ndarray) -> np.ndarray:
    out = np.zeros((len(actions), N_ACTIONS), dtype=np.float64)
    out[np.arange(len(actions)), actions] = 1.0
    return out


def _episode_steps(ep: LoadedEpisode, t_lo: int, t_hi: int) -> np.ndarray:
    """Observer tensors with spatialised actions for steps t_lo..t_hi-1."""
    obs = ep.observer[t_lo:t_hi].astype(np.float64)
    acts = _onehot_actions(ep.actions[t_lo:t_hi])
    return spatialise_concat(obs, acts)


def _pack_sequences(chunks: list, owners_of_chunk: list):
    """Stack per-sequence step blocks and build the time index."""
    lengths = np.array([c.shape[0] for c in chunks], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(lengths)])[:-1]
    steps = np.concatenate(chunks, axis=0) if chunks else None
    time_index = []
    if len(lengths):
        for t in range(int(lengths.max())):
            active = np.flatnonzero(lengths > t)
            rows = offsets[active] + t
            owners = np.asarray([owners_of_chunk[i] for i in active], dtype=np.int64)
            time_index.append((rows, owners))
    return steps, time_index


def build_batch(samples: list, cfg: ToMnetConfig, char_window: Optional[int] = None,
                include_targets: bool = True) -> dict:
    """Pack a list of samples into the model's batch dict.

    ``char_window`` truncates each past episode to its last k steps before
    character encoding (a compute knob; None keeps full trajectories).
    ``include_targets=False`` builds inputs only (prediction-side evals).
    """
    b = len(samples)
    dt = T.default_dtype()
    n_cells = cfg.grid * cfg.grid

    query = np.stack([s.current.observer[s.split_t] for s in samples]).astype(dt)

    # --- character inputs
    char_chunks: list = []
    owners: list = []
    ep_owner_sample: list = []
    for i, s in enumerate(samples):
        for ep in s.past:
            lo = 0
            if cfg.char_arch in ("episodic", "snapshot"):
                lo, hi = 0, 1  # single observation/action pair per episode
            elif char_window is not None:
                lo, hi = max(0, ep.length - char_window), ep.length
            else:
                lo, hi = 0, ep.length
            char_chunks.append(_episode_steps(ep, lo, hi))
            owners.append(len(ep_owner_sample))
            ep_owner_sample.append(i)
    char_steps, char_time_index = _pack_sequences(char_chunks, owners)
    segment = np.zeros((b, len(ep_owner_sample)), dtype=dt)
    for e, i in enumerate(ep_owner_sample):
        segment[i, e] = 1.0

    batch = {
        "n_samples": b,
        "query": query,
        "char_steps": None if char_steps is None else char_steps.astype(dt),
        "char_time_index": char_time_index,
        "char_owners": np.asarray(ep_owner_sample, dtype=np.int64),
        "char_segment": segment,
        "mental_steps": None,
        "mental_time_index": [],
        "mental_nonempty": np.zeros(b, dtype=dt),
    }

    # --- mental inputs (current-episode prefix up to the split)
    if cfg.mental:
        chunks = []
        owners = []
        nonempty = np.zeros(b, dtype=dt)
        for i, s in enumerate(samples):
            if s.split_t > 0:
                chunks.append(_episode_steps(s.current, 0, s.split_t))
                owners.append(i)
                nonempty[i] = 1.0
        mental_steps, mental_time_index = _pack_sequences(chunks, owners)
        batch["mental_steps"] = None if mental_steps is None else mental_steps.astype(dt)
        batch["mental_time_index"] = mental_time_index
        batch["mental_nonempty"] = nonempty

    # --- targets
    if not include_targets:
        return batch
    batch["action"] = np.array([s.current.actions[s.split_t] for s in samples],
                               dtype=np.int64)
    if cfg.consumption_dim:
        cons = np.zeros((b, cfg.consumption_dim), dtype=dt)
        for i, s in enumerate(samples):
            if s.current.consumed is not None:
                cons[i, s.current.consumed] = 1.0
            if cfg.consumption_dim > 4 and s.current.subgoal_step is not None:
                cons[i, 4] = 1.0
        batch["consumption"] = cons
    if cfg.sr_gammas:
        sr = np.zeros((b, n_cells, len(cfg.sr_gammas)), dtype=dt)
        for i, s in enumerate(samples):
            tail = s.current.positions_flat[s.split_t:]
            for gi, gamma in enumerate(cfg.sr_gammas):
                sr[i, :, gi] = empirical_sr(tail, gamma, n_cells)
        batch["sr"] = sr
    if cfg.belief_objects:
        bel = np.zeros((b, n_cells + 1, cfg.belief_objects), dtype=dt)
        for i, s in enumerate(samples):
            if s.current.beliefs is None:
                raise ValueError("belief targets need a dataset loaded with beliefs")
            bel[i] = s.current.beliefs[s.split_t].T
        batch["belief"] = bel
    return batch


def draw_samples(
    dataset,
    cfg: ToMnetConfig,
    rng: np.random.Generator,
    batch_size: int,
    npast_rule: dict,
    split_rule: str,
    agent_ids: Optional[list] = None,
) -> list:
    """Sample (agent, past episodes, current episode, split) tuples."""
    ids = agent_ids if agent_ids is not None else dataset.agent_ids
    samples = []
    for _ in range(batch_size):
        aid = ids[int(rng.integers(len(ids)))]
        eps = dataset.agent_episodes(aid)
        if npast_rule["kind"] == "uniform":
            npast = int(rng.integers(0, npast_rule["max"] + 1))
        elif npast_rule["kind"] == "fixed":
            npast = npast_rule["n"]
        else:
            raise ValueError(f"unknown npast rule {npast_rule}")
        picks = rng.choice(len(eps), size=npast + 1, replace=False)
        past = [eps[int(k)] for k in picks[:-1]]
        current = eps[int(picks[-1])]
        if split_rule == "uniform":
            split_t = int(rng.integers(0, current.length))
        elif split_rule == "zero":
            split_t = 0
        else:
            raise ValueError(f"unknown split rule {split_rule!r}")
        samples.append(Sample(past=past, current=current, split_t=split_t))
    return samples
