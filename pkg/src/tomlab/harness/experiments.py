"""Evaluation experiments: posterior curves, species transfer, goal inference,
greedy contrast, Sally-Anne probes, shuffle ablation, and the no-swap control.

Every experiment is a pure function of (checkpoint, config, seed) and writes
CSVs with documented headers via :mod:`tomlab.harness.metrics`.
"""

from __future__ import annotations

import collections
from pathlib import Path

import numpy as np

from .. import agents as ag
from .. import gridworld as gw
from .. import oracle
from ..config import ExperimentConfig
from ..gridworld import BLIND, N_ACTIONS
from ..nn import tensor as T
from ..tomnet import ToMnet
from .batches import Sample, build_batch, draw_samples
from .dataset import Dataset, load_episode, sample_population, world_to_json
from .metrics import compute_djs, spearman_rank_correlation, write_csv


def manifest_id(exp: ExperimentConfig, seed: int) -> str:
    return f"{exp.config_hash()}-s{seed}"


def synthetic_episode(world, actions, timeout, swaps=(), hidden=None, with_beliefs=False):
    record = {
        "world": world_to_json(world),
        "timeout": timeout,
        "actions": [int(a) for a in actions],
        "swaps": [[int(t), list(p)] for t, p in swaps],
        "consumed": None,
        "subgoal_step": None,
        "timed_out": False,
        "hidden": hidden or {"species": "synthetic", "params": {}},
    }
    # recover outcome labels from a replay
    ep = load_episode(record, with_beliefs=False)
    final = ep.states[-1]
    record["consumed"] = final.terminal if (final.terminal is not None and final.terminal >= 0) else None
    if any(s.subgoal_consumed for s in ep.states):
        record["subgoal_step"] = next(
            t for t in range(len(ep.states) - 1)
            if ep.states[t + 1].subgoal_consumed and not ep.states[t].subgoal_consumed)
    record["timed_out"] = final.terminal == gw.TIMEOUT
    return load_episode(record, with_beliefs=with_beliefs)


def trace_episode(trace: ag.EpisodeTrace, hidden=None, with_beliefs=False):
    swaps = [(t, perm) for t, perm in trace.swaps]
    return synthetic_episode(trace.world, trace.actions, trace.timeout, swaps,
                             hidden=hidden, with_beliefs=with_beliefs)


def predict(model: ToMnet, samples, char_window=None, batch_size: int = 32) -> dict:
    """Eval-mode predictions for a list of samples, batched; numpy outputs."""
    outs = collections.defaultdict(list)
    for lo in range(0, len(samples), batch_size):
        chunk = samples[lo:lo + batch_size]
        batch = build_batch(chunk, model.cfg, char_window, include_targets=False)
        out = model.forward(batch, training=False)
        outs["policy"].append(np.exp(out["policy_logp"].data))
        outs["e_char"].append(out["e_char"].data.copy())
        if "consumption_logits" in out:
            outs["consumption"].append(
                1.0 / (1.0 + np.exp(-out["consumption_logits"].data)))
        if "sr_logp" in out:
            outs["sr"].append(np.exp(out["sr_logp"].data))  # (B, cells, G)
        if "belief_logp" in out:
            # (B, cells+1, K) -> (B, K, cells+1)
            outs["belief"].append(np.exp(out["belief_logp"].data).transpose(0, 2, 1))
    return {k: np.concatenate(v, axis=0) for k, v in outs.items()}


# ---------------------------------------------------------------------------
# random-agent experiments (posterior curves, transfer matrix)


def _forced_action_samples(exp, rng, n_contexts, n_past_values):
    """Scenarios where the observed agent repeated one action n_past times."""
    wcfg = exp.world_config()
    timeout = wcfg.timeout
    by_npast = {}
    for n_past in n_past_values:
        samples = []
        actions = []
        for ctx in range(n_contexts):
            a = ctx % N_ACTIONS
            past = []
            for _ in range(n_past):
                world = gw.sample_world(wcfg, rng)
                past.append(synthetic_episode(world, [a], timeout))
            world = gw.sample_world(wcfg, rng)
            current = synthetic_episode(world, [int(rng.integers(N_ACTIONS))], timeout)
            samples.append(Sample(past=past, current=current, split_t=0))
            actions.append(a)
        by_npast[n_past] = (samples, np.array(actions))
    return by_npast


def eval_posterior_curves(model: ToMnet, exp: ExperimentConfig, seed: int, out_dir) -> Path:
    """Mean predicted probability of the repeated action vs the analytic value.

    CSV: n_past, model_prob, oracle_prob, mean_abs_err, stderr, n
    """
    ev = exp["evaluation"]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    pop = exp["population"]
    if pop["species"] == "random":
        components = [(1.0, pop["alpha"])]
    else:
        alphas = pop["alphas"]
        components = [(1.0 / len(alphas), a) for a in alphas]
    scenarios = _forced_action_samples(exp, rng, ev["n_eval_agents"], ev["n_past_grid"])
    rows = []
    for n_past, (samples, actions) in scenarios.items():
        preds = predict(model, samples)
        p_model = preds["policy"][np.arange(len(samples)), actions]
        counts = np.zeros(N_ACTIONS)
        errs = []
        oracle_vals = []
        for i, a in enumerate(actions):
            counts[:] = 0
            counts[a] = n_past
            p_oracle = oracle.mixture_posterior_predictive(counts, components)[a]
            oracle_vals.append(p_oracle)
            errs.append(abs(p_model[i] - p_oracle))
        rows.append([
            n_past, float(np.mean(p_model)), float(np.mean(oracle_vals)),
            float(np.mean(errs)), float(np.std(errs) / np.sqrt(len(errs))), len(errs),
        ])
    return write_csv(
        Path(out_dir) / "posterior_curves.csv", manifest_id(exp, seed),
        ["n_past", "model_prob", "oracle_prob", "mean_abs_err", "stderr", "n"], rows)


def _mixture_expected_kl(components, alpha_test, n_past, mc_samples, rng):
    """MC expected KL(pi || mixture predictive) for n_past on-policy actions."""
    pis = rng.dirichlet([alpha_test] * N_ACTIONS, size=mc_samples)
    pred_for_count = {}
    kls = np.empty(mc_samples)
    for i in range(mc_samples):
        acts = rng.choice(N_ACTIONS, size=n_past, p=pis[i]) if n_past else []
        key = tuple(sorted(acts))
        if key not in pred_for_count:
            counts = np.bincount(acts, minlength=N_ACTIONS) if n_past else np.zeros(N_ACTIONS)
            pred_for_count[key] = oracle.mixture_posterior_predictive(counts, components)
        kls[i] = oracle.kl_divergence(pis[i], pred_for_count[key])
    return oracle.McEstimate(float(kls.mean()), float(kls.std(ddof=1) / np.sqrt(mc_samples)))


def eval_species_transfer(models: dict, exp: ExperimentConfig, alphas: list,
                          seed: int, out_dir, n_past: int = 1) -> Path:
    """Empirical and analytic KL(true policy || predictive) per train/test pair.

    ``models`` maps a train label ("0.01", "3.0", "mixture", ...) to either a
    ToMnet or a list of (weight, alpha) oracle components for the analytic
    rows. CSV: model_label, alpha_test, n_past, model_kl, model_stderr,
    oracle_kl, oracle_stderr, n_agents
    """
    ev = exp["evaluation"]
    wcfg = exp.world_config()
    rows = []
    for label, entry in models.items():
        model, components = entry
        for alpha_test in alphas:
            rng = np.random.default_rng(
                np.random.SeedSequence([seed, 202, int(alpha_test * 1000)]))
            agent_kls = []
            for _ in range(ev["n_eval_agents"]):
                pi = rng.dirichlet([alpha_test] * N_ACTIONS)
                past = []
                for _ in range(n_past):
                    world = gw.sample_world(wcfg, rng)
                    a = int(rng.choice(N_ACTIONS, p=pi))
                    past.append(synthetic_episode(world, [a], wcfg.timeout))
                queries = []
                for _ in range(ev["queries_per_agent"]):
                    world = gw.sample_world(wcfg, rng)
                    current = synthetic_episode(world, [0], wcfg.timeout)
                    queries.append(Sample(past=past, current=current, split_t=0))
                preds = predict(model, queries)["policy"]
                agent_kls.append(np.mean(
                    [oracle.kl_divergence(pi, p) for p in preds]))
            o_rng = np.random.default_rng(
                np.random.SeedSequence([seed, 203, int(alpha_test * 1000)]))
            o = _mixture_expected_kl(components, alpha_test, n_past,
                                     ev["mc_samples"], o_rng)
            rows.append([
                label, alpha_test, n_past,
                float(np.mean(agent_kls)),
                float(np.std(agent_kls) / np.sqrt(len(agent_kls))),
                o.value, o.stderr, len(agent_kls),
            ])
    return write_csv(
        Path(out_dir) / "kl_matrix.csv", manifest_id(exp, seed),
        ["model_label", "alpha_test", "n_past", "model_kl", "model_stderr",
         "oracle_kl", "oracle_stderr", "n_agents"], rows)


# ---------------------------------------------------------------------------
# goal inference


def bfs_distances(world, start) -> np.ndarray:
    """Grid BFS from start, walls blocked; object cells are enterable."""
    dist = np.full((world.height, world.width), -1, dtype=np.int64)
    dist[start] = 0
    queue = collections.deque([start])
    while queue:
        r, c = queue.popleft()
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            cell = (r + dr, c + dc)
            if world.passable(cell) and dist[cell] < 0:
                dist[cell] = dist[r, c] + 1
                queue.append(cell)
    return dist


def _reachable_objects(world, start, budget) -> list:
    dist = bfs_distances(world, start)
    out = []
    for k, cell in enumerate(world.objects):
        d = dist[cell]
        if 0 <= d <= budget:
            out.append((k, int(d)))
    return out


def eval_goal_inference(model: ToMnet, exp: ExperimentConfig, test_ds: Dataset,
                        seed: int, out_dir, n_past_grid=(0, 1, 5, 10)) -> tuple:
    """Consumption accuracy vs Npast, plus the character-embedding dump.

    goal_accuracy.csv: n_past, accuracy, chance_rate, n
    embeddings.csv:    agent_id index withheld; e0, e1, preferred_object, n_past
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 301]))
    char_window = exp["training"]["char_window"]
    timeout = exp["world"]["timeout"]
    acc_rows = []
    emb_rows = []
    for n_past in n_past_grid:
        hits = []
        chances = []
        for aid in test_ds.agent_ids:
            eps = test_ds.agent_episodes(aid)
            if len(eps) < n_past + 1:
                continue
            picks = rng.choice(len(eps), size=n_past + 1, replace=False)
            past = [eps[int(k)] for k in picks[:-1]]
            current = eps[int(picks[-1])]
            if current.consumed is None:
                continue
            sample = Sample(past=past, current=current, split_t=0)
            preds = predict(model, [sample], char_window)
            guess = int(np.argmax(preds["consumption"][0][:4]))
            hits.append(guess == current.consumed)
            reachable = _reachable_objects(current.world, current.world.agent_start,
                                           timeout)
            chances.append(1.0 / max(1, len(reachable)))
            rewards = test_ds.hidden(aid)["params"].get("rewards")
            preferred = int(np.argmax(rewards)) if rewards else -1
            e = preds["e_char"][0]
            emb_rows.append([float(e[0]), float(e[1] if len(e) > 1 else 0.0),
                             preferred, n_past])
        acc_rows.append([n_past, float(np.mean(hits)), float(np.mean(chances)),
                         len(hits)])
    mid = manifest_id(exp, seed)
    acc_path = write_csv(Path(out_dir) / "goal_accuracy.csv", mid,
                         ["n_past", "accuracy", "chance_rate", "n"], acc_rows)
    emb_path = write_csv(Path(out_dir) / "embeddings.csv", mid,
                         ["e0", "e1", "preferred_object", "n_past"], emb_rows)
    return acc_path, emb_path


def eval_greedy_contrast(model: ToMnet, exp: ExperimentConfig, test_ds: Dataset,
                         seed: int, out_dir, n_scenarios: int = 20) -> Path:
    """Fig-style contrast: past long-path vs shortest-path trajectories.

    After observing one full trajectory, the prediction for every possible
    query start cell is scored: long-path pasts should predict the same
    (distant) object everywhere; greedy pasts should predict the nearest
    object. CSV: condition, fraction, n_cells, n_scenarios
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 401]))
    char_window = exp["training"]["char_window"]
    wcfg = exp.world_config()
    long_path = []
    short_path = []
    for aid in test_ds.agent_ids:
        hidden = test_ds.hidden(aid)
        greedy = hidden["params"]["move_cost"] >= ag.GREEDY_MOVE_COST
        for ep in test_ds.agent_episodes(aid):
            if ep.consumed is None:
                continue
            dist = bfs_distances(ep.world, ep.world.agent_start)
            ds_obj = [dist[c] if dist[c] >= 0 else 10 ** 6 for c in ep.world.objects]
            consumed_d = ds_obj[ep.consumed]
            nearest = min(ds_obj)
            if not greedy and consumed_d >= nearest + 4:
                long_path.append(ep)
            elif greedy and consumed_d == nearest:
                short_path.append(ep)
    rng.shuffle(long_path)
    rng.shuffle(short_path)

    def fraction_for(past_ep, want_nearest: bool):
        world = gw.sample_world(wcfg, rng)
        cells = [c for c in ((r, cc) for r in range(world.height)
                             for cc in range(world.width))
                 if world.passable(c) and c not in world.objects]
        samples = []
        for cell in cells:
            w2 = gw.GridWorld(width=world.width, height=world.height,
                              walls=world.walls, wall_segments=world.wall_segments,
                              objects=world.objects, subgoal=None, agent_start=cell)
            samples.append(Sample(past=[past_ep],
                                  current=synthetic_episode(w2, [gw.STAY], wcfg.timeout),
                                  split_t=0))
        preds = predict(model, samples, char_window)["consumption"]
        hits = 0
        for i, cell in enumerate(cells):
            guess = int(np.argmax(preds[i][:4]))
            if want_nearest:
                dist = bfs_distances(world, cell)
                ds_obj = [dist[c] if dist[c] >= 0 else 10 ** 6 for c in world.objects]
                hits += ds_obj[guess] == min(ds_obj)
            else:
                hits += guess == past_ep.consumed
        return hits / len(cells), len(cells)

    rows = []
    for label, pool, want_nearest in (("long_path", long_path, False),
                                      ("short_path", short_path, True)):
        fracs = []
        n_cells = 0
        for ep in pool[:n_scenarios]:
            frac, ncells = fraction_for(ep, want_nearest)
            fracs.append(frac)
            n_cells += ncells
        rows.append([label, float(np.mean(fracs)), n_cells, len(fracs)])
    return write_csv(Path(out_dir) / "greedy_contrast.csv", manifest_id(exp, seed),
                     ["condition", "fraction", "n_cells", "n_scenarios"], rows)


# ---------------------------------------------------------------------------
# Sally-Anne probes


def _sally_anne_geometry(distance: int, rng) -> tuple:
    """A hand-crafted probe world: the agent starts beside its preferred
    object, is forced away to the subgoal, and the swap lands at a chosen
    Chebyshev distance from the final (subgoal) position."""
    r0 = int(rng.integers(3, 8))
    k = int(rng.integers(4))
    mirror = bool(rng.integers(2))

    def col(c):
        return 10 - c if mirror else c

    obj = (r0, col(1))
    start = (r0, col(2))
    if distance == 1:
        subgoal = (r0 - 1, col(1))
        forced = [gw.UP, gw.LEFT if not mirror else gw.RIGHT]
    else:
        subgoal = (r0, col(1 + distance))
        forced = [gw.RIGHT if not mirror else gw.LEFT] * (distance - 1)
    corners = [(0, col(10)), (10, col(10)), (10, col(0))]
    objects = [None] * 4
    objects[k] = obj
    rest = [i for i in range(4) if i != k]
    for i, cell in zip(rest, corners):
        objects[i] = cell
    world = gw.GridWorld(width=11, height=11, walls=frozenset(), wall_segments=(),
                         objects=tuple(objects), subgoal=subgoal, agent_start=start)
    # swap the preferred object with the far corner opposite the corridor
    far = rest[1]  # (10, col(10)): at least 8 away from any subgoal position
    perm = list(range(4))
    perm[k], perm[far] = far, k
    return world, k, forced, tuple(perm)


def _forced_branch(spec, world, forced, timeout):
    """Run the forced prefix; returns the runner and the pre-branch state."""
    runner = ag.AgentRunner(spec, world, timeout)
    ws = gw.initial_state(world, timeout)
    rng = np.random.default_rng(0)  # forced actions; env draws unused
    for a in forced:
        runner.policy(ws)
        ws_before = ws
        ws, out = gw.step(ws, a, 0.0, rng)
        runner.observe_outcome(out, ws_before, a)
    if not ws.subgoal_consumed:
        raise RuntimeError("forced path failed to consume the subgoal")
    return runner, ws


def _agent_past(spec, wcfg, n_past, rng, with_beliefs=False):
    hidden = {"species": spec.kind, "params": {"fov": spec.species.fov,
                                               "preferred_object": spec.species.preferred_object,
                                               "subgoal_first": True}}
    eps = []
    for _ in range(n_past):
        world = gw.sample_world(wcfg, rng)
        trace = ag.rollout(spec, world, wcfg.timeout, rng, swap_prob=wcfg.swap_prob)
        eps.append(trace_episode(trace, hidden=hidden, with_beliefs=with_beliefs))
    return eps


def eval_sally_anne(model: ToMnet, exp: ExperimentConfig, seed: int, out_dir,
                    distances=range(1, 9), scenarios_per_distance: int = 8) -> Path:
    """Relative reduction of the return action's probability vs swap distance.

    CSV: swap_distance, true_delta_pi, pred_delta_pi, n
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 501]))
    wcfg = exp.world_config()
    char_window = exp["training"]["char_window"]
    fov = 5
    rows = []
    for distance in distances:
        true_deltas = []
        samples = []
        for _ in range(scenarios_per_distance):
            world, k, forced, perm = _sally_anne_geometry(distance, rng)
            spec = ag.AgentSpec("probe", ag.BeliefPlanner(fov=fov, preferred_object=k))
            runner, ws = _forced_branch(spec, world, forced, wcfg.timeout)
            fork = runner.fork()
            probs_ns = runner.policy(ws)
            probs_sw = fork.policy(gw.apply_swap(ws, perm))
            a_ret = int(np.argmax(probs_ns))
            true_deltas.append(
                (probs_ns[a_ret] - probs_sw[a_ret]) / probs_ns[a_ret] * 100.0)
            past = _agent_past(spec, wcfg, 4, rng)
            t_split = len(forced)
            ep_ns = synthetic_episode(world, forced, wcfg.timeout, swaps=())
            ep_sw = synthetic_episode(world, forced, wcfg.timeout,
                                      swaps=[(len(forced) - 1, perm)])
            samples.append((Sample(past, ep_ns, t_split),
                            Sample(past, ep_sw, t_split), a_ret))
        flat = [s for pair in samples for s in pair[:2]]
        preds = predict(model, flat, char_window)["policy"]
        pred_deltas = []
        for i, (_, _, a_ret) in enumerate(samples):
            p_ns, p_sw = preds[2 * i][a_ret], preds[2 * i + 1][a_ret]
            pred_deltas.append((p_ns - p_sw) / max(p_ns, 1e-9) * 100.0)
        rows.append([distance, float(np.mean(true_deltas)),
                     float(np.mean(pred_deltas)), len(pred_deltas)])
    return write_csv(Path(out_dir) / "sally_anne.csv", manifest_id(exp, seed),
                     ["swap_distance", "true_delta_pi", "pred_delta_pi", "n"], rows)


# ---------------------------------------------------------------------------
# natural Sally-Anne (counterfactual pairs from the task distribution)


def _branch_sr(runner, ws, gammas, n_rollouts, timeout, rng):
    """Ground-truth normalized SRs: discounted occupancy over stochastic
    rollouts from ws onward (the state itself counts at discount 1)."""
    n = ws.world.n_cells
    sums = np.zeros((len(gammas), n))
    for _ in range(n_rollouts):
        fork = runner.fork()
        state = ws
        positions = [state.world.flat(state.agent_pos)]
        while not state.terminated:
            probs = fork.policy(state)
            a = int(rng.choice(N_ACTIONS, p=probs))
            ws_before = state
            state, out = gw.step(state, a, 0.0, rng)
            fork.observe_outcome(out, ws_before, a)
            positions.append(state.world.flat(state.agent_pos))
        for gi, gamma in enumerate(gammas):
            disc = gamma ** np.arange(len(positions))
            np.add.at(sums[gi], positions, disc)
    return sums / sums.sum(axis=1, keepdims=True)


def collect_counterfactual_pairs(exp: ExperimentConfig, seed: int,
                                 n_pairs_per_fov: int, sr_gammas,
                                 sr_rollouts: int, agents_per_fov: int = 8):
    """Roll task-distribution episodes to subgoal consumption and branch."""
    wcfg = exp.world_config()
    fovs = [None if f in (None, "blind") else int(f)
            for f in exp["population"]["fovs"]]
    pairs = []
    for fov in fovs:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 602, fov or 0]))
        n_found = 0
        attempts = 0
        agents = [ag.AgentSpec(f"eval-{fov}-{i}",
                               ag.sample_belief_planner(rng, fov))
                  for i in range(agents_per_fov)]
        pasts = {a.id: _agent_past(a, wcfg, 4, rng) for a in agents}
        while n_found < n_pairs_per_fov and attempts < n_pairs_per_fov * 30:
            attempts += 1
            spec = agents[attempts % len(agents)]
            world = gw.sample_world(wcfg, rng)
            runner = ag.AgentRunner(spec, world, wcfg.timeout)
            ws = gw.initial_state(world, wcfg.timeout)
            actions = []
            seen_preferred = False
            pref_cell = world.objects[spec.species.preferred_object]
            t_sg = None
            while not ws.terminated:
                vis = gw.visibility_mask(ws, spec.species.fov)
                if vis[pref_cell]:
                    seen_preferred = True
                probs = runner.policy(ws)
                a = int(rng.choice(N_ACTIONS, p=probs))
                ws_before = ws
                ws, out = gw.step(ws, a, 0.0, rng)  # swaps injected manually below
                runner.observe_outcome(out, ws_before, a)
                actions.append(a)
                if out.consumed_subgoal:
                    t_sg = len(actions) - 1
                    break
            if t_sg is None or not seen_preferred or ws.terminated:
                continue
            perm = tuple(int(x) for x in rng.permutation(4))
            while all(perm[i] == i for i in range(4)):
                perm = tuple(int(x) for x in rng.permutation(4))
            moved_cells = [ws.object_pos[i] for i in range(4) if perm[i] != i]
            dist = min(max(abs(ws.agent_pos[0] - c[0]), abs(ws.agent_pos[1] - c[1]))
                       for c in moved_cells)
            ws_sw = gw.apply_swap(ws, perm)
            fork_ns, fork_sw = runner.fork(), runner.fork()
            probs_ns = fork_ns.policy(ws)
            probs_sw = fork_sw.policy(ws_sw)
            true_policy_djs = compute_djs(probs_ns, probs_sw)
            bel_ns, bel_sw = fork_ns.state.belief, fork_sw.state.belief
            true_belief_djs = float(np.mean(
                [compute_djs(bel_ns[k], bel_sw[k]) for k in range(4)]))
            sr_rng = np.random.default_rng(np.random.SeedSequence(
                [seed, 603, fov or 0, n_found]))
            sr_ns = _branch_sr(fork_ns, ws, sr_gammas, sr_rollouts, wcfg.timeout, sr_rng)
            sr_rng = np.random.default_rng(np.random.SeedSequence(
                [seed, 604, fov or 0, n_found]))
            sr_sw = _branch_sr(fork_sw, ws_sw, sr_gammas, sr_rollouts, wcfg.timeout, sr_rng)
            true_sr_djs = [compute_djs(sr_ns[g], sr_sw[g]) for g in range(len(sr_gammas))]
            hidden = {"species": spec.kind,
                      "params": {"fov": spec.species.fov,
                                 "preferred_object": spec.species.preferred_object,
                                 "subgoal_first": True}}
            ep_ns = synthetic_episode(world, actions, wcfg.timeout, swaps=(),
                                      hidden=hidden)
            ep_sw = synthetic_episode(world, actions, wcfg.timeout,
                                      swaps=[(t_sg, perm)], hidden=hidden)
            pairs.append({
                "fov": "blind" if fov is None else fov,
                "distance": int(dist),
                "sample_ns": Sample(pasts[spec.id], ep_ns, t_sg + 1),
                "sample_sw": Sample(pasts[spec.id], ep_sw, t_sg + 1),
                "true_policy_djs": true_policy_djs,
                "true_belief_djs": true_belief_djs,
                "true_sr_djs": true_sr_djs,
            })
            n_found += 1
    return pairs


def eval_natural_sally_anne(models: dict, exp: ExperimentConfig, seed: int,
                            out_dir, pairs=None,
                            filename: str = "djs_curves.csv") -> Path:
    """D_JS between swap/no-swap branches, bucketed by swap distance.

    ``models`` maps a label to a ToMnet; all models are evaluated on the same
    frozen pair set (this is how the no-swap training control is compared).
    CSV: model_label, fov, quantity, swap_distance, true_djs, pred_djs, n
    """
    ev = exp["evaluation"]
    sr_gammas = None
    for model in models.values():
        gam = tuple(model.cfg.sr_gammas)
        sr_gammas = gam if sr_gammas is None else sr_gammas
        if gam != sr_gammas:
            raise ValueError("models disagree on SR discount factors")
    if pairs is None:
        pairs = collect_counterfactual_pairs(
            exp, seed, ev["n_counterfactual_pairs"], sr_gammas, ev["sr_rollouts"])
    char_window = exp["training"]["char_window"]
    rows = []
    for label, model in models.items():
        flat = []
        for pair in pairs:
            flat.extend([pair["sample_ns"], pair["sample_sw"]])
        preds = predict(model, flat, char_window)
        buckets = collections.defaultdict(list)
        for i, pair in enumerate(pairs):
            ns, sw = 2 * i, 2 * i + 1
            key = (pair["fov"], pair["distance"])
            entry = {"policy": (compute_djs(preds["policy"][ns], preds["policy"][sw]),
                                pair["true_policy_djs"])}
            if "sr" in preds:
                for g, gamma in enumerate(sr_gammas):
                    entry[f"sr_{gamma:g}"] = (
                        compute_djs(preds["sr"][ns][:, g], preds["sr"][sw][:, g]),
                        pair["true_sr_djs"][g])
            if "belief" in preds:
                pred_b = float(np.mean([
                    compute_djs(preds["belief"][ns][k], preds["belief"][sw][k])
                    for k in range(4)]))
                entry["belief"] = (pred_b, pair["true_belief_djs"])
            buckets[key].append(entry)
        for (fov, distance), entries in sorted(buckets.items(), key=str):
            for quantity in entries[0]:
                preds_q = [e[quantity][0] for e in entries]
                trues_q = [e[quantity][1] for e in entries]
                rows.append([label, fov, quantity, distance,
                             float(np.mean(trues_q)), float(np.mean(preds_q)),
                             len(entries)])
    return write_csv(Path(out_dir) / filename, manifest_id(exp, seed),
                     ["model_label", "fov", "quantity", "swap_distance",
                      "true_djs", "pred_djs", "n"], rows)


def no_swap_control_summary(csv_path, label_a: str, label_b: str) -> float:
    """Spearman rank correlation between two models' policy-D_JS curves."""
    from .metrics import read_csv

    header, rows = read_csv(csv_path)
    idx = {name: i for i, name in enumerate(header)}
    curves = collections.defaultdict(dict)
    for row in rows:
        if row[idx["quantity"]] != "policy":
            continue
        curves[row[idx["model_label"]]][int(row[idx["swap_distance"]])] = float(
            row[idx["pred_djs"]])
    shared = sorted(set(curves[label_a]) & set(curves[label_b]))
    a = [curves[label_a][d] for d in shared]
    b = [curves[label_b][d] for d in shared]
    return spearman_rank_correlation(a, b)


# ---------------------------------------------------------------------------
# shuffle ablation


def _forward_shuffled(model: ToMnet, batch: dict, perm_char, perm_mental):
    """Eval forward with embeddings permuted across the minibatch."""
    cfg = model.cfg
    e_char, _ = model.character_embed(batch, training=False)
    if perm_char is not None:
        e_char = T.gather_rows(e_char, perm_char)
    parts = [T.Tensor(batch["query"]) if isinstance(batch["query"], np.ndarray)
             else batch["query"],
             T.spatial_tile(e_char, cfg.grid, cfg.grid)]
    if cfg.mental:
        e_mental, _ = model.mental_embed(batch, training=False)
        if perm_mental is not None:
            e_mental = T.gather_rows(e_mental, perm_mental)
        parts.append(e_mental)
    torso_in = T.concat(parts, axis=-1)
    return model.prediction_net(torso_in, training=False)


def eval_shuffle_ablation(model: ToMnet, exp: ExperimentConfig,
                          train_ds: Dataset, test_ds: Dataset, seed: int,
                          out_dir, n_batches: int = 16) -> Path:
    """Losses with e_char / e_mental shuffled within each minibatch.

    CSV: population, condition, loss_action, loss_consumption, loss_sr,
    loss_belief, n_batches
    """
    cfg = model.cfg
    npast = exp.npast_rule()
    char_window = exp["training"]["char_window"]
    batch_size = exp["training"]["batch_size"]
    conditions = ["intact", "shuffle_char", "shuffle_mental", "shuffle_both"]
    rows = []
    for pop_label, ds in (("train", train_ds), ("heldout", test_ds)):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 701]))
        sums = {c: collections.defaultdict(float) for c in conditions}
        for _ in range(n_batches):
            samples = draw_samples(ds, cfg, rng, batch_size, npast, "uniform")
            batch = build_batch(samples, cfg, char_window)
            perm = rng.permutation(batch_size)
            while (perm == np.arange(batch_size)).all():
                perm = rng.permutation(batch_size)
            for cond in conditions:
                pc = perm if cond in ("shuffle_char", "shuffle_both") else None
                pm = perm if cond in ("shuffle_mental", "shuffle_both") else None
                out = _forward_shuffled(model, batch, pc, pm)
                _, comps = model.loss(out, batch, beta=0.0)
                for key, val in comps.items():
                    sums[cond][key] += val / n_batches
        for cond in conditions:
            rows.append([
                pop_label, cond,
                sums[cond].get("action", float("nan")),
                sums[cond].get("consumption", float("nan")),
                sums[cond].get("sr", float("nan")),
                sums[cond].get("belief", float("nan")),
                n_batches,
            ])
    return write_csv(Path(out_dir) / "shuffle_ablation.csv", manifest_id(exp, seed),
                     ["population", "condition", "loss_action", "loss_consumption",
                      "loss_sr", "loss_belief", "n_batches"], rows)


# ---------------------------------------------------------------------------
# embedding dump (the `embed` CLI surface)


def dump_embeddings(model: ToMnet, exp: ExperimentConfig, test_ds: Dataset,
                    seed: int, out_dir, n_past_grid=(0, 1, 5, 10)) -> Path:
    """Character embeddings of held-out agents with species-apt labels.

    CSV: n_past, label, e0, e1, ... (agent identity withheld)
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 801]))
    char_window = exp["training"]["char_window"]
    dims = model.cfg.e_char_dim
    rows = []
    for n_past in n_past_grid:
        for aid in test_ds.agent_ids:
            eps = test_ds.agent_episodes(aid)
            if len(eps) < n_past + 1:
                continue
            picks = rng.choice(len(eps), size=n_past + 1, replace=False)
            past = [eps[int(k)] for k in picks[:-1]]
            sample = Sample(past, eps[int(picks[-1])], 0)
            e = predict(model, [sample], char_window)["e_char"][0]
            hidden = test_ds.hidden(aid)
            params = hidden["params"]
            if "rewards" in params:
                label = f"prefers-{int(np.argmax(params['rewards']))}"
            elif "preferred_object" in params:
                fov = params.get("fov")
                label = f"fov-{fov}-prefers-{params['preferred_object']}"
            elif "probs" in params:
                label = f"modal-action-{int(np.argmax(params['probs']))}"
            else:
                label = hidden["species"]
            rows.append([n_past, label] + [float(x) for x in e[:dims]])
    return write_csv(Path(out_dir) / "embeddings.csv", manifest_id(exp, seed),
                     ["n_past", "label"] + [f"e{i}" for i in range(dims)], rows)
