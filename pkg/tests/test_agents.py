import numpy as np
import pytest

from tomlab import agents as ag
from tomlab import gridworld as gw
from tomlab import oracle
from tomlab.gridworld import BLIND, DOWN, LEFT, RIGHT, STAY, UP


def open_world(w=11, h=11, agent=(5, 5), objects=((0, 0), (0, 10), (10, 0), (10, 10)),
               subgoal=None, walls=()):
    return gw.GridWorld(
        width=w, height=h, walls=frozenset(walls), wall_segments=(),
        objects=tuple(objects), subgoal=subgoal, agent_start=agent,
    )


class TestRandomAgents:
    def test_policy_on_simplex(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            sp = ag.sample_random_agent(0.5, rng)
            probs = np.array(sp.probs)
            assert abs(probs.sum() - 1.0) < 1e-9
            assert (probs >= 0).all()

    def test_sharp_species_is_near_deterministic(self):
        rng = np.random.default_rng(1)
        maxes = [max(ag.sample_random_agent(0.01, rng).probs) for _ in range(1000)]
        assert np.median(maxes) > 0.95

    def test_flat_species_is_symmetric(self):
        rng = np.random.default_rng(2)
        draws = np.array([ag.sample_random_agent(3.0, rng).probs for _ in range(1000)])
        assert np.allclose(draws.mean(axis=0), 0.2, atol=0.02)

    def test_alpha_must_be_positive(self):
        with pytest.raises(gw.ContractViolation):
            ag.sample_random_agent(0.0, np.random.default_rng(0))

    def test_empirical_frequencies_converge_chi_square(self):
        rng = np.random.default_rng(3)
        spec = ag.AgentSpec("r0", ag.sample_random_agent(3.0, rng))
        probs = np.array(spec.species.probs)
        n = 10_000
        counts = np.bincount(rng.choice(5, size=n, p=probs), minlength=5)
        chi2 = ((counts - n * probs) ** 2 / (n * probs)).sum()
        assert chi2 < 25  # 4 dof; this is far beyond the 99.99th percentile


class TestValueIteration:
    def test_adjacent_object_taken_with_probability_one(self):
        world = open_world(w=7, h=7, agent=(5, 2),
                           objects=((5, 3), (0, 0), (0, 6), (6, 0)))
        plan = ag.plan_value_iteration(world, [1.0, 0.0, 0.0, 0.0], horizon=12)
        probs = plan.action_probs(world.flat((5, 2)), 12)
        assert probs[RIGHT] == 1.0

    def test_three_step_corridor_value(self):
        world = open_world(w=7, h=7, agent=(5, 2),
                           objects=((5, 5), (0, 0), (0, 6), (6, 0)))
        plan = ag.plan_value_iteration(world, [1.0, 0.0, 0.0, 0.0], horizon=12)
        assert plan.values[12][world.flat((5, 2))] == pytest.approx(0.97, abs=1e-12)

    def test_greedy_prefers_near_object(self):
        # rewards 0.9 at distance 2 vs 1.0 at distance 6 with move cost 0.5:
        # 0.9 - 1.0 beats 1.0 - 3.0.
        world = open_world(w=9, h=9, agent=(4, 2),
                           objects=((4, 0), (4, 8), (0, 0), (8, 0)))
        plan = ag.plan_value_iteration(world, [0.9, 1.0, 0.0, 0.0],
                                       move_cost=0.5, horizon=12)
        probs = plan.action_probs(world.flat((4, 2)), 12)
        assert probs[LEFT] == 1.0
        assert plan.values[12][world.flat((4, 2))] == pytest.approx(-0.1, abs=1e-12)

    def test_patient_planner_prefers_far_rich_object(self):
        world = open_world(w=9, h=9, agent=(4, 2),
                           objects=((4, 0), (4, 8), (0, 0), (8, 0)))
        plan = ag.plan_value_iteration(world, [0.9, 1.0, 0.0, 0.0],
                                       move_cost=0.01, horizon=12)
        probs = plan.action_probs(world.flat((4, 2)), 12)
        assert probs[RIGHT] == 1.0

    def test_vi_matches_exhaustive_search_exactly(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            cfg = gw.WorldConfig(width=7, height=7, wall_range=(0, 3), timeout=12)
            world = gw.sample_world(cfg, rng)
            reward = rng.dirichlet([0.5] * 4)
            horizon = int(rng.integers(3, 13))
            plan = ag.plan_value_iteration(world, reward, horizon=horizon)
            vi_value = plan.values[horizon][world.flat(world.agent_start)]
            brute = oracle.exhaustive_best_return(world, reward, 0.01, 0.05, horizon)
            assert vi_value == brute  # bit-exact: same backward recurrence

    def test_rollout_return_equals_planned_value(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            cfg = gw.WorldConfig(width=7, height=7, wall_range=(0, 3), timeout=10)
            world = gw.sample_world(cfg, rng)
            reward = rng.dirichlet([0.5] * 4)
            spec = ag.AgentSpec("p", ag.Planner(rewards=tuple(float(r) for r in reward)))
            trace = ag.rollout(spec, world, 10, rng)
            realized = -0.01 * trace.length
            for t, a in enumerate(trace.actions):
                if trace.positions[t + 1] == trace.positions[t] and a != STAY:
                    dr, dc = gw.ACTION_DELTAS[a]
                    tgt = (trace.positions[t][0] + dr, trace.positions[t][1] + dc)
                    if not world.passable(tgt):
                        realized -= 0.05
            if trace.consumed_object is not None:
                realized += reward[trace.consumed_object]
            plan = ag.plan_value_iteration(world, reward, horizon=10)
            assert realized == pytest.approx(plan.values[10][world.flat(world.agent_start)], abs=1e-9)


class TestScripted:
    def test_blind_goes_straight_in_open_row(self):
        spec = ag.AgentSpec("b", ag.Blind(initial_heading=RIGHT, turn_clockwise=True))
        world = open_world(agent=(5, 5), objects=((0, 0), (0, 1), (1, 0), (1, 1)))
        rng = np.random.default_rng(0)
        trace = ag.rollout(spec, world, 8, rng)
        assert trace.positions[:6] == [(5, 5), (5, 6), (5, 7), (5, 8), (5, 9), (5, 10)]

    def test_blind_turns_after_collision(self):
        spec = ag.AgentSpec("b", ag.Blind(initial_heading=RIGHT, turn_clockwise=True))
        world = open_world(agent=(5, 9), objects=((0, 0), (0, 1), (1, 0), (1, 1)))
        trace = ag.rollout(spec, world, 5, np.random.default_rng(0))
        # reaches (5,10), collides with the boundary, then turns clockwise to DOWN
        assert trace.actions[0] == RIGHT
        assert trace.actions[1] == RIGHT  # the colliding attempt
        assert trace.positions[2] == (5, 10)
        assert trace.actions[2] == DOWN
        assert trace.positions[3] == (6, 10)

    def test_act_scripted_rejects_other_species(self):
        state = ag.AgentState()
        obs = np.zeros((11, 11, 9), dtype=np.uint8)
        with pytest.raises(gw.ContractViolation):
            ag.act_scripted(ag.RandomPolicy(probs=(0.2,) * 5), state, obs)

    def clockwise_ring(self):
        # hand-simulated right-hand trace in an empty 7x7 room from (0,2)
        # heading UP: attach at the top wall, then trace the boundary
        # clockwise back to the start. 24 perimeter steps.
        ring = [(0, 3), (0, 4), (0, 5), (0, 6)]
        ring += [(1, 6), (2, 6), (3, 6), (4, 6), (5, 6), (6, 6)]
        ring += [(6, 5), (6, 4), (6, 3), (6, 2), (6, 1), (6, 0)]
        ring += [(5, 0), (4, 0), (3, 0), (2, 0), (1, 0), (0, 0)]
        ring += [(0, 1), (0, 2)]
        return ring

    def test_right_hand_follower_traces_boundary_clockwise(self):
        spec = ag.AgentSpec("w", ag.WallFollower(hand="right", initial_heading=UP))
        world = open_world(w=7, h=7, agent=(0, 2),
                           objects=((2, 2), (2, 4), (4, 2), (4, 4)))
        trace = ag.rollout(spec, world, 24, np.random.default_rng(0))
        assert trace.positions[1:] == self.clockwise_ring()

    def test_left_hand_follower_goes_the_other_way(self):
        spec = ag.AgentSpec("w", ag.WallFollower(hand="left", initial_heading=UP))
        world = open_world(w=7, h=7, agent=(0, 2),
                           objects=((2, 2), (2, 4), (4, 2), (4, 4)))
        trace = ag.rollout(spec, world, 6, np.random.default_rng(0))
        assert trace.positions[1] == (0, 1)  # attaches and heads west
        assert trace.positions[2] == (0, 0)
        assert trace.positions[3] == (1, 0)  # down the west wall: counterclockwise

    def test_follower_consumes_adjacent_visible_object(self):
        spec = ag.AgentSpec("w", ag.WallFollower(hand="right", initial_heading=RIGHT))
        world = open_world(w=7, h=7, agent=(3, 1),
                           objects=((3, 2), (0, 0), (0, 6), (6, 6)))
        trace = ag.rollout(spec, world, 10, np.random.default_rng(0))
        assert trace.consumed_object == 0
        assert trace.length == 1


class TestBeliefFilter:
    def run_filter(self, world, fov, positions):
        """Apply the agent filter along a forced position sequence."""
        state = ag.AgentState(belief=ag.initial_belief(world.n_cells),
                              known_walls=np.full((world.height, world.width), -1, np.int8))
        ws = gw.initial_state(world, timeout=99)
        viss = []
        for pos in positions:
            ws = gw.WorldState(world=world, agent_pos=pos, object_pos=ws.object_pos,
                               subgoal_pos=ws.subgoal_pos, subgoal_consumed=False,
                               step_count=0, timeout=99)
            obs = gw.render_partial(ws, fov)
            state = ag.update_belief(state, obs)
            viss.append(gw.visibility_mask(ws, fov))
        return state, viss

    def test_full_view_collapses_to_point_mass(self):
        world = open_world()
        state, _ = self.run_filter(world, 11, [(5, 5)])
        for k in range(4):
            flat = world.flat(world.objects[k])
            assert state.belief[k, flat] == 1.0

    def test_blind_belief_stays_prior(self):
        world = open_world()
        state, _ = self.run_filter(world, BLIND, [(5, 5), (5, 6), (5, 7)])
        assert np.allclose(state.belief[:, :121], 1 / 121)

    def test_rows_always_normalized(self):
        rng = np.random.default_rng(5)
        world = gw.sample_world(gw.WorldConfig(wall_range=(0, 4)), rng)
        positions = [(int(rng.integers(11)), int(rng.integers(11))) for _ in range(12)]
        state, _ = self.run_filter(world, 5, positions)
        assert np.allclose(state.belief.sum(axis=1), 1.0, atol=1e-9)

    def test_matches_enumeration_oracle_exactly(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            cfg = gw.WorldConfig(width=5, height=5, wall_range=(0, 2), timeout=9)
            world = gw.sample_world(cfg, rng)
            n_steps = int(rng.integers(1, 6))
            positions = [(int(rng.integers(5)), int(rng.integers(5))) for _ in range(n_steps)]
            state, viss = self.run_filter(world, 3, positions)
            post = oracle.exact_belief_filter(world, viss, [0, 1])
            for row, k in enumerate([0, 1]):
                assert np.allclose(state.belief[k], post[row], atol=1e-12), (
                    world, positions)

    def test_unseen_swap_leaves_belief_unchanged(self):
        # counterfactual branches: with all four objects outside the window,
        # the swap and no-swap observations coincide, so the filtered beliefs
        # must be identical.
        world = open_world(agent=(5, 4), subgoal=(5, 5),
                           objects=((0, 0), (0, 10), (10, 0), (10, 10)))
        spec = ag.AgentSpec("bp", ag.BeliefPlanner(fov=5, preferred_object=0))
        runner = ag.AgentRunner(spec, world, 51)
        ws = gw.initial_state(world, 51)
        runner.policy(ws)
        ws_before = ws
        ws, out = gw.step(ws, RIGHT, 0.0, np.random.default_rng(0))
        runner.observe_outcome(out, ws_before, RIGHT)
        assert out.consumed_subgoal
        fork = runner.fork()
        runner.policy(ws)  # no-swap branch
        fork.policy(gw.apply_swap(ws, (1, 0, 3, 2)))  # swap branch
        assert np.allclose(runner.state.belief, fork.state.belief, atol=1e-15)


class TestBeliefPlanner:
    def test_moves_to_adjacent_preferred_object_after_subgoal(self):
        world = open_world(agent=(5, 5), objects=((5, 6), (0, 0), (0, 10), (10, 0)),
                           subgoal=(5, 4))
        spec = ag.AgentSpec("bp", ag.BeliefPlanner(fov=5, preferred_object=0))
        runner = ag.AgentRunner(spec, world, 51)
        runner.state.subgoal_done = True
        ws = gw.initial_state(world, 51)
        probs = runner.policy(ws)
        assert probs[RIGHT] == 1.0

    def test_seeks_subgoal_first_when_visible(self):
        world = open_world(agent=(5, 5), objects=((5, 6), (0, 0), (0, 10), (10, 0)),
                           subgoal=(5, 4))
        spec = ag.AgentSpec("bp", ag.BeliefPlanner(fov=5, preferred_object=0))
        runner = ag.AgentRunner(spec, world, 51)
        probs = runner.policy(gw.initial_state(world, 51))
        assert probs[LEFT] == 1.0

    def test_acts_on_false_belief_after_unseen_swap(self):
        # sees object 0 next door, walks to a distant subgoal, swap moves the
        # object away outside the fov; the agent still plans back to the old cell
        world = open_world(agent=(5, 1), objects=((5, 0), (0, 10), (10, 10), (0, 0)),
                           subgoal=(5, 9))
        spec = ag.AgentSpec("bp", ag.BeliefPlanner(fov=3, preferred_object=0))
        forced = [RIGHT] * 8  # walk from (5,1) to (5,9)
        rng = np.random.default_rng(0)
        runner = ag.AgentRunner(spec, world, 51)
        ws = gw.initial_state(world, 51)
        for a in forced:
            runner.policy(ws)
            ws_before = ws
            ws, out = gw.step(ws, a, 0.0, rng)
            runner.observe_outcome(out, ws_before, a)
        assert ws.subgoal_consumed
        # forced swap: object 0 jumps to the far corner (outside the 3x3 fov)
        ws = gw.apply_swap(ws, (3, 1, 2, 0))
        probs = runner.policy(ws)
        assert probs[LEFT] == 1.0  # still heading back to (5,0)

    def test_replans_when_swap_is_visible(self):
        world = open_world(agent=(5, 1), objects=((5, 0), (0, 10), (10, 10), (5, 10)),
                           subgoal=(5, 8))
        spec = ag.AgentSpec("bp", ag.BeliefPlanner(fov=5, preferred_object=0))
        forced = [RIGHT] * 7
        rng = np.random.default_rng(0)
        runner = ag.AgentRunner(spec, world, 51)
        ws = gw.initial_state(world, 51)
        for a in forced:
            runner.policy(ws)
            ws_before = ws
            ws, out = gw.step(ws, a, 0.0, rng)
            runner.observe_outcome(out, ws_before, a)
        # swap object 0 onto (5,10): inside the 5x5 window centred at (5,8)
        ws = gw.apply_swap(ws, (3, 1, 2, 0))
        probs = runner.policy(ws)
        assert probs[RIGHT] == 1.0  # replanned towards the new location

    def test_blind_planner_is_stationary_but_valid(self):
        world = open_world(agent=(5, 5), subgoal=(5, 4),
                           objects=((0, 0), (0, 10), (10, 0), (10, 10)))
        spec = ag.AgentSpec("bp", ag.BeliefPlanner(fov=BLIND, preferred_object=0))
        trace = ag.rollout(spec, world, 5, np.random.default_rng(0))
        assert trace.timed_out
        assert all(abs(sum(p) - 1) < 1e-9 for p in [[1]])  # rollout completed

    def test_all_action_distributions_on_simplex(self):
        rng = np.random.default_rng(11)
        cfg = gw.WorldConfig(wall_range=(0, 6), subgoal=True, timeout=51, swap_prob=0.1)
        for fov in (3, 9, BLIND):
            world = gw.sample_world(cfg, rng)
            spec = ag.AgentSpec("bp", ag.sample_belief_planner(rng, fov))
            runner = ag.AgentRunner(spec, world, 51)
            ws = gw.initial_state(world, 51)
            for _ in range(10):
                if ws.terminated:
                    break
                probs = runner.policy(ws)
                assert abs(probs.sum() - 1.0) < 1e-9
                ws_before = ws
                ws, out = gw.step(ws, int(rng.choice(5, p=probs)), 0.1, rng)
                runner.observe_outcome(out, ws_before, int(np.argmax(probs)))


class TestSallyAnneGroundTruth:
    """The scripted 5x5 agent has a hard observability boundary.

    Swap distance = Chebyshev distance from the agent (standing on the
    subgoal) to the preferred object's original cell. The agent starts
    adjacent to the object, so a corridor of k forced steps gives swap
    distance k + 1; distance 1 needs a dogleg ending next to the object.
    """

    def scenario(self, distance):
        spec = ag.AgentSpec("bp", ag.BeliefPlanner(fov=5, preferred_object=0))
        if distance == 1:
            world = open_world(agent=(5, 2), objects=((5, 0), (0, 10), (10, 10), (0, 0)),
                               subgoal=(4, 1))
            forced = [LEFT, UP]
        else:
            world = open_world(agent=(5, 1), objects=((5, 0), (0, 10), (10, 10), (0, 0)),
                               subgoal=(5, distance))
            forced = [RIGHT] * (distance - 1)
        return world, spec, forced

    def return_probs(self, distance, swap):
        world, spec, forced = self.scenario(distance)
        rng = np.random.default_rng(0)
        runner = ag.AgentRunner(spec, world, 51)
        ws = gw.initial_state(world, 51)
        for a in forced:
            runner.policy(ws)
            ws_before = ws
            ws, out = gw.step(ws, a, 0.0, rng)
            runner.observe_outcome(out, ws_before, a)
        assert ws.subgoal_consumed
        assert max(abs(ws.agent_pos[0] - 5), abs(ws.agent_pos[1] - 0)) == distance
        if swap:
            ws = gw.apply_swap(ws, (1, 0, 3, 2))  # object 0 -> far corner
        return runner.policy(ws)

    def delta_pi(self, distance):
        no_swap = self.return_probs(distance, swap=False)
        with_swap = self.return_probs(distance, swap=True)
        a_return = int(np.argmax(no_swap))
        return (no_swap[a_return] - with_swap[a_return]) / no_swap[a_return] * 100

    def test_visible_swap_kills_return_policy(self):
        for distance in (1, 2):
            assert self.delta_pi(distance) == pytest.approx(100.0)

    def test_invisible_swap_leaves_policy_unchanged(self):
        for distance in (4, 6, 8):
            assert self.delta_pi(distance) == pytest.approx(0.0)
