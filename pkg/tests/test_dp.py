import math

import numpy as np
import pytest

import fracjt as fj
from fracjt.dp import (
    EnergyCausalityError,
    Policy,
    action_set,
    battery_update,
    build_stage_tables,
    evaluate_policy_mc,
    make_state_grid,
    policy_iteration_exact,
    relative_value_iteration,
    save_dp_table,
    load_dp_table,
)


NOISE = 1.0
TF = 1.0


@pytest.fixture(scope="module")
def params():
    return fj.ChannelModelParams(shadowing_std_db=0.0)


@pytest.fixture(scope="module")
def small_problem(params):
    """2-channel-state, 5-level instance with precomputed equality tables."""
    cg = fj.build_channel_grid(params, 2, 1500, np.random.default_rng(7))
    e = (0.1, 0.5)
    grid = make_state_grid(cg, e, NOISE, TF, battery_levels=5, action_levels=5)
    tables = build_stage_tables(grid, e)
    return grid, e, tables


class TestBatteryUpdate:
    def _zero_solution(self):
        return fj.PerFrameSolution(k=0, user=0, alpha=0.0, p_tilde=0.0,
                                   powers=(0.0, 0.0), sum_rate=0.0,
                                   jt_loads=(0.0, 0.0))

    def test_no_transmission_banks_arrivals(self):
        nb = battery_update((1.0, 2.0), self._zero_solution(), (0.3, 0.4), TF,
                            (10.0, 10.0))
        assert np.allclose(nb, [1.3, 2.4])

    def test_overflow_clips_to_cap(self):
        nb = battery_update((9.9, 9.9), self._zero_solution(), (0.3, 0.4), TF,
                            (10.0, 10.0))
        assert np.allclose(nb, [10.0, 10.0])

    def test_full_budget_drains_to_zero(self):
        chan = fj.ChannelMatrix(entries=np.eye(2, dtype=complex),
                                large_scale=np.ones((2, 2)))
        b, e = (1.0, 2.0), (0.3, 0.4)
        caps = (b[0] / TF + e[0], b[1] / TF + e[1])
        pf = fj.PerFrameInput.build(b, e, caps, chan, NOISE, TF)
        sol = fj.per_stage_utility(pf)
        nb = battery_update(b, sol, e, TF, (10.0, 10.0))
        assert np.all(np.abs(nb) < 1e-9)

    def test_overspend_raises(self):
        sol = fj.PerFrameSolution(k=0, user=0, alpha=0.0, p_tilde=0.0,
                                  powers=(5.0, 0.0), sum_rate=1.0,
                                  jt_loads=(5.0, 0.0))
        with pytest.raises(EnergyCausalityError):
            battery_update((1.0, 1.0), sol, (0.0, 0.0), TF, (10.0, 10.0))


class TestActionSet:
    def test_feasible_targets_and_budgets(self, small_problem):
        grid, e, _ = small_problem
        for k in (0, 1):
            lv = grid.battery_levels[k]
            for i in range(len(lv)):
                targets, budgets = action_set(grid, e, k, i)
                avail = lv[i] + TF * e[k]
                for t, a in zip(targets, budgets):
                    assert 0 <= a <= lv[i] / TF + e[k] + 1e-12
                    assert lv[t] <= avail + 1e-9
                # spend-everything is always available
                assert targets[0] == 0

    def test_top_level_keeps_zero_budget_action(self, small_problem):
        grid, e, _ = small_problem
        for k in (0, 1):
            top = len(grid.battery_levels[k]) - 1
            _, budgets = action_set(grid, e, k, top)
            assert budgets.min() == 0.0


class TestRelativeValueIteration:
    def test_single_state_instance(self, params):
        # one battery level and one channel state: lambda equals the best
        # per-stage utility at that state
        cg = fj.build_channel_grid(params, 1, 400, np.random.default_rng(3))
        e = (0.3, 0.5)
        grid = make_state_grid(cg, e, NOISE, TF, battery_levels=4,
                               action_levels=4, b_max=(0.0, 0.0))
        tables = build_stage_tables(grid, e)
        util, policy = relative_value_iteration(grid, e, tables=tables)
        assert util.h.shape == (1, 1, 1)
        assert abs(util.h[0, 0, 0]) < 1e-9
        assert util.lam == pytest.approx(float(tables.utility[0, 0, 0].max()))

    def test_reference_state_invariance(self, small_problem):
        grid, e, tables = small_problem
        u0, _ = relative_value_iteration(grid, e, tables=tables, ref_channel=0,
                                         tol=1e-7)
        u1, _ = relative_value_iteration(grid, e, tables=tables, ref_channel=1,
                                         tol=1e-7)
        assert u0.lam == pytest.approx(u1.lam, abs=1e-5)

    def test_h_monotone_in_battery(self, small_problem):
        grid, e, tables = small_problem
        util, _ = relative_value_iteration(grid, e, tables=tables)
        h = util.h
        assert np.max(np.maximum(0.0, h[:-1] - h[1:])) <= 1e-9
        assert np.max(np.maximum(0.0, h[:, :-1] - h[:, 1:])) <= 1e-9

    def test_h_pinned_at_reference(self, small_problem):
        grid, e, tables = small_problem
        c0 = int(np.argmax(grid.channel.stationary_probs))
        util, _ = relative_value_iteration(grid, e, tables=tables, tol=1e-8)
        assert abs(util.h[0, 0, c0]) < 1e-6

    def test_invalid_tau(self, small_problem):
        grid, e, tables = small_problem
        with pytest.raises(ValueError):
            relative_value_iteration(grid, e, tau=1.0, tables=tables)


class TestPolicyIteration:
    def test_trace_nondecreasing_and_matches_vi(self, small_problem):
        grid, e, tables = small_problem
        util_vi, _ = relative_value_iteration(grid, e, tables=tables, tol=1e-7)
        util_pi, policy, trace = policy_iteration_exact(grid, e, tables=tables)
        assert len(trace) < 50  # finite termination
        for a, b in zip(trace, trace[1:]):
            assert b >= a - 1e-9
        assert util_pi.lam == pytest.approx(util_vi.lam, abs=1e-4)

    def test_random_initial_policy(self, small_problem):
        grid, e, tables = small_problem
        rng = np.random.default_rng(17)
        n1, n2, nc = grid.shape
        actions = np.zeros((n1, n2, nc, 2), dtype=np.int64)
        for i1 in range(n1):
            for i2 in range(n2):
                a1 = len(action_set(grid, e, 0, i1)[0])
                a2 = len(action_set(grid, e, 1, i2)[0])
                actions[i1, i2, :, 0] = rng.integers(0, a1, size=nc)
                actions[i1, i2, :, 1] = rng.integers(0, a2, size=nc)
        util_pi, _, _ = policy_iteration_exact(grid, e, initial=Policy(actions),
                                               tables=tables)
        util_vi, _ = relative_value_iteration(grid, e, tables=tables, tol=1e-7)
        assert util_pi.lam == pytest.approx(util_vi.lam, abs=1e-4)


class TestEvaluatePolicyMc:
    def test_zero_energy_system(self, params):
        cg = fj.build_channel_grid(params, 2, 500, np.random.default_rng(5))
        e = (0.0, 0.0)
        grid = make_state_grid(cg, e, NOISE, TF, battery_levels=4, action_levels=3)
        tables = build_stage_tables(grid, e)
        _, policy = relative_value_iteration(grid, e, tables=tables)
        stats = evaluate_policy_mc(policy, grid, e, 500, np.random.default_rng(1))
        assert stats.avg_sum_rate == 0.0

    def test_matches_lambda_star(self, small_problem):
        grid, e, tables = small_problem
        util, policy = relative_value_iteration(grid, e, tables=tables, tol=1e-7)
        stats = evaluate_policy_mc(policy, grid, e, 100_000,
                                   np.random.default_rng(41))
        # ergodic average vs DP value within 3 standard errors
        se = 1.0 / math.sqrt(stats.n_frames)
        assert abs(stats.avg_sum_rate - util.lam) < 3 * max(se, 1e-3)

    def test_seed_stability(self, small_problem):
        grid, e, tables = small_problem
        _, policy = relative_value_iteration(grid, e, tables=tables)
        a = evaluate_policy_mc(policy, grid, e, 20_000, np.random.default_rng(1))
        b = evaluate_policy_mc(policy, grid, e, 20_000, np.random.default_rng(2))
        assert abs(a.avg_sum_rate - b.avg_sum_rate) < 0.05
        c = evaluate_policy_mc(policy, grid, e, 20_000, np.random.default_rng(1))
        assert c.avg_sum_rate == a.avg_sum_rate  # bit-identical per seed


class TestTheoremTwoEquivalence:
    def test_equality_vs_inequality_average(self, params):
        # tiny instance: the optimal average with equality-constrained
        # per-stage utilities matches the inequality-constrained one
        cg = fj.build_channel_grid(params, 2, 1200, np.random.default_rng(13))
        e = (0.2, 0.4)
        grid = make_state_grid(cg, e, NOISE, TF, battery_levels=4, action_levels=5)
        t_eq = build_stage_tables(grid, e, per_stage="equality")
        t_in = build_stage_tables(grid, e, per_stage="inequality")
        u_eq, _ = relative_value_iteration(grid, e, tables=t_eq, tol=1e-7)
        u_in, _ = relative_value_iteration(grid, e, tables=t_in, tol=1e-7)
        assert u_in.lam >= u_eq.lam - 1e-9
        assert u_in.lam == pytest.approx(u_eq.lam, rel=1e-3)


class TestOptimalityDominance:
    def test_dp_beats_baselines(self, small_problem):
        from fracjt import baselines

        grid, e, tables = small_problem
        util, policy = relative_value_iteration(grid, e, tables=tables)
        greedy = evaluate_policy_mc(lambda pf: baselines.greedy_policy(pf),
                                    grid, e, 30_000, np.random.default_rng(6))
        conv = evaluate_policy_mc(baselines.conventional_zfjt, grid, e, 30_000,
                                  np.random.default_rng(7))
        tol = 0.02  # Monte-Carlo slack
        assert util.lam >= greedy.avg_sum_rate - tol
        assert util.lam >= conv.avg_sum_rate - tol
        assert greedy.avg_sum_rate >= conv.avg_sum_rate - 1e-9


class TestSerialization:
    def test_round_trip(self, small_problem, tmp_path):
        grid, e, tables = small_problem
        util, policy = relative_value_iteration(grid, e, tables=tables)
        path = tmp_path / "dp_table.txt"
        save_dp_table(path, grid, util, policy, e)
        lam, h, budgets = load_dp_table(path, grid)
        assert lam == util.lam
        assert np.array_equal(h, util.h)
        for i1 in range(grid.shape[0]):
            for i2 in range(grid.shape[1]):
                for ci in range(grid.shape[2]):
                    assert tuple(budgets[i1, i2, ci]) == \
                        policy.budgets(grid, e, i1, i2, ci)
