import itertools
import math

import numpy as np
import pytest

from searchtrack import (
    BernoulliComponent,
    CardinalityStats,
    ControlParams,
    Measurement,
    ModeAssignment,
    PlanConfig,
    Rect,
    SensingParams,
    admissible_controls,
    evaluate_assignment,
    pims,
    plan,
    plan_ga,
    search_cost,
    search_value_at,
    select_modes,
    tracking_cost,
    tracking_score,
)
from oracles import brute_force_joint_search, oracle_disc_search_cost

AREA = Rect(0.0, 100.0, 0.0, 100.0)
SP = SensingParams(eta=0.03, lambdaClutter=5.0)
CP = ControlParams()


def component(r, center, n=20, spread=1.5, seed=0):
    rng = np.random.default_rng(seed)
    pts = np.asarray(center, dtype=float) + rng.normal(0, spread, size=(n, 2))
    particles = np.column_stack([pts[:, 0], np.zeros(n), pts[:, 1], np.zeros(n)])
    return BernoulliComponent(r, particles, np.full(n, 1.0 / n))


def random_planner_state(rng, n_agents):
    while True:
        agents = [rng.uniform(15, 85, size=2) for _ in range(n_agents)]
        ok = all(
            np.linalg.norm(agents[a] - agents[b]) > 5.0
            for a in range(n_agents)
            for b in range(a + 1, n_agents)
        )
        if ok:
            break
    densities = []
    for _ in range(n_agents):
        comps = [
            component(rng.uniform(0.05, 0.98), rng.uniform(20, 80, size=2), n=15,
                      seed=int(rng.integers(1 << 16)))
            for _ in range(rng.integers(1, 4))
        ]
        densities.append(comps)
    return agents, densities


class TestPims:
    def test_empty(self):
        assert pims(np.zeros((0, 4)), [50.0, 50.0]) == []

    def test_east_offset(self):
        z = pims(np.array([[60.0, 0, 50.0, 0]]), [50.0, 50.0])
        assert z[0] == Measurement(pytest.approx(math.pi), pytest.approx(10.0))

    def test_one_per_state(self):
        states = np.array([[10.0, 0, 10.0, 0], [20.0, 0, 20.0, 0], [30.0, 0, 30.0, 0]])
        assert len(pims(states, [50.0, 50.0])) == len(states)


class TestTrackingObjective:
    def test_maximal_when_no_targets_expected(self):
        # All components below the pre-estimation threshold: empty ideal
        # measurement set, pseudo-posterior cardinality below one, score 1.
        density = [component(0.3, [80.0, 80.0])]
        assert tracking_cost(density, np.array([20.0, 20.0]), SP, AREA) == 1.0

    def test_score_zero_for_certain_component(self):
        assert tracking_score(CardinalityStats(1.0, 0.0, 1), 3) == 0.0

    def test_score_at_variance_maximum(self):
        stats = CardinalityStats(1.0, 0.5, 1)
        assert tracking_score(stats, 2) == pytest.approx(1.0)

    def test_score_in_unit_interval(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            rs = rng.uniform(0, 1, rng.integers(1, 6))
            stats = CardinalityStats(rs.sum(), (rs * (1 - rs)).sum(), int(rs.sum() + 0.5))
            assert 0.0 <= tracking_score(stats, len(rs)) <= 1.0

    def test_closer_position_scores_better(self):
        density = [component(0.9, [60.0, 60.0])]
        near = tracking_cost(density, np.array([58.0, 58.0]), SP, AREA)
        far = tracking_cost(density, np.array([20.0, 20.0]), SP, AREA)
        assert near < far


class TestSearchValue:
    def test_at_agent_position(self):
        val = search_value_at([50.0, 50.0], [(np.array([50.0, 50.0]), SP)])
        assert val == pytest.approx(0.01)

    def test_beyond_reach(self):
        val = search_value_at([0.0, 0.0], [(np.array([99.0, 99.0]), SP)])
        assert val == 1.0

    def test_colocated_agents_multiply(self):
        u = np.array([50.0, 50.0])
        one = search_value_at([52.0, 50.0], [(u, SP)])
        two = search_value_at([52.0, 50.0], [(u, SP), (u, SP)])
        assert two == pytest.approx(one**2)
        assert two <= one


class TestSearchCost:
    def test_no_agents(self):
        assert search_cost({}, SP, AREA, 2.0) == 1.0

    def test_point_sensor_matches_disc_integral(self):
        sp = SensingParams(eta=1e9, lambdaClutter=0.0)
        got = search_cost({0: np.array([50.0, 50.0])}, sp, AREA, 2.0)
        expected = oracle_disc_search_cost(sp.pDmax, sp.R0, AREA)
        assert got == pytest.approx(expected, abs=1e-3)

    def test_monotone_in_agents(self):
        actions = {0: np.array([30.0, 30.0])}
        one = search_cost(actions, SP, AREA, 2.0)
        actions[1] = np.array([70.0, 70.0])
        two = search_cost(actions, SP, AREA, 2.0)
        assert two <= one


class TestSelectModes:
    def test_empty_density_searches(self):
        modes = select_modes([[]])
        assert modes.searchSet == frozenset({0})

    def test_threshold_crossed(self):
        density = [component(0.6, [50.0, 50.0]), component(0.5, [60.0, 60.0])]
        modes = select_modes([density])
        assert modes.trackSet == frozenset({0})

    def test_strict_threshold(self):
        modes = select_modes([[component(0.99, [50.0, 50.0])]])
        assert modes.searchSet == frozenset({0})

    def test_component_order_irrelevant(self):
        comps = [component(r, [50.0, 50.0]) for r in (0.3, 0.4, 0.35)]
        assert select_modes([comps]) == select_modes([comps[::-1]])


class TestPlan:
    def test_single_agent_searches_and_beats_stay(self):
        agent = np.array([50.0, 50.0])
        cfg = PlanConfig()
        result = plan([agent], [[]], cfg=cfg, sp=SP, cp=CP, area=AREA)
        assert result.modes.searchSet == frozenset({0})
        stay = search_cost({0: agent}, SP, AREA, cfg.gridStep)
        assert result.searchCost <= stay + 1e-12

    def test_exhaustive_matches_brute_force(self):
        agents = [np.array([45.0, 50.0]), np.array([55.0, 50.0])]
        cfg = PlanConfig(backend="exhaustive")
        result = plan(agents, [[], []], cfg=cfg, sp=SP, cp=CP, area=AREA)
        cands = [admissible_controls(s, CP, AREA) for s in agents]
        combo, cost = brute_force_joint_search(cands, SP, AREA, cfg.gridStep, cfg.dMin)
        assert result.searchCost == cost
        assert np.allclose(result.actions[0], cands[0][combo[0]])
        assert np.allclose(result.actions[1], cands[1][combo[1]])

    def test_greedy_never_beats_exhaustive(self):
        rng = np.random.default_rng(17)
        for _ in range(5):
            agents, _ = random_planner_state(rng, 2)
            exh = plan(agents, [[], []], cfg=PlanConfig(backend="exhaustive"),
                       sp=SP, cp=CP, area=AREA)
            greedy = plan(agents, [[], []], cfg=PlanConfig(exhaustiveLimit=0),
                          sp=SP, cp=CP, area=AREA)
            stay = search_cost({j: agents[j] for j in range(2)}, SP, AREA, 2.0)
            assert exh.searchCost <= greedy.searchCost + 1e-12
            assert greedy.searchCost <= stay + 1e-12

    def test_overlapping_agents_reduce_joint_cost(self):
        agents = [np.array([48.0, 50.0]), np.array([52.0, 50.0])]
        cfg = PlanConfig(backend="exhaustive", dMin=2.0)
        result = plan(agents, [[], []], cfg=cfg, sp=SP, cp=CP, area=AREA)
        stay = search_cost({0: agents[0], 1: agents[1]}, SP, AREA, cfg.gridStep)
        assert result.searchCost <= stay + 1e-12

    def test_separation_contract(self):
        rng = np.random.default_rng(23)
        for n_agents in (2, 3):
            for _ in range(5):
                agents, densities = random_planner_state(rng, n_agents)
                result = plan(agents, densities, cfg=PlanConfig(), sp=SP, cp=CP, area=AREA)
                if result.separationFallback:
                    continue
                pos = [result.actions[j] for j in range(n_agents)]
                for a in range(n_agents):
                    for b in range(a + 1, n_agents):
                        assert np.linalg.norm(pos[a] - pos[b]) > PlanConfig().dMin

    def test_tracking_agent_chooses_best_feasible_action(self):
        density = [component(0.9, [60.0, 55.0])]
        agent = np.array([50.0, 50.0])
        result = plan([agent], [density], cfg=PlanConfig(), sp=SP, cp=CP, area=AREA)
        assert result.modes.trackSet == frozenset({0})
        cands = admissible_controls(agent, CP, AREA)
        costs = [tracking_cost(density, u, SP, AREA) for u in cands]
        assert result.trackCosts[0] == pytest.approx(min(costs))

    def test_power_set_modes_runs(self):
        density = [component(0.9, [60.0, 55.0])]
        cfg = PlanConfig(backend="exhaustive", powerSetModes=True)
        result = plan([np.array([50.0, 50.0])], [density], cfg=cfg, sp=SP, cp=CP, area=AREA)
        total = result.searchCost + sum(result.trackCosts.values())
        assert math.isfinite(total)


class TestPlanGa:
    def test_never_worse_than_heuristic(self):
        rng = np.random.default_rng(31)
        for seed in range(5):
            agents, densities = random_planner_state(rng, 2)
            cfg = PlanConfig(backend="ga", w=0.5, gaPopulation=32, gaMaxIters=10)
            heuristic = plan(agents, densities, cfg=cfg, sp=SP, cp=CP, area=AREA)
            ga = plan_ga(agents, densities, cfg=cfg, sp=SP, cp=CP, area=AREA,
                         rng=np.random.default_rng(seed))
            f_h = evaluate_assignment(heuristic.modes, heuristic.actions, densities,
                                      cfg=cfg, sp=SP, area=AREA)
            f_ga = evaluate_assignment(ga.modes, ga.actions, densities,
                                       cfg=cfg, sp=SP, area=AREA)
            assert f_ga <= f_h + 1e-12

    def test_pure_search_weight_bounded_by_greedy(self):
        rng = np.random.default_rng(37)
        agents, densities = random_planner_state(rng, 2)
        cfg = PlanConfig(backend="ga", w=1.0, gaPopulation=32, gaMaxIters=10)
        greedy = plan(agents, [[], []], cfg=cfg, sp=SP, cp=CP, area=AREA)
        ga = plan_ga(agents, densities, cfg=cfg, sp=SP, cp=CP, area=AREA,
                     rng=np.random.default_rng(0))
        ga_search = evaluate_assignment(ga.modes, ga.actions, densities,
                                        cfg=cfg, sp=SP, area=AREA)
        assert ga_search <= greedy.searchCost + 1e-12

    def test_single_agent_equals_enumeration(self):
        rng = np.random.default_rng(41)
        for seed in range(5):
            agents, densities = random_planner_state(rng, 1)
            cfg = PlanConfig(backend="ga", w=0.5, gaPopulation=40, gaMaxIters=5)
            ga = plan_ga(agents, densities, cfg=cfg, sp=SP, cp=CP, area=AREA,
                         rng=np.random.default_rng(seed))
            f_ga = evaluate_assignment(ga.modes, ga.actions, densities,
                                       cfg=cfg, sp=SP, area=AREA)
            search_only = ModeAssignment(frozenset({0}), frozenset())
            track_only = ModeAssignment(frozenset(), frozenset({0}))
            best = min(
                evaluate_assignment(modes, {0: u}, densities, cfg=cfg, sp=SP, area=AREA)
                for u in admissible_controls(agents[0], CP, AREA)
                for modes in (search_only, track_only)
            )
            assert f_ga == pytest.approx(best, abs=1e-12)

    def test_zero_iterations_returns_seeded_best(self):
        rng = np.random.default_rng(43)
        agents, densities = random_planner_state(rng, 2)
        cfg = PlanConfig(backend="ga", w=0.5, gaPopulation=16, gaMaxIters=0)
        heuristic = plan(agents, densities, cfg=cfg, sp=SP, cp=CP, area=AREA)
        ga = plan_ga(agents, densities, cfg=cfg, sp=SP, cp=CP, area=AREA,
                     rng=np.random.default_rng(1))
        f_h = evaluate_assignment(heuristic.modes, heuristic.actions, densities,
                                  cfg=cfg, sp=SP, area=AREA)
        f_ga = evaluate_assignment(ga.modes, ga.actions, densities,
                                   cfg=cfg, sp=SP, area=AREA)
        assert f_ga <= f_h + 1e-12
