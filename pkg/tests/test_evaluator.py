"""Switched cost assembly, candidate selection, and the planning cycle."""

from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import make_scenario
from curionav.crowd import Pedestrian, predict_pedestrians, step_maps
from curionav.dynamics import Control, RobotState, step
from curionav.estimation import Belief, cpc_score, feedback_gains, propagate_uncertainty
from curionav.evaluator import (
    MODES,
    CostBreakdown,
    CostWeights,
    distance_cost,
    mode_weights,
    plan_cycle,
    select_optimal,
    social_cost,
    total_cost,
)
from curionav.planner import TrajectoryCandidate


def _candidate(start: RobotState, controls: list[Control], dt: float) -> TrajectoryCandidate:
    states = [start]
    for c in controls:
        states.append(step(states[-1], c, dt))
    return TrajectoryCandidate(states, controls, [np.zeros((2, 3))] * len(controls), 0.0)


def _no_peds(k: int = 8, dt: float = 0.5):
    return predict_pedestrians([], k, dt)


def test_distance_zero_when_parked_on_goal():
    goal = np.array([3.0, 4.0])
    states = [RobotState(0.0, 0.0, 0.0)] + [RobotState(3.0, 4.0, 0.0)] * 3
    cand = TrajectoryCandidate(states, [Control(0.3, 0.0)] * 3, [np.zeros((2, 3))] * 3, 0.0)
    assert distance_cost(cand, goal) == 0.0


def test_distance_sums_step_distances():
    goal = np.array([0.0, 0.0])
    states = [
        RobotState(9.0, 9.0, 0.0),    # root, excluded
        RobotState(3.0, 0.0, 0.0),    # 3 away
        RobotState(0.0, 4.0, 0.0),    # 4 away
    ]
    cand = TrajectoryCandidate(states, [Control(1.0, 0.0)] * 2, [np.zeros((2, 3))] * 2, 0.0)
    assert distance_cost(cand, goal) == pytest.approx(7.0, abs=1e-12)


def test_distance_matches_vector_oracle():
    rng = np.random.default_rng(3)
    goal = np.array([6.0, 6.0])
    for _ in range(20):
        k = int(rng.integers(1, 9))
        cand = _candidate(
            RobotState(*rng.uniform(0, 8, 2), rng.uniform(-3, 3)),
            [Control(rng.uniform(0.3, 1.0), rng.uniform(-1, 1)) for _ in range(k)],
            0.5,
        )
        xy = np.array([[s.x, s.y] for s in cand.states[1:]])
        want = float(np.linalg.norm(xy - goal, axis=1).sum())
        assert distance_cost(cand, goal) == pytest.approx(want, abs=1e-12)


def test_social_reduces_to_distance_without_pedestrians():
    scn = make_scenario()
    cand = _candidate(RobotState(1.0, 1.0, 0.0), [Control(1.0, 0.0)] * 4, 0.5)
    w = CostWeights(1.0, 5.0, 1.0, 0.12)
    got = social_cost(cand, _no_peds(4), scn.goal, w, scn.params)
    assert got == pytest.approx(distance_cost(cand, scn.goal))


def test_social_zero_weights():
    scn = make_scenario()
    cand = _candidate(RobotState(1.0, 1.0, 0.0), [Control(1.0, 0.0)] * 4, 0.5)
    peds = [Pedestrian(0, np.array([2.0, 1.0]), np.zeros(2))]
    w = CostWeights(1.0, 0.0, 0.0, 0.12)
    assert social_cost(cand, predict_pedestrians(peds, 4, 0.5), scn.goal, w, scn.params) == 0.0


def test_social_is_weighted_composition():
    scn = make_scenario()
    rng = np.random.default_rng(17)
    from curionav.crowd import cnc_cost

    for _ in range(10):
        cand = _candidate(
            RobotState(*rng.uniform(1, 7, 2), rng.uniform(-3, 3)),
            [Control(rng.uniform(0.3, 1.0), rng.uniform(-1, 1)) for _ in range(5)],
            0.5,
        )
        peds = [
            Pedestrian(i, rng.uniform(0, 8, 2), rng.uniform(-0.5, 0.5, 2))
            for i in range(4)
        ]
        predicted = predict_pedestrians(peds, 5, 0.5)
        w2, w3 = rng.uniform(0, 5, 2)
        w = CostWeights(1.0, w2, w3, 0.12)
        want = w2 * cnc_cost(cand, predicted, scn.params) + w3 * distance_cost(
            cand, scn.goal
        )
        got = social_cost(cand, predicted, scn.goal, w, scn.params)
        assert got == pytest.approx(want, rel=1e-12)


def test_weights_validation():
    with pytest.raises(ValueError):
        CostWeights(-1.0, 1.0, 1.0, 0.12)
    with pytest.raises(ValueError):
        CostWeights(1.0, 1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        mode_weights(make_scenario().params, "everything")


def test_mode_weight_table():
    p = make_scenario(w1=120.0, w2=50.0, w3=1.0).params
    full = mode_weights(p, "full")
    assert (full.w1, full.w2, full.w3, full.cpc_enabled) == (120.0, 50.0, 1.0, True)
    cpc = mode_weights(p, "cpc-only")
    assert (cpc.w1, cpc.w2, cpc.w3, cpc.cpc_enabled) == (120.0, 0.0, 1.0, True)
    cnc = mode_weights(p, "cnc-only")
    assert (cnc.w1, cnc.w2, cnc.cpc_enabled) == (120.0, 50.0, False)
    dist = mode_weights(p, "distance-only")
    assert (dist.w1, dist.w2, dist.w3) == (0.0, 0.0, 1.0)
    assert set(MODES) == {"full", "cpc-only", "cnc-only", "distance-only"}


def test_total_inactive_at_threshold_boundary():
    # the trigger is strictly greater-than
    scn = make_scenario()
    cand = _candidate(RobotState(1.0, 1.0, 0.0), [Control(1.0, 0.0)] * 4, 0.5)
    belief = Belief(cand.states[0], 0.04 * np.eye(3))
    w = CostWeights(120.0, 50.0, 1.0, 0.12)
    b = total_cost(cand, 0.12, belief, scn, _no_peds(4), w)
    assert not b.cpc_active
    assert b.cpc_term == 0.0
    assert b.zeta is None
    assert b.total == pytest.approx(b.distance_term)
    over = total_cost(cand, 0.12 + 1e-9, belief, scn, _no_peds(4), w)
    assert over.cpc_active
    assert over.zeta is not None


def test_total_proportional_cpc_alone():
    scn = make_scenario()
    cand = _candidate(RobotState(1.0, 1.0, 0.0), [Control(1.0, 0.0)] * 4, 0.5)
    belief = Belief(cand.states[0], 0.1 * np.eye(3))
    w = CostWeights(7.0, 0.0, 0.0, 0.12)
    b = total_cost(cand, 0.3, belief, scn, _no_peds(4), w)
    gains = feedback_gains(cand, 0.5, scn.params.lqr_q, scn.params.lqr_r)
    zeta = cpc_score(propagate_uncertainty(cand, belief, scn, gains))
    assert b.zeta == pytest.approx(zeta, rel=1e-12)
    assert b.total == pytest.approx(7.0 * zeta, rel=1e-12)


def test_total_literal_inverse_mode():
    scn = make_scenario()
    cand = _candidate(RobotState(1.0, 1.0, 0.0), [Control(1.0, 0.0)] * 4, 0.5)
    belief = Belief(cand.states[0], 0.1 * np.eye(3))
    w = CostWeights(7.0, 0.0, 0.0, 0.12, cpc_term_mode="literal-inverse")
    b = total_cost(cand, 0.3, belief, scn, _no_peds(4), w)
    assert b.total == pytest.approx(7.0 / b.zeta, rel=1e-12)


def test_total_zero_w1_skips_propagation():
    scn = make_scenario()
    cand = _candidate(RobotState(1.0, 1.0, 0.0), [Control(1.0, 0.0)] * 4, 0.5)
    belief = Belief(cand.states[0], 0.1 * np.eye(3))
    w = CostWeights(0.0, 0.0, 1.0, 0.12)
    b = total_cost(cand, 0.3, belief, scn, _no_peds(4), w)
    assert b.cpc_active            # trigger fired
    assert b.zeta is None          # but nothing was propagated
    assert b.cpc_term == 0.0


def test_total_hand_composed_chain():
    scn = make_scenario()
    start = RobotState(1.0, 1.0, 0.0)
    cand = _candidate(start, [Control(1.0, 0.0), Control(1.0, 0.0)], 0.5)
    peds = [Pedestrian(0, np.array([2.0, 2.0]), np.zeros(2))]
    predicted = predict_pedestrians(peds, 2, 0.5)
    belief = Belief(start, 0.1 * np.eye(3))
    w = CostWeights(2.0, 3.0, 1.0, 0.12)
    b = total_cost(cand, 0.3, belief, scn, predicted, w)

    dist = math.hypot(1.5 - 6.0, 1.0 - 6.0) + math.hypot(2.0 - 6.0, 1.0 - 6.0)
    from curionav.crowd import cnc_cost

    h = cnc_cost(cand, predicted, scn.params)
    gains = feedback_gains(cand, 0.5, scn.params.lqr_q, scn.params.lqr_r)
    zeta = cpc_score(propagate_uncertainty(cand, belief, scn, gains))
    assert b.distance_term == pytest.approx(dist, abs=1e-12)
    assert b.crowd_term == pytest.approx(h, rel=1e-12)
    assert b.total == pytest.approx(1.0 * dist + 3.0 * h + 2.0 * zeta, rel=1e-12)


def test_total_shares_prebuilt_maps():
    scn = make_scenario()
    start = RobotState(1.0, 1.0, 0.0)
    cand = _candidate(start, [Control(0.8, 0.2)] * 4, 0.5)
    peds = [Pedestrian(0, np.array([3.0, 2.0]), np.array([0.2, 0.1]))]
    predicted = predict_pedestrians(peds, 4, 0.5)
    belief = Belief(start, 0.01 * np.eye(3))
    w = CostWeights(1.0, 2.0, 1.0, 0.12)
    maps = step_maps(predicted, start.position(), scn.params)
    plain = total_cost(cand, 0.03, belief, scn, predicted, w)
    shared = total_cost(cand, 0.03, belief, scn, predicted, w, maps=maps)
    assert plain.total == shared.total


def _bd(total: float) -> CostBreakdown:
    return CostBreakdown(0.0, 0.0, 0.0, 0.0, total, False)


def test_select_single_and_empty():
    assert select_optimal([]) is None
    assert select_optimal([_bd(4.2)]) == 0


def test_select_tie_takes_first():
    assert select_optimal([_bd(1.5), _bd(1.5), _bd(2.0)]) == 0
    assert select_optimal([_bd(3.0), _bd(1.5), _bd(1.5)]) == 1


def test_select_matches_exhaustive_min():
    rng = np.random.default_rng(41)
    for _ in range(20):
        totals = rng.uniform(0, 10, int(rng.integers(1, 30)))
        got = select_optimal([_bd(t) for t in totals])
        assert got == int(np.argmin(totals))


def test_plan_cycle_progresses_toward_goal():
    scn = make_scenario()
    belief = Belief(RobotState(1.0, 1.0, 0.8), 0.01 * np.eye(3))
    w = mode_weights(scn.params, "full")
    cand, breakdowns, diag = plan_cycle(
        belief, scn, [], [], w, np.random.default_rng(5)
    )
    assert cand is not None
    assert len(breakdowns) == diag["n_candidates"] > 0
    d_root = math.hypot(1.0 - 6.0, 1.0 - 6.0)
    d_end = math.hypot(cand.states[-1].x - 6.0, cand.states[-1].y - 6.0)
    assert d_end < d_root
    assert not diag["blocked_root"]
    assert diag["best_index"] is not None


def test_plan_cycle_blocked_root_returns_none():
    rows = ["........"] * 4 + ["....#..."] + ["........"] * 3
    scn = make_scenario(rows=rows, start=(1.0, 1.0, 0.0), landmarks=[[0.5, 0.5]])
    # rows index 4 from the top of an 8-row grid covers y in [3, 4)
    belief = Belief(RobotState(4.5, 3.5, 0.0), 0.01 * np.eye(3))
    w = mode_weights(scn.params, "full")
    cand, breakdowns, diag = plan_cycle(
        belief, scn, [], [], w, np.random.default_rng(5)
    )
    assert cand is None
    assert breakdowns == []
    assert diag["blocked_root"]


def test_plan_cycle_deterministic_under_fixed_seed():
    scn = make_scenario()
    peds = [Pedestrian(0, np.array([3.5, 3.5]), np.array([0.2, 0.0]))]
    belief = Belief(RobotState(1.0, 1.0, 0.0), 0.05 * np.eye(3))
    w = mode_weights(scn.params, "full")
    a_cand, a_break, _ = plan_cycle(belief, scn, peds, [], w, np.random.default_rng(99))
    b_cand, b_break, _ = plan_cycle(belief, scn, peds, [], w, np.random.default_rng(99))
    assert a_cand.states == b_cand.states
    assert a_cand.controls == b_cand.controls
    assert [b.total for b in a_break] == [b.total for b in b_break]
    assert [b.crowd_term for b in a_break] == [b.crowd_term for b in b_break]


def test_plan_cycle_carries_candidates():
    scn = make_scenario()
    belief = Belief(RobotState(1.0, 1.0, 0.0), 0.01 * np.eye(3))
    w = mode_weights(scn.params, "full")
    first, _, _ = plan_cycle(belief, scn, [], [], w, np.random.default_rng(1))
    _, _, diag = plan_cycle(belief, scn, [], [first], w, np.random.default_rng(2))
    assert diag["n_carried"] == 1
    assert diag["n_candidates"] > 1
