"""Switched cost composition and the per-cycle planning step.

Every candidate gets a breakdown of the three terms: summed goal distance,
crowd density along the path, and (when the uncertainty trigger has fired)
the predicted-uncertainty term. The trigger compares the current belief
trace against Thr' once per cycle and applies to all candidates uniformly.

Ablation modes are pure weight/flag settings over this one code path:
full; cpc-only (w2=0); cnc-only (trigger disabled); distance-only
(w1=w2=0).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import crowd
from .dynamics import Control, RobotState
from .estimation import (
    Belief,
    cpc_score,
    current_uncertainty,
    feedback_gains,
    propagate_uncertainty,
)
from .planner import (
    TrajectoryCandidate,
    find_path_candidates,
    grow_tree,
    prune_unreachable,
)
from .world import Params, Scenario, is_footprint_free

MODES = ("full", "cpc-only", "cnc-only", "distance-only")

# literal-inverse mode divides by zeta; clamp to keep the term finite
ZETA_FLOOR = 1e-9


@dataclass(frozen=True)
class CostWeights:
    w1: float
    w2: float
    w3: float
    thr_prime: float
    cpc_term_mode: str = "proportional"
    cpc_enabled: bool = True

    def __post_init__(self) -> None:
        if min(self.w1, self.w2, self.w3) < 0:
            raise ValueError("weights must be >= 0")
        if self.thr_prime <= 0:
            raise ValueError("thr_prime must be > 0")


@dataclass(frozen=True)
class CostBreakdown:
    distance_term: float          # sum of per-step goal distances
    crowd_term: float             # mixture density sum H
    cpc_term: float               # weighted curiosity term, 0 when inactive
    ell: float                    # belief trace at decision time
    total: float
    cpc_active: bool
    zeta: float | None = None     # predicted uncertainty, None when skipped


def mode_weights(params: Params, mode: str) -> CostWeights:
    """CostWeights for one of the four ablation modes."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    w1, w2, w3 = params.w1, params.w2, params.w3
    enabled = True
    if mode == "cpc-only":
        w2 = 0.0
    elif mode == "cnc-only":
        enabled = False
    elif mode == "distance-only":
        w1 = 0.0
        w2 = 0.0
    return CostWeights(
        w1, w2, w3, params.thr_prime, params.cpc_term_mode, cpc_enabled=enabled
    )


def distance_cost(candidate: TrajectoryCandidate, goal: np.ndarray) -> float:
    """Sum over steps of the Euclidean distance from step position to goal."""
    gx, gy = float(goal[0]), float(goal[1])
    return float(
        sum(math.hypot(s.x - gx, s.y - gy) for s in candidate.states[1:])
    )


def social_cost(
    candidate: TrajectoryCandidate,
    predicted,
    goal: np.ndarray,
    weights: CostWeights,
    params: Params,
    maps=None,
) -> float:
    """w2 * crowd density sum + w3 * goal distance sum."""
    h = crowd.cnc_cost(candidate, predicted, params, maps=maps)
    return weights.w2 * h + weights.w3 * distance_cost(candidate, goal)


def _cpc_term(weights: CostWeights, zeta: float) -> float:
    if weights.cpc_term_mode == "literal-inverse":
        return weights.w1 / max(zeta, ZETA_FLOOR)
    return weights.w1 * zeta


def total_cost(
    candidate: TrajectoryCandidate,
    ell: float,
    belief: Belief,
    scenario: Scenario,
    predicted,
    weights: CostWeights,
    maps=None,
    visibility_cache: dict | None = None,
) -> CostBreakdown:
    """Full switched cost of one candidate at trigger value ``ell``.

    With the trigger off (ell <= Thr' or trigger disabled) the curiosity
    term is zero and belief propagation is skipped entirely; with w1 = 0 the
    term is identically zero, so propagation is skipped there too.
    """
    params = scenario.params
    dist = distance_cost(candidate, scenario.goal)
    h = crowd.cnc_cost(candidate, predicted, params, maps=maps)
    active = weights.cpc_enabled and ell > weights.thr_prime
    zeta = None
    cpc = 0.0
    if active and weights.w1 > 0.0:
        gains = feedback_gains(candidate, params.dt, params.lqr_q, params.lqr_r)
        # carried candidates may root slightly off the current mean; the
        # envelope starts from the current covariance at the candidate root
        start = Belief(candidate.states[0], belief.cov)
        envelope = propagate_uncertainty(
            candidate, start, scenario, gains, visibility_cache
        )
        zeta = cpc_score(envelope)
        cpc = _cpc_term(weights, zeta)
    total = weights.w3 * dist + weights.w2 * h + cpc
    return CostBreakdown(
        distance_term=dist,
        crowd_term=h,
        cpc_term=cpc,
        ell=ell,
        total=total,
        cpc_active=active,
        zeta=zeta,
    )


def select_optimal(breakdowns: list[CostBreakdown]) -> int | None:
    """Index of the minimum total; ties break to the lowest index."""
    best = None
    best_total = math.inf
    for i, b in enumerate(breakdowns):
        if b.total < best_total:
            best = i
            best_total = b.total
    return best


def plan_cycle(
    belief: Belief,
    scenario: Scenario,
    pedestrians: list[crowd.Pedestrian],
    carried: list[TrajectoryCandidate],
    weights: CostWeights,
    rng: np.random.Generator,
) -> tuple[TrajectoryCandidate | None, list[CostBreakdown], dict]:
    """One planning period: predict, prune, grow, cost, select.

    Returns (chosen candidate or None, breakdowns for all candidates in
    selection order, diagnostics). A None result tells the caller to hold
    for one cycle and replan.
    """
    t0 = time.perf_counter()
    params = scenario.params
    root = belief.mean
    diag: dict = {"ell": current_uncertainty(belief)}
    if not is_footprint_free(scenario.grid, root.position(), params.robot_radius):
        diag.update(cpc_active=False, n_candidates=0, n_carried=0,
                    tree_size=0, wall_time=time.perf_counter() - t0,
                    blocked_root=True)
        return None, [], diag

    predicted = crowd.predict_pedestrians(pedestrians, params.horizon_k, params.dt)
    kept = prune_unreachable(carried, root, predicted, scenario)
    ell = diag["ell"]
    active = weights.cpc_enabled and ell > weights.thr_prime
    maps = crowd.step_maps(predicted, root.position(), params) if pedestrians else None

    tree = grow_tree(root, scenario, predicted, params.budget, rng)
    fresh = find_path_candidates(tree, params.horizon_k, params.max_candidates)
    candidates = kept + fresh

    vis_cache: dict = {}
    breakdowns = [
        total_cost(c, ell, belief, scenario, predicted, weights,
                   maps=maps, visibility_cache=vis_cache)
        for c in candidates
    ]
    best = select_optimal(breakdowns)
    diag.update(
        cpc_active=active,
        n_candidates=len(candidates),
        n_carried=len(kept),
        tree_size=tree.n,
        wall_time=time.perf_counter() - t0,
        blocked_root=False,
        best_index=best,
    )
    if best is None:
        return None, breakdowns, diag
    return candidates[best], breakdowns, diag
