"""Deterministic closed-loop episodes and the metrics suite.

Per tick: sample process noise and advance the true state under the
previously chosen control, move pedestrians, sense landmarks at the true
pose, EKF predict + update, plan, record. All randomness comes from one
seeded generator in a fixed draw order (process noise, measurement noise,
then tree sampling), so a (scenario, seed) pair fully determines the run.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .crowd import Pedestrian
from .dynamics import Control, RobotState, measure, step
from .estimation import (
    Belief,
    SingularInnovationError,
    current_uncertainty,
    ekf_predict,
    ekf_update,
)
from .evaluator import CostBreakdown, CostWeights, mode_weights, plan_cycle
from .world import Params, Scenario, is_footprint_free, visible_landmarks

# pedestrian mutual repulsion: full-cap push whenever a pair is in range,
# aimed mostly sideways at long separation (early sidestep) and straight
# apart at close quarters
PED_REPULSION_RANGE = 0.8      # [m]
PED_REPULSION_CAP = 0.3        # [m/s]
PED_SIDE_BIAS_RATE = 3.0       # [1/m] side-bias per meter of separation
PED_WAYPOINT_TOL = 0.3         # [m]
PED_SUBSTEP = 0.01             # [s]

STATUS_REACHED = "reached"
STATUS_TICK_LIMIT = "tick_limit"
STATUS_COLLISION = "collision"


@dataclass(eq=False)
class PedSim:
    """Mutable pedestrian runtime: position plus waypoint progress."""
    id: int
    position: np.ndarray
    speed: float
    waypoints: np.ndarray
    waypoint_idx: int = 0


@dataclass(eq=False)
class TickRecord:
    time: float
    true_state: RobotState
    belief_mean: RobotState
    cov_trace: float
    belief_cov: np.ndarray
    control: Control
    ped_positions: np.ndarray            # (P, 2)
    min_ped_distance: float              # inf when no pedestrians
    cpc_active: bool
    breakdown: CostBreakdown | None
    plan_time: float = 0.0


@dataclass(eq=False)
class EpisodeTrace:
    start_state: RobotState
    dt: float
    ticks: list[TickRecord] = field(default_factory=list)
    status: str = STATUS_TICK_LIMIT


@dataclass(eq=False)
class MetricsReport:
    rmse: float
    tcm: float
    nm: int
    td: float
    md: float
    nt: int
    vel: float
    length: float
    time: float
    reached_goal: bool
    seed: int
    status: str
    mode: str = "full"


def _noise_factor(cov: np.ndarray) -> np.ndarray:
    """F with F @ F.T = cov, valid for any PSD matrix."""
    vals, vecs = np.linalg.eigh(cov)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def pedestrian_step(peds: list[PedSim], dt: float, params: Params) -> None:
    """Advance pedestrians in place by one planning period.

    Waypoint pursuit at each pedestrian's own speed plus a bounded mutual
    repulsion (range 0.8 m, capped at 0.3 m/s, side bias proportional to
    separation), integrated in substeps. Pedestrians ignore the robot.
    """
    if not peds:
        return
    n_sub = max(1, int(round(dt / PED_SUBSTEP)))
    h = dt / n_sub
    n = len(peds)
    for _ in range(n_sub):
        vels = np.zeros((n, 2))
        for i, p in enumerate(peds):
            target = p.waypoints[p.waypoint_idx]
            delta = target - p.position
            dist = float(np.hypot(delta[0], delta[1]))
            if dist < PED_WAYPOINT_TOL:
                p.waypoint_idx = (p.waypoint_idx + 1) % len(p.waypoints)
                target = p.waypoints[p.waypoint_idx]
                delta = target - p.position
                dist = float(np.hypot(delta[0], delta[1]))
            if dist > 1e-9:
                vels[i] = (p.speed / dist) * delta
        if n > 1:
            pos = np.array([p.position for p in peds])
            diff = pos[:, None, :] - pos[None, :, :]
            d = np.sqrt((diff**2).sum(axis=2))
            np.fill_diagonal(d, np.inf)
            mag = np.where(d < PED_REPULSION_RANGE, PED_REPULSION_CAP, 0.0)
            with np.errstate(invalid="ignore"):
                unit = diff / d[:, :, None]
            unit = np.nan_to_num(unit)
            side = np.stack([-unit[:, :, 1], unit[:, :, 0]], axis=2)
            bias = PED_SIDE_BIAS_RATE * np.where(d < PED_REPULSION_RANGE, d, 0.0)
            push_dir = unit + bias[:, :, None] * side
            push_dir /= np.sqrt(1.0 + bias**2)[:, :, None]
            rep = (mag[:, :, None] * push_dir).sum(axis=1)
            norms = np.sqrt((rep**2).sum(axis=1))
            over = norms > PED_REPULSION_CAP
            rep[over] *= (PED_REPULSION_CAP / norms[over])[:, None]
            vels += rep
        for i, p in enumerate(peds):
            p.position = p.position + vels[i] * h


def _snapshot(peds: list[PedSim], prev_pos: np.ndarray, dt: float, t: float) -> list[Pedestrian]:
    """Crowd-facing view with effective velocities over the last period."""
    return [
        Pedestrian(p.id, p.position.copy(), (p.position - prev_pos[i]) / dt, t)
        for i, p in enumerate(peds)
    ]


def run_episode(
    scenario: Scenario, seed: int, mode: str = "full"
) -> tuple[EpisodeTrace, MetricsReport]:
    """Closed-loop episode; terminates on goal, tick limit, or collision."""
    params = scenario.params
    weights = mode_weights(params, mode)
    rng = np.random.default_rng(seed)
    noise_f = _noise_factor(params.process_noise)
    range_std = math.sqrt(params.range_var)
    bearing_std = math.sqrt(params.bearing_var)
    use_bearing = params.measurement_mode == "range-bearing"

    true = scenario.robot_start
    belief = Belief(scenario.robot_start, params.initial_cov.copy())
    peds = [
        PedSim(i, np.array(spec.start, dtype=float), spec.speed,
               np.array(spec.waypoints, dtype=float))
        for i, spec in enumerate(scenario.pedestrians)
    ]
    control = Control(0.0, 0.0)
    trace = EpisodeTrace(start_state=true, dt=params.dt)
    goal = scenario.goal

    for i in range(1, params.tick_limit + 1):
        t_now = i * params.dt
        noise = noise_f @ rng.standard_normal(3)
        true = step(true, control, params.dt, noise)
        prev_pos = np.array([p.position for p in peds]).reshape(len(peds), 2)
        pedestrian_step(peds, params.dt, params)
        ped_pos = np.array([p.position for p in peds]).reshape(len(peds), 2)
        if peds:
            d = np.sqrt(((ped_pos - true.position()[None, :]) ** 2).sum(axis=1))
            min_d = float(d.min())
        else:
            min_d = math.inf

        if not is_footprint_free(scenario.grid, true.position(), params.robot_radius):
            trace.ticks.append(TickRecord(
                t_now, true, belief.mean, current_uncertainty(belief),
                belief.cov.copy(), control, ped_pos, min_d, False, None,
            ))
            trace.status = STATUS_COLLISION
            break

        visible = visible_landmarks(
            scenario.grid, scenario.landmarks, true,
            params.sensor_range, params.sensor_fov,
        )
        nv = len(visible)
        r_noise = range_std * rng.standard_normal(nv)
        b_noise = bearing_std * rng.standard_normal(nv) if use_bearing else None
        meas = measure(true, visible, r_noise, b_noise)

        belief = ekf_predict(belief, control, params.dt, params.process_noise)
        try:
            belief = ekf_update(
                belief, meas, scenario.landmarks, params.range_var, params.bearing_var
            )
        except SingularInnovationError:
            pass

        snapshot = _snapshot(peds, prev_pos, params.dt, t_now)
        # replan from scratch every tick: a carried tail is one step shorter
        # than fresh candidates and the summed cost would always prefer it,
        # locking the loop onto stale plans
        chosen, breakdowns, diag = plan_cycle(
            belief, scenario, snapshot, [], weights, rng
        )
        if chosen is not None:
            control = chosen.controls[0]
            chosen_bd = breakdowns[diag["best_index"]]
        else:
            control = Control(0.0, 0.0)
            chosen_bd = None

        trace.ticks.append(TickRecord(
            t_now, true, belief.mean, current_uncertainty(belief),
            belief.cov.copy(), control, ped_pos, min_d,
            bool(diag.get("cpc_active", False)), chosen_bd,
            float(diag.get("wall_time", 0.0)),
        ))

        if math.hypot(true.x - goal[0], true.y - goal[1]) <= params.goal_tolerance:
            trace.status = STATUS_REACHED
            break

    rmse, tcm, nm = localization_metrics(trace, params.conv_threshold)
    td, md, nt = social_metrics(
        trace, params.comfort_threshold, no_ped_distance=params.working_zone_radius
    )
    vel, length, total_time = efficiency_metrics(trace)
    report = MetricsReport(
        rmse=rmse, tcm=tcm, nm=nm, td=td, md=md, nt=nt,
        vel=vel, length=length, time=total_time,
        reached_goal=trace.status == STATUS_REACHED,
        seed=seed, status=trace.status, mode=mode,
    )
    return trace, report


def localization_metrics(
    trace: EpisodeTrace, conv_threshold: float
) -> tuple[float, float, int]:
    """(RMSE, TCM, NM) from a trace.

    RMSE over planar position error; TCM = first-convergence time over
    total time (1.0 if the trace never converges); NM counts upward
    crossings above 1.5x the threshold after first convergence.
    """
    if not trace.ticks:
        raise ValueError("empty trace")
    errs = [
        (t.true_state.x - t.belief_mean.x) ** 2 + (t.true_state.y - t.belief_mean.y) ** 2
        for t in trace.ticks
    ]
    rmse = math.sqrt(sum(errs) / len(errs))
    total_time = trace.ticks[-1].time
    traces = [t.cov_trace for t in trace.ticks]
    conv_idx = next((i for i, v in enumerate(traces) if v < conv_threshold), None)
    if conv_idx is None:
        return rmse, 1.0, 0
    tcm = trace.ticks[conv_idx].time / total_time
    band = 1.5 * conv_threshold
    nm = 0
    above = False
    for v in traces[conv_idx:]:
        if not above and v > band:
            nm += 1
            above = True
        elif above and v < conv_threshold:
            above = False
    return rmse, tcm, nm


def social_metrics(
    trace: EpisodeTrace, comfort_threshold: float, no_ped_distance: float = 8.0
) -> tuple[float, float, int]:
    """(TD, MD, NT) from per-tick minimum robot-pedestrian distances.

    A run that starts below the threshold counts as one crossing. With no
    pedestrians anywhere, MD reports ``no_ped_distance``.
    """
    if not trace.ticks:
        raise ValueError("empty trace")
    ds = [t.min_ped_distance for t in trace.ticks]
    below = [d < comfort_threshold for d in ds]
    td = sum(below) / len(ds)
    finite = [d for d in ds if math.isfinite(d)]
    md = min(finite) if finite else no_ped_distance
    nt = 0
    prev = False
    for b in below:
        if b and not prev:
            nt += 1
        prev = b
    return td, md, nt


def efficiency_metrics(trace: EpisodeTrace) -> tuple[float, float, float]:
    """(Vel, Length, Time); the path starts at the episode start state."""
    if not trace.ticks:
        raise ValueError("empty trace")
    pts = [trace.start_state.position()] + [t.true_state.position() for t in trace.ticks]
    length = float(
        sum(np.linalg.norm(b - a) for a, b in zip(pts[:-1], pts[1:]))
    )
    total_time = trace.ticks[-1].time
    vel = length / total_time if total_time > 0 else 0.0
    return vel, length, total_time


def _state_list(s: RobotState) -> list[float]:
    return [s.x, s.y, s.theta]


def breakdown_to_dict(bd: CostBreakdown | None) -> dict | None:
    if bd is None:
        return None
    return {
        "distance": bd.distance_term,
        "crowd": bd.crowd_term,
        "cpc": bd.cpc_term,
        "ell": bd.ell,
        "total": bd.total,
        "cpc_active": bd.cpc_active,
        "zeta": bd.zeta,
    }


def tick_to_dict(t: TickRecord) -> dict:
    # plan_time is wall-clock diagnostics and stays out of the serialized
    # form, which must replay bit-for-bit from (scenario, seed)
    return {
        "time": t.time,
        "true_state": _state_list(t.true_state),
        "belief_mean": _state_list(t.belief_mean),
        "cov_trace": t.cov_trace,
        "belief_cov": np.asarray(t.belief_cov).tolist(),
        "control": [t.control.v, t.control.omega],
        "ped_positions": np.asarray(t.ped_positions).tolist(),
        "min_ped_distance": t.min_ped_distance if math.isfinite(t.min_ped_distance) else None,
        "cpc_active": t.cpc_active,
        "breakdown": breakdown_to_dict(t.breakdown),
    }


def trace_to_jsonl(trace: EpisodeTrace) -> str:
    """One JSON record per tick."""
    return "\n".join(json.dumps(tick_to_dict(t)) for t in trace.ticks) + "\n"


def tick_from_dict(d: dict) -> TickRecord:
    bd = d.get("breakdown")
    breakdown = None
    if bd is not None:
        breakdown = CostBreakdown(
            distance_term=bd["distance"], crowd_term=bd["crowd"],
            cpc_term=bd["cpc"], ell=bd["ell"], total=bd["total"],
            cpc_active=bd["cpc_active"], zeta=bd.get("zeta"),
        )
    min_d = d["min_ped_distance"]
    return TickRecord(
        time=d["time"],
        true_state=RobotState(*d["true_state"]),
        belief_mean=RobotState(*d["belief_mean"]),
        cov_trace=d["cov_trace"],
        belief_cov=np.asarray(d["belief_cov"], dtype=float),
        control=Control(*d["control"]),
        ped_positions=np.asarray(d["ped_positions"], dtype=float).reshape(-1, 2),
        min_ped_distance=math.inf if min_d is None else float(min_d),
        cpc_active=d["cpc_active"],
        breakdown=breakdown,
        plan_time=d.get("plan_time", 0.0),
    )


def trace_from_jsonl(
    text: str, start_state: RobotState | None = None, dt: float = 0.5,
    status: str = STATUS_TICK_LIMIT,
) -> EpisodeTrace:
    ticks = [tick_from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
    if start_state is None and ticks:
        start_state = ticks[0].true_state
    trace = EpisodeTrace(start_state=start_state, dt=dt, ticks=ticks, status=status)
    return trace


def metrics_to_dict(report: MetricsReport, trace: EpisodeTrace | None = None) -> dict:
    out = {
        "rmse": report.rmse,
        "tcm": report.tcm,
        "nm": report.nm,
        "td": report.td,
        "md": report.md,
        "nt": report.nt,
        "vel": report.vel,
        "length": report.length,
        "time": report.time,
        "reached_goal": report.reached_goal,
        "seed": report.seed,
        "status": report.status,
        "mode": report.mode,
    }
    if trace is not None:
        out["start_state"] = _state_list(trace.start_state)
        out["dt"] = trace.dt
        out["ticks"] = len(trace.ticks)
    return out
