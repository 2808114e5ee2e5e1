"""Kinodynamic tree planner: primitive steering, RRT*-style growth,
candidate extraction, and between-cycle pruning.

Steering picks from a fixed (v, omega) primitive grid, so every edge is a
constant-twist arc of exactly one planning period and candidates are
kinematically feasible by construction. Tree edges therefore line up with
the costing horizon: a K-edge chain is a K-step candidate.

Rewiring is leaf-only with state replacement: a leaf is re-parented when a
fresh steer from the new node lands within a small pose tolerance of it at
lower root cost, and the leaf's state snaps to the actual steer endpoint so
the arc-endpoint invariant stays exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dynamics import Control, RobotState, angle_diff, step, wrap_angle, wrap_angle_array
from .world import Scenario, footprint_free_mask

ARC_SUBSTEPS = 10
# choose-parent: a neighbor counts as reaching the provisional endpoint
# only if its best steer lands within this distance of it
CONNECT_TOL = 0.25           # [m]
REWIRE_POS_TOL = 0.2         # [m]
REWIRE_ANG_TOL = 0.4         # [rad]
MAX_NEIGHBORS = 10
PRUNE_POS_TOL = 0.25         # [m]
PRUNE_ANG_TOL = 0.35         # [rad]


class PrimitiveSet:
    """Precomputed body-frame arcs for the steering primitive grid.

    Primitives are ordered by (|omega| ascending, positive omega first,
    v ascending); selections use the first minimum, which realizes the
    documented tie-breaks.
    """

    def __init__(self, v_max: float, omega_max: float, dt: float) -> None:
        speeds = [0.3 * v_max, 0.6 * v_max, v_max]
        omegas = [0.0, 0.5 * omega_max, -0.5 * omega_max, omega_max, -omega_max]
        controls = [(v, w) for w in omegas for v in speeds]
        self.dt = dt
        self.controls = np.array(controls, dtype=float)        # (m, 2)
        self.lengths = self.controls[:, 0] * dt                # arc length = v*dt
        ts = dt * np.arange(ARC_SUBSTEPS + 1) / ARC_SUBSTEPS   # (s,)
        m = len(controls)
        xy = np.zeros((m, ARC_SUBSTEPS + 1, 2))
        for i, (v, w) in enumerate(controls):
            if abs(w) <= 1e-12:
                xy[i, :, 0] = v * ts
            else:
                xy[i, :, 0] = (v / w) * np.sin(w * ts)
                xy[i, :, 1] = (v / w) * (1.0 - np.cos(w * ts))
        self.local_xy = xy                                     # (m, s, 2)
        self.local_theta = self.controls[:, 1][:, None] * ts[None, :]
        self.end_local = xy[:, -1, :]                          # (m, 2)

    def endpoints_from(self, states: np.ndarray) -> np.ndarray:
        """World endpoints of every primitive from each pose; (p, m, 2)."""
        states = np.atleast_2d(states)
        ct, st = np.cos(states[:, 2]), np.sin(states[:, 2])
        ex, ey = self.end_local[:, 0], self.end_local[:, 1]
        wx = states[:, 0][:, None] + ct[:, None] * ex[None, :] - st[:, None] * ey[None, :]
        wy = states[:, 1][:, None] + st[:, None] * ex[None, :] + ct[:, None] * ey[None, :]
        return np.stack([wx, wy], axis=-1)

    def best_toward(
        self, states: np.ndarray, target: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Per pose, the primitive whose endpoint is closest to ``target``.

        Returns (indices (p,), endpoints (p, 3)).
        """
        states = np.atleast_2d(states)
        ends = self.endpoints_from(states)
        d2 = ((ends - np.asarray(target, dtype=float)[None, None, :]) ** 2).sum(axis=2)
        idx = d2.argmin(axis=1)
        rows = np.arange(len(states))
        theta = wrap_angle_array(states[:, 2] + self.controls[idx, 1] * self.dt)
        out = np.column_stack([ends[rows, idx], theta])
        return idx, out

    def best_toward_each(
        self, state: np.ndarray, targets: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """From one pose, best primitive toward each target; (t,), (t, 3)."""
        ends = self.endpoints_from(state[None, :])[0]           # (m, 2)
        targets = np.atleast_2d(targets)
        d2 = ((ends[None, :, :] - targets[:, None, :]) ** 2).sum(axis=2)
        idx = d2.argmin(axis=1)
        theta = wrap_angle_array(state[2] + self.controls[idx, 1] * self.dt)
        out = np.column_stack([ends[idx], theta])
        return idx, out

    def arc_world(self, state: np.ndarray, prim: int) -> np.ndarray:
        """(s, 3) world-frame arc of primitive ``prim`` from ``state``."""
        ct, st = math.cos(state[2]), math.sin(state[2])
        loc = self.local_xy[prim]
        arc = np.empty((loc.shape[0], 3))
        arc[:, 0] = state[0] + ct * loc[:, 0] - st * loc[:, 1]
        arc[:, 1] = state[1] + st * loc[:, 0] + ct * loc[:, 1]
        arc[:, 2] = wrap_angle_array(state[2] + self.local_theta[prim])
        return arc

    def arcs_world(self, state: np.ndarray) -> np.ndarray:
        """(m, s, 3) world-frame arcs of every primitive from ``state``."""
        ct, st = math.cos(state[2]), math.sin(state[2])
        loc = self.local_xy
        arcs = np.empty(loc.shape[:2] + (3,))
        arcs[..., 0] = state[0] + ct * loc[..., 0] - st * loc[..., 1]
        arcs[..., 1] = state[1] + st * loc[..., 0] + ct * loc[..., 1]
        arcs[..., 2] = wrap_angle_array(state[2] + self.local_theta)
        return arcs


@lru_cache(maxsize=32)
def _primitive_set(v_max: float, omega_max: float, dt: float) -> PrimitiveSet:
    return PrimitiveSet(v_max, omega_max, dt)


def steer(
    from_state: RobotState,
    to: np.ndarray,
    dt: float,
    v_max: float = 1.0,
    omega_max: float = 1.0,
) -> tuple[RobotState, Control, np.ndarray]:
    """Best primitive toward ``to``: (endpoint state, control, arc).

    Ties in endpoint distance break by smaller |omega|, then positive omega,
    then smaller v.
    """
    prim = _primitive_set(v_max, omega_max, dt)
    arr = from_state.as_array()
    idx, ends = prim.best_toward(arr[None, :], np.asarray(to, dtype=float))
    i = int(idx[0])
    arc = prim.arc_world(arr, i)
    state = RobotState(float(ends[0, 0]), float(ends[0, 1]), float(ends[0, 2]))
    return state, Control(*prim.controls[i]), arc


def _pred_array(predicted) -> np.ndarray:
    """Normalize per-step pedestrian predictions to a (K+1, P, 2) array."""
    if predicted is None:
        return np.zeros((1, 0, 2))
    if isinstance(predicted, np.ndarray):
        return predicted
    if not predicted or not predicted[0]:
        return np.zeros((max(len(predicted), 1), 0, 2))
    return np.array(
        [[p.position for p in step_peds] for step_peds in predicted], dtype=float
    )


def _arc_clear(
    arc: np.ndarray,
    time_offset: float,
    scenario: Scenario,
    pred_xy: np.ndarray,
    robot_radius: float,
    wall_margin: float = 0.0,
) -> bool:
    if not footprint_free_mask(
        scenario.grid, arc[:, :2], robot_radius + wall_margin
    ).all():
        return False
    n_ped = pred_xy.shape[1]
    if n_ped == 0:
        return True
    dt = scenario.params.dt
    n_steps = pred_xy.shape[0] - 1
    ts = time_offset + dt * np.arange(arc.shape[0]) / (arc.shape[0] - 1)
    s = np.clip(ts / dt, 0.0, float(n_steps))
    k0 = np.minimum(s.astype(int), max(n_steps - 1, 0))
    frac = (s - k0)[:, None, None]
    pos = (1.0 - frac) * pred_xy[k0] + frac * pred_xy[np.minimum(k0 + 1, n_steps)]
    d2 = ((pos - arc[:, None, :2]) ** 2).sum(axis=2)
    clearance = robot_radius + scenario.params.pedestrian_radius
    return bool(d2.min() > clearance * clearance)


def _fan_clear(
    arcs: np.ndarray,
    time_offset: float,
    scenario: Scenario,
    pred_xy: np.ndarray,
    robot_radius: float,
    wall_margin: float = 0.0,
) -> np.ndarray:
    """Per-arc _arc_clear over an (m, s, 3) arc stack; returns (m,) bools."""
    m, s = arcs.shape[:2]
    ok = footprint_free_mask(
        scenario.grid, arcs[..., :2].reshape(-1, 2), robot_radius + wall_margin
    ).reshape(m, s).all(axis=1)
    n_ped = pred_xy.shape[1]
    if n_ped == 0 or not ok.any():
        return ok
    dt = scenario.params.dt
    n_steps = pred_xy.shape[0] - 1
    ts = time_offset + dt * np.arange(s) / (s - 1)
    si = np.clip(ts / dt, 0.0, float(n_steps))
    k0 = np.minimum(si.astype(int), max(n_steps - 1, 0))
    frac = (si - k0)[:, None, None]
    pos = (1.0 - frac) * pred_xy[k0] + frac * pred_xy[np.minimum(k0 + 1, n_steps)]
    d2 = ((pos[None, :, :, :] - arcs[:, :, None, :2]) ** 2).sum(axis=3)
    clearance = robot_radius + scenario.params.pedestrian_radius
    return ok & (d2.min(axis=(1, 2)) > clearance * clearance)


def obstacle_free(
    arc: np.ndarray,
    time_offset: float,
    scenario: Scenario,
    predicted,
    robot_radius: float,
    wall_margin: float = 0.0,
) -> bool:
    """Arc clear of occupied cells and of predicted pedestrians.

    Pedestrian positions are linearly interpolated between horizon steps at
    each arc sample's absolute time (held at the last step beyond the
    horizon); clearance must stay strictly above robot + pedestrian radius.
    Walls are checked at robot_radius + wall_margin; pedestrians are not
    inflated, they yield on their own.
    """
    if arc.shape[0] == 0:
        raise ValueError("obstacle_free needs a nonempty arc")
    return _arc_clear(
        arc, time_offset, scenario, _pred_array(predicted), robot_radius, wall_margin
    )


def wall_margin_from(root: RobotState, scenario: Scenario) -> float:
    """Wall inflation for this cycle: the largest fraction of plan_margin
    at which the root still has at least one wall-clear primitive arc.

    Demanding the full margin right next to a wall rejects every edge out
    of the root and starves the tree; dropping straight to zero lets plans
    ride the obstacle boundary.  The graded fallback keeps the tree growing
    while it pulls back toward fully inflated clearance.
    """
    params = scenario.params
    if params.plan_margin <= 0.0:
        return 0.0
    prim = _primitive_set(params.v_max, params.omega_max, params.dt)
    pts = prim.arcs_world(root.as_array())[..., :2].reshape(-1, 2)
    m, s = len(prim.controls), ARC_SUBSTEPS + 1
    for frac in (1.0, 0.75, 0.5, 0.25):
        margin = frac * params.plan_margin
        radius = params.robot_radius + margin
        free = footprint_free_mask(scenario.grid, pts, radius).reshape(m, s)
        if free.all(axis=1).any():
            return margin
    return 0.0


class Tree:
    """Array-backed planning tree; node 0 is the root."""

    def __init__(self, capacity: int, root: RobotState, dt: float = 0.5) -> None:
        self.dt = dt
        self.states = np.zeros((capacity, 3))
        self.parent = np.full(capacity, -1, dtype=np.int64)
        self.cost = np.zeros(capacity)
        self.depth = np.zeros(capacity, dtype=np.int64)
        self.children = np.zeros(capacity, dtype=np.int64)
        self.controls = np.zeros((capacity, 2))
        self.arcs: list[np.ndarray | None] = [None] * capacity
        self.states[0] = root.as_array()
        self.n = 1

    def add(
        self,
        state: np.ndarray,
        parent: int,
        control: np.ndarray,
        arc: np.ndarray,
        cost: float,
    ) -> int:
        i = self.n
        self.states[i] = state
        self.parent[i] = parent
        self.cost[i] = cost
        self.depth[i] = self.depth[parent] + 1
        self.controls[i] = control
        self.arcs[i] = arc
        self.children[parent] += 1
        self.n += 1
        return i

    def node_state(self, i: int) -> RobotState:
        return RobotState.from_array(self.states[i])


@dataclass(eq=False)
class TrajectoryCandidate:
    """K-step chain: states[0] is the root pose, controls[k] drives
    states[k] -> states[k+1], arcs[k] samples that transition."""

    states: list[RobotState]
    controls: list[Control]
    arcs: list[np.ndarray]
    cost: float

    @property
    def steps(self) -> list[tuple[RobotState, Control]]:
        return list(zip(self.states[:-1], self.controls))

    def __len__(self) -> int:
        return len(self.controls)


def make_tail(cand: TrajectoryCandidate, dt: float) -> TrajectoryCandidate:
    """Candidate minus its first (consumed) step, root cost rebased."""
    return TrajectoryCandidate(
        cand.states[1:],
        cand.controls[1:],
        cand.arcs[1:],
        cand.cost - abs(cand.controls[0].v) * dt,
    )


def grow_tree(
    root: RobotState,
    scenario: Scenario,
    predicted,
    budget: int,
    rng: np.random.Generator,
) -> Tree:
    """Budgeted RRT*-style growth from ``root``.

    Sampling is uniform over free cells with goal-bias probability
    ``goal_bias``; nearest/near queries use Euclidean position distance.
    RNG draw order per iteration is fixed (bias draw, then cell index and
    in-cell offset), so identical (scenario, seed, budget) give identical
    trees.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    params = scenario.params
    prim = _primitive_set(params.v_max, params.omega_max, params.dt)
    grid = scenario.grid
    free = grid.free_cells()
    res = grid.resolution
    pred_xy = _pred_array(predicted)
    tree = Tree(budget + 2, root, params.dt)
    r2_near = params.r_near * params.r_near
    dt = params.dt
    margin = wall_margin_from(root, scenario)
    # nodes whose whole primitive fan is blocked or duplicated; walls and
    # per-depth pedestrian predictions are fixed for the cycle and nodes are
    # never removed, so the verdict cannot change within this growth
    exhausted = np.zeros(budget + 2, dtype=bool)

    for _ in range(budget):
        u = rng.random()
        if u < params.goal_bias:
            target = scenario.goal
        else:
            ci = int(rng.integers(0, len(free)))
            off = rng.random(2)
            target = (free[ci] + off) * res
        n = tree.n
        xy = tree.states[:n, :2]
        d2_sample = ((xy - target[None, :]) ** 2).sum(axis=1)
        nearest = int(d2_sample.argmin())

        _, ends = prim.best_toward(tree.states[nearest][None, :], target)
        e = ends[0]
        d2_new = ((xy - e[None, :2]) ** 2).sum(axis=1)
        parent = -1
        new_i = -1
        if d2_new.min() >= 1e-12:
            near_sel = np.nonzero(d2_new <= r2_near)[0]
            if len(near_sel) > MAX_NEIGHBORS:
                order = np.lexsort((near_sel, d2_new[near_sel]))
                near_sel = near_sel[order[:MAX_NEIGHBORS]]

            prims, ends_all = prim.best_toward(tree.states[near_sel], e[:2])
            reach = ((ends_all[:, :2] - e[None, :2]) ** 2).sum(axis=1) <= CONNECT_TOL**2
            costs = tree.cost[near_sel] + prim.lengths[prims]
            order = np.lexsort((near_sel, costs))
            for oi in order:
                if not reach[oi]:
                    continue
                z = int(near_sel[oi])
                arc = prim.arc_world(tree.states[z], int(prims[oi]))
                if _arc_clear(
                    arc, tree.depth[z] * dt, scenario, pred_xy,
                    params.robot_radius, margin,
                ):
                    parent = z
                    new_i = tree.add(
                        ends_all[oi], z, prim.controls[prims[oi]], arc, float(costs[oi])
                    )
                    break

        if parent < 0:
            # the greedy endpoint is blocked or already in the tree; near a
            # wall that is the common case, so extend the nearest node with
            # its best clear unused primitive instead of wasting the draw
            if exhausted[nearest]:
                continue
            arcs_n = prim.arcs_world(tree.states[nearest])
            clear = _fan_clear(
                arcs_n, tree.depth[nearest] * dt, scenario, pred_xy,
                params.robot_radius, margin,
            )
            ends_n = arcs_n[:, -1, :2]
            d2_dup = ((ends_n[:, None, :] - xy[None, :, :]) ** 2).sum(axis=2)
            usable = clear & (d2_dup.min(axis=1) >= 1e-12)
            if not usable.any():
                exhausted[nearest] = True
                continue
            d2_t = ((ends_n - target[None, :]) ** 2).sum(axis=1)
            pi = int(np.flatnonzero(usable)[d2_t[usable].argmin()])
            theta = wrap_angle(tree.states[nearest][2] + prim.controls[pi, 1] * dt)
            state = np.array([ends_n[pi, 0], ends_n[pi, 1], theta])
            cost = float(tree.cost[nearest] + prim.lengths[pi])
            tree.add(state, nearest, prim.controls[pi], arcs_n[pi], cost)
            continue      # fallback nodes skip rewiring

        # rewire: leaves in the neighborhood that the new node reaches
        # cheaper get re-parented (state snapped to the actual endpoint)
        cand_m = near_sel[(near_sel != parent) & (near_sel != 0)]
        if len(cand_m) == 0:
            continue
        cand_m = cand_m[tree.children[cand_m] == 0]
        if len(cand_m) == 0:
            continue
        prims2, ends2 = prim.best_toward_each(tree.states[new_i], tree.states[cand_m, :2])
        new_costs = tree.cost[new_i] + prim.lengths[prims2]
        pos_ok = ((ends2[:, :2] - tree.states[cand_m, :2]) ** 2).sum(axis=1) <= REWIRE_POS_TOL**2
        ang = np.abs(wrap_angle_array(ends2[:, 2] - tree.states[cand_m, 2]))
        ok = pos_ok & (ang <= REWIRE_ANG_TOL) & (new_costs + 1e-12 < tree.cost[cand_m])
        for j in np.nonzero(ok)[0]:
            m = int(cand_m[j])
            arc2 = prim.arc_world(tree.states[new_i], int(prims2[j]))
            if not _arc_clear(
                arc2, tree.depth[new_i] * dt, scenario, pred_xy,
                params.robot_radius, margin,
            ):
                continue
            tree.children[tree.parent[m]] -= 1
            tree.parent[m] = new_i
            tree.children[new_i] += 1
            tree.cost[m] = new_costs[j]
            tree.depth[m] = tree.depth[new_i] + 1
            tree.states[m] = ends2[j]
            tree.controls[m] = prim.controls[prims2[j]]
            tree.arcs[m] = arc2
    return tree


def find_path_candidates(
    tree: Tree, horizon_k: int, max_candidates: int
) -> list[TrajectoryCandidate]:
    """Root-to-node chains of exactly K edges (deepest prefix fallback).

    Capped at ``max_candidates`` by ascending cost-from-root; duplicates
    (identical end states) collapse. Every candidate is re-validated by
    re-integrating its controls.
    """
    if horizon_k < 1:
        raise ValueError("horizon_k must be >= 1")
    depths = tree.depth[: tree.n]
    if tree.n <= 1 or depths.max() == 0:
        return []
    target_depth = horizon_k if (depths == horizon_k).any() else int(depths.max())
    idx = np.nonzero(depths == target_depth)[0]
    order = np.lexsort((idx, tree.cost[idx]))
    out: list[TrajectoryCandidate] = []
    seen: set[bytes] = set()
    for oi in order:
        if len(out) >= max_candidates:
            break
        end = int(idx[oi])
        key = np.round(tree.states[end], 9).tobytes()
        if key in seen:
            continue
        seen.add(key)
        chain = []
        node = end
        while node != -1:
            chain.append(node)
            node = int(tree.parent[node])
        chain.reverse()
        states = [tree.node_state(i) for i in chain]
        controls = [Control(*tree.controls[i]) for i in chain[1:]]
        arcs = [tree.arcs[i] for i in chain[1:]]
        cand = TrajectoryCandidate(states, controls, arcs, float(tree.cost[end]))
        _revalidate(cand, tree.dt)
        out.append(cand)
    return out


def _revalidate(cand: TrajectoryCandidate, dt: float) -> None:
    for k, (state, control) in enumerate(cand.steps):
        nxt = step(state, control, dt)
        tgt = cand.states[k + 1]
        if (
            abs(nxt.x - tgt.x) > 1e-9
            or abs(nxt.y - tgt.y) > 1e-9
            or abs(angle_diff(nxt.theta, tgt.theta)) > 1e-9
        ):
            raise RuntimeError(f"candidate re-integration failed at step {k + 1}")


def prune_unreachable(
    candidates: list[TrajectoryCandidate],
    current_state: RobotState,
    predicted,
    scenario: Scenario,
) -> list[TrajectoryCandidate]:
    """Drop carried candidates that no longer start at the robot or that
    collide against the latest pedestrian predictions."""
    pred_xy = _pred_array(predicted)
    params = scenario.params
    margin = wall_margin_from(current_state, scenario)
    kept = []
    for cand in candidates:
        if not cand.controls:
            continue
        root = cand.states[0]
        if math.hypot(root.x - current_state.x, root.y - current_state.y) > PRUNE_POS_TOL:
            continue
        if abs(angle_diff(root.theta, current_state.theta)) > PRUNE_ANG_TOL:
            continue
        clear = all(
            _arc_clear(arc, k * params.dt, scenario, pred_xy, params.robot_radius, margin)
            for k, arc in enumerate(cand.arcs)
        )
        if clear:
            kept.append(cand)
    return kept
