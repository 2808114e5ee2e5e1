"""EKF localization and closed-loop belief propagation along candidates.

The online filter is a plain EKF over (x, y, theta) with landmark range or
range-bearing measurements. For planning, each candidate trajectory gets a
predicted uncertainty envelope: Sigma_k follows the EKF recursion linearized
along the nominal states, and Lambda_k tracks how far the filter mean itself
may wander from the nominal under LQR feedback,

    Lambda_k = (A - B K_k) Lambda_{k-1} (A - B K_k)^T + L_k C_k Sigmabar_k,

so Lambda_k + Sigma_k is the predicted distribution of the true state about
the nominal. The CPC score is the summed trace of that distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .dynamics import (
    Control,
    Measurement,
    RobotState,
    measurement_jacobian,
    motion_jacobians,
    step,
    wrap_angle,
)
from .world import Landmark, Scenario, visible_landmarks

if TYPE_CHECKING:
    from .planner import TrajectoryCandidate


class SingularInnovationError(RuntimeError):
    """Innovation covariance was not invertible; caller should skip the update."""


@dataclass(eq=False)
class Belief:
    mean: RobotState
    cov: np.ndarray    # 3x3, symmetric PSD


@dataclass(eq=False)
class GainSchedule:
    gains: list[np.ndarray]         # K entries, each 2x3

    def __len__(self) -> int:
        return len(self.gains)


@dataclass(eq=False)
class UncertaintyEnvelope:
    nominal: list[RobotState]
    sigma: list[np.ndarray]         # 3x3 per step
    lam: list[np.ndarray]           # 3x3 per step, lam[0-index] is Lambda_1
    visible_counts: list[int]

    def __len__(self) -> int:
        return len(self.nominal)


def _symmetrize_psd(mat: np.ndarray) -> np.ndarray:
    sym = 0.5 * (mat + mat.T)
    vals, vecs = np.linalg.eigh(sym)
    if vals[0] < 0.0:
        sym = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
        sym = 0.5 * (sym + sym.T)
    return sym


def ekf_predict(
    belief: Belief, control: Control, dt: float, process_noise: np.ndarray
) -> Belief:
    """Mean through the noise-free step; Sigma <- A Sigma A^T + M'."""
    A, _ = motion_jacobians(belief.mean, control, dt)
    mean = step(belief.mean, control, dt)
    cov = _symmetrize_psd(A @ belief.cov @ A.T + process_noise)
    return Belief(mean, cov)


def _noise_block(n: int, mode: str, range_var: float, bearing_var: float) -> np.ndarray:
    if mode == "range-bearing":
        return np.diag(np.tile([range_var, bearing_var], n))
    return np.diag(np.full(n, range_var))


def ekf_update(
    belief: Belief,
    meas: Measurement,
    landmarks: list[Landmark],
    range_var: float,
    bearing_var: float = 0.0,
) -> Belief:
    """Standard Kalman correction; Sigma <- Sigmabar - L C Sigmabar.

    An empty measurement returns the belief unchanged. Bearing residuals are
    angle-normalized.
    """
    n = len(meas)
    if n == 0:
        return belief
    by_id = {lm.id: lm for lm in landmarks}
    used = [by_id[int(i)] for i in meas.ids]
    mode = "range-bearing" if meas.bearings is not None else "range-only"
    rows_per = 2 if mode == "range-bearing" else 1

    C = measurement_jacobian(belief.mean, used, mode)
    N = _noise_block(n, mode, range_var, bearing_var)
    innov = np.empty(rows_per * n)
    mx, my, mt = belief.mean.x, belief.mean.y, belief.mean.theta
    for i, lm in enumerate(used):
        dx, dy = lm.x - mx, lm.y - my
        innov[rows_per * i] = meas.ranges[i] - math.hypot(dx, dy)
        if rows_per == 2:
            innov[rows_per * i + 1] = wrap_angle(
                meas.bearings[i] - (math.atan2(dy, dx) - mt)
            )
    sigmabar = belief.cov
    S = C @ sigmabar @ C.T + N
    try:
        L = np.linalg.solve(S.T, (sigmabar @ C.T).T).T
    except np.linalg.LinAlgError as exc:
        raise SingularInnovationError(str(exc)) from exc
    delta = L @ innov
    mean = RobotState(mx + delta[0], my + delta[1], wrap_angle(mt + delta[2]))
    cov = _symmetrize_psd(sigmabar - L @ C @ sigmabar)
    return Belief(mean, cov)


def current_uncertainty(belief: Belief) -> float:
    """Trace of the belief covariance (the CPC trigger quantity)."""
    return float(np.trace(belief.cov))


def feedback_gains(
    candidate: "TrajectoryCandidate",
    dt: float,
    q: np.ndarray,
    r: np.ndarray,
) -> GainSchedule:
    """Finite-horizon discrete LQR gains along the candidate's nominals.

    Backward Riccati recursion with terminal cost Q; gain k multiplies the
    error entering transition k (state k-1 -> state k).
    """
    steps = candidate.steps
    if not steps:
        raise ValueError("feedback_gains needs a nonempty candidate")
    gains: list[np.ndarray | None] = [None] * len(steps)
    P = q.copy()
    for k in range(len(steps) - 1, -1, -1):
        state, control = steps[k]
        A, B = motion_jacobians(state, control, dt)
        K = np.linalg.solve(r + B.T @ P @ B, B.T @ P @ A)
        P = q + A.T @ P @ (A - B @ K)
        P = 0.5 * (P + P.T)
        gains[k] = K
    return GainSchedule(gains)  # type: ignore[arg-type]


def propagate_uncertainty(
    candidate: "TrajectoryCandidate",
    start_belief: Belief,
    scenario: Scenario,
    gains: GainSchedule,
    visibility_cache: dict | None = None,
) -> UncertaintyEnvelope:
    """Predict (Sigma_k, Lambda_k) along a candidate, Lambda_0 = 0.

    Visibility is decided at the nominal states. ``visibility_cache`` may be
    shared across candidates of one cycle (pure pose -> landmark-list memo).
    """
    steps = candidate.steps
    if steps:
        root = steps[0][0]
        err = math.hypot(root.x - start_belief.mean.x, root.y - start_belief.mean.y)
        if err > 1e-6:
            raise ValueError(
                f"candidate root deviates {err:.2e} m from the belief mean"
            )
    params = scenario.params
    sigma = start_belief.cov
    lam = np.zeros((3, 3))
    out = UncertaintyEnvelope([], [], [], [])
    for k, (state, control) in enumerate(steps):
        A, B = motion_jacobians(state, control, params.dt)
        nominal = step(state, control, params.dt)
        sigmabar = A @ sigma @ A.T + params.process_noise

        if visibility_cache is not None:
            key = (round(nominal.x, 9), round(nominal.y, 9), round(nominal.theta, 9))
            visible = visibility_cache.get(key)
            if visible is None:
                visible = visible_landmarks(
                    scenario.grid, scenario.landmarks, nominal,
                    params.sensor_range, params.sensor_fov,
                )
                visibility_cache[key] = visible
        else:
            visible = visible_landmarks(
                scenario.grid, scenario.landmarks, nominal,
                params.sensor_range, params.sensor_fov,
            )

        if visible:
            C = measurement_jacobian(nominal, visible, params.measurement_mode)
            N = _noise_block(
                len(visible), params.measurement_mode,
                params.range_var, params.bearing_var,
            )
            S = C @ sigmabar @ C.T + N
            L = np.linalg.solve(S.T, (sigmabar @ C.T).T).T
            correction = L @ C @ sigmabar
            sigma = _symmetrize_psd(sigmabar - correction)
        else:
            correction = np.zeros((3, 3))
            sigma = _symmetrize_psd(sigmabar)

        closed = A - B @ gains.gains[k]
        lam = _symmetrize_psd(closed @ lam @ closed.T + correction)

        out.nominal.append(nominal)
        out.sigma.append(sigma)
        out.lam.append(lam)
        out.visible_counts.append(len(visible))
    return out


def cpc_score(envelope: UncertaintyEnvelope) -> float:
    """zeta = sum_k Trace(Lambda_k + Sigma_k)."""
    return float(
        sum(np.trace(s) + np.trace(l) for s, l in zip(envelope.sigma, envelope.lam))
    )
