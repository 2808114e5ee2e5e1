"""Unicycle motion model: exact-arc stepping, landmark measurements, and
analytic Jacobians.

State is (x, y, theta) in world frame, control is (v, omega) held constant
over a step. Integration is the closed-form constant-twist arc; a straight
branch takes over when |omega| falls below ``OMEGA_EPS`` to avoid division
blow-up, using the omega -> 0 limit so the two branches agree at the seam.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

if TYPE_CHECKING:
    from .world import Landmark

TAU = 2.0 * math.pi

# below this |omega| the arc formulas lose precision; use the straight limit
OMEGA_EPS = 1e-6


class Control(NamedTuple):
    v: float
    omega: float


@dataclass
class RobotState:
    x: float
    y: float
    theta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=float)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "RobotState":
        return cls(float(arr[0]), float(arr[1]), wrap_angle(float(arr[2])))

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    return math.pi - (math.pi - a) % TAU


def wrap_angle_array(a: np.ndarray) -> np.ndarray:
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), TAU)


def angle_diff(a: float, b: float) -> float:
    """Signed smallest difference a - b, in (-pi, pi]."""
    return wrap_angle(a - b)


def step(
    state: RobotState,
    control: Control,
    dt: float,
    noise: np.ndarray | None = None,
) -> RobotState:
    """Advance one step along the constant-twist arc.

    ``noise`` is an additive (x, y, theta) disturbance applied after the
    deterministic motion; pass None for the nominal step.
    """
    v, omega = float(control[0]), float(control[1])
    x, y, theta = state.x, state.y, state.theta
    if abs(omega) <= OMEGA_EPS:
        nx = x + v * dt * math.cos(theta)
        ny = y + v * dt * math.sin(theta)
    else:
        r = v / omega
        nx = x + r * (math.sin(theta + omega * dt) - math.sin(theta))
        ny = y - r * (math.cos(theta + omega * dt) - math.cos(theta))
    ntheta = theta + omega * dt
    if noise is not None:
        nx += float(noise[0])
        ny += float(noise[1])
        ntheta += float(noise[2])
    return RobotState(nx, ny, wrap_angle(ntheta))


@dataclass(eq=False)
class Measurement:
    ids: np.ndarray                 # (n,) int landmark ids
    ranges: np.ndarray              # (n,)
    bearings: np.ndarray | None     # (n,) or None in range-only mode

    def __len__(self) -> int:
        return len(self.ids)


def measure(
    true_state: RobotState,
    visible: list[Landmark],
    range_noise: np.ndarray | None = None,
    bearing_noise: np.ndarray | None = None,
) -> Measurement:
    """Range (and optionally bearing) to each visible landmark.

    Pass bearing_noise=None for range-only measurements; noise arrays carry
    one pre-sampled value per landmark.
    """
    n = len(visible)
    ids = np.array([lm.id for lm in visible], dtype=int)
    ranges = np.empty(n)
    bearings = np.empty(n) if bearing_noise is not None else None
    for i, lm in enumerate(visible):
        dx, dy = lm.x - true_state.x, lm.y - true_state.y
        ranges[i] = math.hypot(dx, dy)
        if range_noise is not None:
            ranges[i] += float(range_noise[i])
        if bearings is not None:
            b = math.atan2(dy, dx) - true_state.theta + float(bearing_noise[i])
            bearings[i] = wrap_angle(b)
    return Measurement(ids, ranges, bearings)


def measurement_jacobian(
    state: RobotState, visible: list[Landmark], mode: str = "range-bearing"
) -> np.ndarray:
    """Stacked measurement Jacobian C at ``state``; rows per landmark."""
    if not visible:
        raise ValueError("measurement_jacobian needs at least one visible landmark")
    rows_per = 2 if mode == "range-bearing" else 1
    C = np.zeros((rows_per * len(visible), 3))
    for i, lm in enumerate(visible):
        dx, dy = lm.x - state.x, lm.y - state.y
        q = dx * dx + dy * dy
        r = math.sqrt(q)
        C[rows_per * i, 0] = -dx / r
        C[rows_per * i, 1] = -dy / r
        if rows_per == 2:
            C[rows_per * i + 1, 0] = dy / q
            C[rows_per * i + 1, 1] = -dx / q
            C[rows_per * i + 1, 2] = -1.0
    return C


def motion_jacobians(
    state: RobotState, control: Control, dt: float
) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians (A, B) of the noise-free step wrt state and control.

    The straight branch uses the omega -> 0 limits of the arc derivatives,
    so central differences taken across the branch seam still agree.
    """
    v, omega = float(control[0]), float(control[1])
    theta = state.theta
    st, ct = math.sin(theta), math.cos(theta)
    A = np.eye(3)
    B = np.zeros((3, 2))
    if abs(omega) <= OMEGA_EPS:
        A[0, 2] = -v * dt * st
        A[1, 2] = v * dt * ct
        B[0, 0] = dt * ct
        B[1, 0] = dt * st
        B[0, 1] = -0.5 * v * dt * dt * st
        B[1, 1] = 0.5 * v * dt * dt * ct
        B[2, 1] = dt
    else:
        s1 = math.sin(theta + omega * dt)
        c1 = math.cos(theta + omega * dt)
        r = v / omega
        A[0, 2] = r * (c1 - ct)
        A[1, 2] = r * (s1 - st)
        B[0, 0] = (s1 - st) / omega
        B[1, 0] = -(c1 - ct) / omega
        B[0, 1] = v * (dt * c1 / omega - (s1 - st) / (omega * omega))
        B[1, 1] = v * (dt * s1 / omega + (c1 - ct) / (omega * omega))
        B[2, 1] = dt
    return A, B
