"""Environment model: occupancy grid, landmarks, pedestrians, parameters.

A scenario is loaded from a JSON document and is immutable afterwards; all
geometric queries (footprint freedom, landmark visibility) live here. Cell
(ix, iy) covers the axis-aligned square [ix*res, (ix+1)*res) x
[iy*res, (iy+1)*res) with the map origin at (0, 0).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, NamedTuple

import numpy as np

from .dynamics import RobotState, angle_diff

MEASUREMENT_MODES = ("range-only", "range-bearing")
CPC_TERM_MODES = ("proportional", "literal-inverse")


class ScenarioError(ValueError):
    """Raised on malformed or invalid scenario documents."""


class Landmark(NamedTuple):
    id: int
    x: float
    y: float


@dataclass(eq=False)
class PedestrianSpec:
    start: np.ndarray          # (2,)
    speed: float               # [m/s]
    waypoints: np.ndarray      # (n, 2), visited cyclically


@dataclass(eq=False)
class GridMap:
    occupied: np.ndarray       # bool, shape (height, width), row iy
    resolution: float          # [m/cell]

    def __post_init__(self) -> None:
        self.occupied = np.asarray(self.occupied, dtype=bool)
        self.occupied.setflags(write=False)
        self._free_cells: np.ndarray | None = None

    @property
    def height(self) -> int:
        return self.occupied.shape[0]

    @property
    def width(self) -> int:
        return self.occupied.shape[1]

    @property
    def size_x(self) -> float:
        return self.width * self.resolution

    @property
    def size_y(self) -> float:
        return self.height * self.resolution

    def in_bounds(self, x: float, y: float) -> bool:
        return 0.0 <= x < self.size_x and 0.0 <= y < self.size_y

    def cell_index(self, x: float, y: float) -> tuple[int, int]:
        return int(x // self.resolution), int(y // self.resolution)

    def cell_occupied(self, ix: int, iy: int) -> bool:
        return bool(self.occupied[iy, ix])

    def free_cells(self) -> np.ndarray:
        """(n, 2) array of (ix, iy) indices of free cells, row-major order."""
        if self._free_cells is None:
            ys, xs = np.nonzero(~self.occupied)
            cells = np.column_stack([xs, ys])
            cells.setflags(write=False)
            self._free_cells = cells
        return self._free_cells


def footprint_free_mask(
    grid: GridMap, centers: np.ndarray, radius: float
) -> np.ndarray:
    """Vectorized is_footprint_free over an (n, 2) array of centers."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    res = grid.resolution
    n = centers.shape[0]
    in_b = (
        (centers[:, 0] >= 0.0)
        & (centers[:, 0] < grid.size_x)
        & (centers[:, 1] >= 0.0)
        & (centers[:, 1] < grid.size_y)
    )
    # fixed cell window around each center; cells outside the disk have
    # closest-point distance > radius and drop out of the test on their own
    span = int(math.ceil(2.0 * radius / res)) + 2
    base_x = np.floor((centers[:, 0] - radius) / res).astype(np.int64)
    base_y = np.floor((centers[:, 1] - radius) / res).astype(np.int64)
    off = np.arange(span)
    ix = np.broadcast_to(base_x[:, None, None] + off[None, None, :], (n, span, span))
    iy = np.broadcast_to(base_y[:, None, None] + off[None, :, None], (n, span, span))
    valid = (ix >= 0) & (ix < grid.width) & (iy >= 0) & (iy < grid.height)
    occ = np.zeros((n, span, span), dtype=bool)
    ixc = np.clip(ix, 0, grid.width - 1)
    iyc = np.clip(iy, 0, grid.height - 1)
    occ[valid] = grid.occupied[iyc[valid], ixc[valid]]
    x0 = ix * res
    y0 = iy * res
    cx = centers[:, 0][:, None, None]
    cy = centers[:, 1][:, None, None]
    dx = np.maximum(np.maximum(x0 - cx, cx - (x0 + res)), 0.0)
    dy = np.maximum(np.maximum(y0 - cy, cy - (y0 + res)), 0.0)
    hit = occ & (dx * dx + dy * dy <= radius * radius)
    return in_b & ~hit.any(axis=(1, 2))


def is_footprint_free(grid: GridMap, center: np.ndarray, radius: float) -> bool:
    """True iff no occupied cell intersects the closed disk at ``center``.

    A center outside the grid bounds is never free. Touching an occupied
    cell exactly at the rim counts as a hit.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    return bool(footprint_free_mask(grid, np.asarray(center, dtype=float)[None, :], radius)[0])


def _ray_blocked(
    occ: np.ndarray, res: float, x0: float, y0: float, x1: float, y1: float
) -> bool:
    """Cell-stepping line walk from (x0,y0) to (x1,y1).

    Tests every cell strictly between the two endpoint cells; a ray passing
    exactly through a cell corner tests both side cells (conservative).
    """
    ix, iy = int(x0 // res), int(y0 // res)
    jx, jy = int(x1 // res), int(y1 // res)
    if ix == jx and iy == jy:
        return False
    h, w = occ.shape
    dx, dy = x1 - x0, y1 - y0
    step_x = 1 if dx > 0 else -1
    step_y = 1 if dy > 0 else -1
    if dx != 0.0:
        t_max_x = ((ix + (step_x > 0)) * res - x0) / dx
        t_dx = res / abs(dx)
    else:
        t_max_x, t_dx = math.inf, math.inf
    if dy != 0.0:
        t_max_y = ((iy + (step_y > 0)) * res - y0) / dy
        t_dy = res / abs(dy)
    else:
        t_max_y, t_dy = math.inf, math.inf
    for _ in range(abs(jx - ix) + abs(jy - iy) + 4):
        if abs(t_max_x - t_max_y) <= 1e-15:
            # corner crossing: both cells sharing the corner block the ray
            for cx, cy in ((ix + step_x, iy), (ix, iy + step_y)):
                if (cx, cy) != (jx, jy) and 0 <= cx < w and 0 <= cy < h and occ[cy, cx]:
                    return True
            ix += step_x
            iy += step_y
            t_max_x += t_dx
            t_max_y += t_dy
        elif t_max_x < t_max_y:
            ix += step_x
            t_max_x += t_dx
        else:
            iy += step_y
            t_max_y += t_dy
        if ix == jx and iy == jy:
            return False
        if not (0 <= ix < w and 0 <= iy < h):
            return False
        if occ[iy, ix]:
            return True
    return False


def visible_landmarks(
    grid: GridMap,
    landmarks: list[Landmark],
    pose: RobotState,
    sensor_range: float,
    fov: float,
) -> list[Landmark]:
    """Landmarks within range and field of view with an occlusion-free ray.

    Range and half-FOV comparisons are inclusive; pedestrians never occlude.
    """
    if sensor_range <= 0:
        raise ValueError("sensor_range must be > 0")
    out: list[Landmark] = []
    half = 0.5 * fov
    for lm in landmarks:
        dx, dy = lm.x - pose.x, lm.y - pose.y
        if dx * dx + dy * dy > sensor_range * sensor_range:
            continue
        if half < math.pi and abs(angle_diff(math.atan2(dy, dx), pose.theta)) > half:
            continue
        if _ray_blocked(grid.occupied, grid.resolution, pose.x, pose.y, lm.x, lm.y):
            continue
        out.append(lm)
    return out


def landmark_density(grid: GridMap) -> float:
    """Occupied-cell count over total-cell count."""
    return float(grid.occupied.sum()) / float(grid.occupied.size)


def _diag_or_full(value: Any, size: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape == (size,):
        arr = np.diag(arr)
    if arr.shape != (size, size):
        raise ScenarioError(f"{name} must be a length-{size} diagonal or {size}x{size} matrix")
    if not np.allclose(arr, arr.T, atol=1e-9):
        raise ScenarioError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(0.5 * (arr + arr.T)).min() < -1e-9:
        raise ScenarioError(f"{name} must be positive semidefinite")
    out = 0.5 * (arr + arr.T)
    out.setflags(write=False)
    return out


@dataclass(eq=False)
class Params:
    w1: float = 120.0
    w2: float = 50.0
    w3: float = 1.0
    thr_prime: float = 0.12
    dt: float = 0.5                      # [s]
    horizon_k: int = 8
    sensor_range: float = 8.0            # [m]
    sensor_fov: float = 2.0 * math.pi    # [rad]
    measurement_mode: str = "range-bearing"
    process_noise: np.ndarray = field(
        default_factory=lambda: np.diag([1e-3, 1e-3, 1e-4])
    )
    range_var: float = 0.01              # [m^2]
    bearing_var: float = 1e-3            # [rad^2]
    d_sd: float = 1.5                    # social distance [m]
    d_pd: float = 1.2                    # personal distance [m]
    comfort_threshold: float = 1.5       # [m]
    working_zone_radius: float = 8.0     # [m]
    robot_radius: float = 0.3            # [m]
    plan_margin: float = 0.15            # wall inflation while planning [m]
    v_max: float = 1.0                   # [m/s]
    omega_max: float = 1.0               # [rad/s]
    conv_threshold: float = 0.05         # trace units
    seed: int = 0
    # planner / episode knobs (spec-stated defaults)
    goal_bias: float = 0.1
    r_near: float = 2.0                  # [m]
    budget: int = 800
    max_candidates: int = 40
    tick_limit: int = 600
    goal_tolerance: float = 0.5          # [m]
    pedestrian_radius: float = 0.3       # [m]
    initial_cov: np.ndarray = field(
        default_factory=lambda: np.diag([1e-2, 1e-2, 1e-2])
    )
    cpc_term_mode: str = "proportional"
    lqr_q: np.ndarray = field(default_factory=lambda: np.diag([1.0, 1.0, 0.3]))
    lqr_r: np.ndarray = field(default_factory=lambda: np.diag([0.5, 0.5]))

    def validate(self) -> None:
        positive = {
            "dt": self.dt,
            "sensor_range": self.sensor_range,
            "d_sd": self.d_sd,
            "d_pd": self.d_pd,
            "comfort_threshold": self.comfort_threshold,
            "working_zone_radius": self.working_zone_radius,
            "robot_radius": self.robot_radius,
            "v_max": self.v_max,
            "omega_max": self.omega_max,
            "goal_tolerance": self.goal_tolerance,
            "pedestrian_radius": self.pedestrian_radius,
        }
        for key, val in positive.items():
            if not val > 0:
                raise ScenarioError(f"param {key} must be > 0, got {val}")
        for key in ("w1", "w2", "w3"):
            if getattr(self, key) < 0:
                raise ScenarioError(f"param {key} must be >= 0")
        if self.horizon_k < 1:
            raise ScenarioError("horizon_k must be >= 1")
        if self.measurement_mode not in MEASUREMENT_MODES:
            raise ScenarioError(f"measurement_mode must be one of {MEASUREMENT_MODES}")
        if self.cpc_term_mode not in CPC_TERM_MODES:
            raise ScenarioError(f"cpc_term_mode must be one of {CPC_TERM_MODES}")
        if self.range_var < 0 or self.bearing_var < 0:
            raise ScenarioError("measurement variances must be >= 0")
        if self.plan_margin < 0:
            raise ScenarioError("plan_margin must be >= 0")
        self.process_noise = _diag_or_full(self.process_noise, 3, "process_noise")
        self.initial_cov = _diag_or_full(self.initial_cov, 3, "initial_cov")
        self.lqr_q = _diag_or_full(self.lqr_q, 3, "lqr_q")
        self.lqr_r = _diag_or_full(self.lqr_r, 2, "lqr_r")


_PARAM_KEYS = {
    "w1", "w2", "w3", "thr_prime", "dt", "horizon_k", "sensor_range",
    "sensor_fov", "measurement_mode", "process_noise", "range_var",
    "bearing_var", "d_sd", "d_pd", "comfort_threshold",
    "working_zone_radius", "robot_radius", "plan_margin", "v_max", "omega_max",
    "conv_threshold", "seed", "goal_bias", "r_near", "budget",
    "max_candidates", "tick_limit", "goal_tolerance", "pedestrian_radius",
    "initial_cov", "cpc_term_mode", "lqr_q", "lqr_r",
}

_INT_PARAMS = {"horizon_k", "seed", "budget", "max_candidates", "tick_limit"}
_MATRIX_PARAMS = {"process_noise", "initial_cov", "lqr_q", "lqr_r"}
_STR_PARAMS = {"measurement_mode", "cpc_term_mode"}


@dataclass(eq=False)
class Scenario:
    grid: GridMap
    landmarks: list[Landmark]
    pedestrians: list[PedestrianSpec]
    robot_start: RobotState
    goal: np.ndarray
    params: Params
    name: str = ""


def _parse_grid(doc: Any) -> GridMap:
    if not isinstance(doc, dict):
        raise ScenarioError("grid must be an object")
    if "resolution" not in doc:
        raise ScenarioError("grid.resolution is required")
    res = float(doc["resolution"])
    if res <= 0:
        raise ScenarioError(f"grid.resolution must be > 0, got {res}")
    if "rows" in doc:
        rows = doc["rows"]
        if not rows or not all(isinstance(r, str) for r in rows):
            raise ScenarioError("grid.rows must be a nonempty list of strings")
        width = len(rows[0])
        if width == 0 or any(len(r) != width for r in rows):
            raise ScenarioError("grid.rows must be nonempty and rectangular")
        bad = set("".join(rows)) - {".", "#"}
        if bad:
            raise ScenarioError(f"grid.rows may contain only '.' and '#', got {sorted(bad)}")
        # first string is the top row; row 0 of the array is the bottom
        occ = np.array(
            [[c == "#" for c in row] for row in reversed(rows)], dtype=bool
        )
        return GridMap(occ, res)
    if "width" in doc and "height" in doc:
        width, height = int(doc["width"]), int(doc["height"])
        if width < 1 or height < 1:
            raise ScenarioError("grid width/height must be >= 1")
        occ = np.zeros((height, width), dtype=bool)
        for entry in doc.get("occupied", []):
            ix, iy = int(entry[0]), int(entry[1])
            if not (0 <= ix < width and 0 <= iy < height):
                raise ScenarioError(f"occupied cell ({ix}, {iy}) outside {width}x{height} grid")
            occ[iy, ix] = True
        return GridMap(occ, res)
    raise ScenarioError("grid needs either rows or width/height")


def _parse_params(doc: Any) -> Params:
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ScenarioError("params must be an object")
    unknown = set(doc) - _PARAM_KEYS
    if unknown:
        raise ScenarioError(f"unknown params: {sorted(unknown)}")
    kwargs: dict[str, Any] = {}
    for key, val in doc.items():
        if key in _MATRIX_PARAMS:
            kwargs[key] = np.asarray(val, dtype=float)
        elif key in _INT_PARAMS:
            kwargs[key] = int(val)
        elif key in _STR_PARAMS:
            kwargs[key] = str(val)
        else:
            kwargs[key] = float(val)
    params = Params(**kwargs)
    params.validate()
    return params


def load_scenario(document: str | bytes | dict) -> Scenario:
    """Parse and fully validate a scenario document (JSON text or dict)."""
    if isinstance(document, (str, bytes)):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"malformed scenario JSON: {exc}") from exc
    else:
        doc = document
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a JSON object")
    for key in ("grid", "robot_start", "goal"):
        if key not in doc:
            raise ScenarioError(f"scenario is missing required key '{key}'")
    grid = _parse_grid(doc["grid"])
    params = _parse_params(doc.get("params"))

    start_raw = doc["robot_start"]
    if len(start_raw) != 3:
        raise ScenarioError("robot_start must be [x, y, theta]")
    start = RobotState.from_array(np.asarray(start_raw, dtype=float))
    goal = np.asarray(doc["goal"], dtype=float)
    if goal.shape != (2,):
        raise ScenarioError("goal must be [x, y]")

    for label, (px, py) in (("robot_start", (start.x, start.y)), ("goal", tuple(goal))):
        if not grid.in_bounds(px, py):
            raise ScenarioError(f"{label} ({px}, {py}) is outside the grid")
        ix, iy = grid.cell_index(px, py)
        if grid.cell_occupied(ix, iy):
            raise ScenarioError(f"{label} lies in occupied cell ({ix}, {iy})")

    landmarks: list[Landmark] = []
    for i, entry in enumerate(doc.get("landmarks", [])):
        if len(entry) != 2:
            raise ScenarioError(f"landmark {i} must be [x, y]")
        lx, ly = float(entry[0]), float(entry[1])
        if not grid.in_bounds(lx, ly):
            raise ScenarioError(f"landmark {i} at ({lx}, {ly}) is outside the grid")
        landmarks.append(Landmark(i, lx, ly))
    if not landmarks and not doc.get("allow_no_landmarks", False):
        raise ScenarioError(
            "scenario has no landmarks; set allow_no_landmarks to run blind"
        )

    pedestrians: list[PedestrianSpec] = []
    for i, entry in enumerate(doc.get("pedestrians", [])):
        if not isinstance(entry, dict):
            raise ScenarioError(f"pedestrian {i} must be an object")
        for key in ("start", "speed", "waypoints"):
            if key not in entry:
                raise ScenarioError(f"pedestrian {i} is missing '{key}'")
        p_start = np.asarray(entry["start"], dtype=float)
        if p_start.shape != (2,):
            raise ScenarioError(f"pedestrian {i} start must be [x, y]")
        if not grid.in_bounds(*p_start):
            raise ScenarioError(f"pedestrian {i} start is outside the grid")
        speed = float(entry["speed"])
        if speed < 0:
            raise ScenarioError(f"pedestrian {i} speed must be >= 0")
        wps = np.asarray(entry["waypoints"], dtype=float)
        if wps.ndim != 2 or wps.shape[0] < 1 or wps.shape[1] != 2:
            raise ScenarioError(f"pedestrian {i} waypoints must be a nonempty [x, y] list")
        for wx, wy in wps:
            if not grid.in_bounds(wx, wy):
                raise ScenarioError(f"pedestrian {i} waypoint ({wx}, {wy}) is outside the grid")
        p_start.setflags(write=False)
        wps.setflags(write=False)
        pedestrians.append(PedestrianSpec(p_start, speed, wps))

    goal.setflags(write=False)
    return Scenario(
        grid=grid,
        landmarks=landmarks,
        pedestrians=pedestrians,
        robot_start=start,
        goal=goal,
        params=params,
        name=str(doc.get("name", "")),
    )


def serialize_scenario(scenario: Scenario) -> dict:
    """Scenario back to a plain document; load(serialize(s)) equals s."""
    occ_ys, occ_xs = np.nonzero(scenario.grid.occupied)
    defaults = Params()
    params: dict[str, Any] = {}
    for key in sorted(_PARAM_KEYS):
        val = getattr(scenario.params, key)
        ref = getattr(defaults, key)
        if key in _MATRIX_PARAMS:
            if not np.array_equal(val, ref):
                params[key] = np.asarray(val).tolist()
        elif val != ref:
            params[key] = val
    doc: dict[str, Any] = {
        "name": scenario.name,
        "grid": {
            "width": scenario.grid.width,
            "height": scenario.grid.height,
            "resolution": scenario.grid.resolution,
            "occupied": [[int(x), int(y)] for x, y in zip(occ_xs, occ_ys)],
        },
        "robot_start": [scenario.robot_start.x, scenario.robot_start.y, scenario.robot_start.theta],
        "goal": scenario.goal.tolist(),
        "landmarks": [[lm.x, lm.y] for lm in scenario.landmarks],
        "pedestrians": [
            {
                "start": p.start.tolist(),
                "speed": p.speed,
                "waypoints": p.waypoints.tolist(),
            }
            for p in scenario.pedestrians
        ],
        "params": params,
    }
    if not scenario.landmarks:
        doc["allow_no_landmarks"] = True
    return doc


def with_params(scenario: Scenario, **overrides: Any) -> Scenario:
    """Copy of the scenario with some params replaced (and revalidated)."""
    new_params = replace(scenario.params, **overrides)
    new_params.validate()
    return replace(scenario, params=new_params)
