"""Crowd model: clustering, enclosing circles, the density map, CNC cost.

Pedestrians inside the robot's working zone are clustered by transitive
proximity (pairs within the social distance D_sd), each cluster becomes one
isotropic Gaussian component: a singleton centers on the pedestrian with
sigma = D_pd, a crowd centers on its minimal enclosing circle with
sigma = radius + D_pd. Component weights are proportional to crowd size.
Note sigma acts as the variance of the isotropic component, matching the
map's printed normalization 1/(2*pi*sigma).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial import cKDTree


@dataclass(eq=False)
class Pedestrian:
    id: int
    position: np.ndarray     # (2,)
    velocity: np.ndarray     # (2,)
    timestamp: float = 0.0


@dataclass(eq=False)
class Cluster:
    member_ids: list[int]
    size: int                # epsilon, member count
    center: np.ndarray       # enclosing-circle center
    radius: float


class GaussianComponent(NamedTuple):
    mu: np.ndarray           # (2,)
    sigma: float             # variance of the isotropic component
    weight: float


@dataclass(eq=False)
class Hccdm:
    components: list[GaussianComponent]
    timestamp: float
    zone_center: np.ndarray
    zone_radius: float


class _UnionFind:
    def __init__(self, n: int) -> None:
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def enclosing_circle(points: Sequence[np.ndarray]) -> tuple[np.ndarray, float]:
    """Minimal enclosing circle (Welzl, move-to-front, no shuffle).

    Deterministic in the input order; exact for 1 and 2 points.
    """
    pts = [np.asarray(p, dtype=float) for p in points]
    if not pts:
        raise ValueError("enclosing_circle needs at least one point")

    def circle_two(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
        center = 0.5 * (a + b)
        return center, 0.5 * float(np.linalg.norm(a - b))

    def circle_three(
        a: np.ndarray, b: np.ndarray, c: np.ndarray
    ) -> tuple[np.ndarray, float] | None:
        ax, ay = a
        bx, by = b
        cx, cy = c
        d = 2.0 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by))
        if abs(d) < 1e-14:
            return None   # collinear
        ux = ((ax * ax + ay * ay) * (by - cy) + (bx * bx + by * by) * (cy - ay)
              + (cx * cx + cy * cy) * (ay - by)) / d
        uy = ((ax * ax + ay * ay) * (cx - bx) + (bx * bx + by * by) * (ax - cx)
              + (cx * cx + cy * cy) * (bx - ax)) / d
        center = np.array([ux, uy])
        return center, float(np.linalg.norm(center - a))

    def contains(circle: tuple[np.ndarray, float], p: np.ndarray) -> bool:
        center, radius = circle
        return float(np.linalg.norm(p - center)) <= radius + 1e-12

    def mec_two_fixed(fixed_a: np.ndarray, fixed_b: np.ndarray, sub: list) -> tuple:
        circ = circle_two(fixed_a, fixed_b)
        for i, p in enumerate(sub):
            if not contains(circ, p):
                three = circle_three(fixed_a, fixed_b, p)
                if three is None:
                    # collinear: widest diametral circle covering all three
                    candidates = [
                        circle_two(fixed_a, p),
                        circle_two(fixed_b, p),
                        circle_two(fixed_a, fixed_b),
                    ]
                    three = max(candidates, key=lambda c: c[1])
                circ = three
        return circ

    def mec_one_fixed(fixed: np.ndarray, sub: list) -> tuple:
        circ = (fixed.copy(), 0.0)
        for i, p in enumerate(sub):
            if not contains(circ, p):
                circ = mec_two_fixed(fixed, p, sub[:i])
        return circ

    circ = (pts[0].copy(), 0.0)
    for i, p in enumerate(pts):
        if not contains(circ, p):
            circ = mec_one_fixed(p, pts[:i])
    return circ[0], circ[1]


def cluster_pedestrians(peds: list[Pedestrian], d_sd: float) -> list[Cluster]:
    """Connected components of the pairs-within-D_sd graph, via KD-tree.

    Clusters come out ordered by smallest member index, members sorted.
    """
    if d_sd <= 0:
        raise ValueError("d_sd must be > 0")
    if not peds:
        return []
    positions = np.array([p.position for p in peds], dtype=float)
    uf = _UnionFind(len(peds))
    if len(peds) > 1:
        tree = cKDTree(positions)
        for a, b in tree.query_pairs(d_sd):
            uf.union(a, b)
    groups: dict[int, list[int]] = {}
    for i in range(len(peds)):
        groups.setdefault(uf.find(i), []).append(i)
    clusters = []
    for root in sorted(groups):
        idx = sorted(groups[root])
        center, radius = enclosing_circle([positions[i] for i in idx])
        clusters.append(
            Cluster(
                member_ids=[peds[i].id for i in idx],
                size=len(idx),
                center=center,
                radius=radius,
            )
        )
    return clusters


def build_hccdm(
    clusters: list[Cluster],
    d_pd: float,
    timestamp: float = 0.0,
    zone_center: np.ndarray | None = None,
    zone_radius: float = 0.0,
) -> Hccdm:
    """One component per cluster; weights epsilon / sum(epsilon)."""
    if d_pd <= 0:
        raise ValueError("d_pd must be > 0")
    total = sum(c.size for c in clusters)
    components = []
    for c in clusters:
        if c.size == 1:
            mu, sigma = c.center, d_pd
        else:
            mu, sigma = c.center, c.radius + d_pd
        components.append(GaussianComponent(mu, sigma, c.size / total if total else 0.0))
    if zone_center is None:
        zone_center = np.zeros(2)
    return Hccdm(components, timestamp, np.asarray(zone_center, dtype=float), zone_radius)


def gaussian_pdf(point: np.ndarray, mu: np.ndarray, sigma: float) -> float:
    """Isotropic component density with normalization 1/(2*pi*sigma).

    sigma enters as the variance: |diag(sigma, sigma)|^(1/2) = sigma.
    """
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    d = np.asarray(point, dtype=float) - np.asarray(mu, dtype=float)
    return float(math.exp(-0.5 * float(d @ d) / sigma) / (2.0 * math.pi * sigma))


def mixture_density(hccdm: Hccdm, point: np.ndarray) -> float:
    """Weighted mixture density at one point."""
    return float(
        sum(c.weight * gaussian_pdf(point, c.mu, c.sigma) for c in hccdm.components)
    )


def predict_pedestrians(
    peds: list[Pedestrian], steps: int, dt: float
) -> list[list[Pedestrian]]:
    """Constant-velocity extrapolation; entry k holds positions at t + k*dt."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    out = []
    for k in range(steps + 1):
        out.append(
            [
                Pedestrian(
                    p.id,
                    p.position + k * dt * p.velocity,
                    p.velocity.copy(),
                    p.timestamp + k * dt,
                )
                for p in peds
            ]
        )
    return out


def update_working_zone(
    peds: list[Pedestrian], robot_position: np.ndarray, zone_radius: float
) -> list[Pedestrian]:
    """Drop pedestrians farther than zone_radius from the robot."""
    if zone_radius <= 0:
        raise ValueError("zone_radius must be > 0")
    robot_position = np.asarray(robot_position, dtype=float)
    return [
        p
        for p in peds
        if float(np.linalg.norm(p.position - robot_position)) <= zone_radius
    ]


def step_maps(
    predicted: list[list[Pedestrian]],
    robot_position: np.ndarray,
    params,
    timestamp: float = 0.0,
) -> list[Hccdm]:
    """Per-horizon-step HCCDMs (zone filter, cluster, map), shared by all
    candidates of one planning cycle."""
    maps = []
    for k, peds_k in enumerate(predicted):
        retained = update_working_zone(peds_k, robot_position, params.working_zone_radius)
        clusters = cluster_pedestrians(retained, params.d_sd)
        maps.append(
            build_hccdm(
                clusters,
                params.d_pd,
                timestamp=timestamp + k * params.dt,
                zone_center=np.asarray(robot_position, dtype=float),
                zone_radius=params.working_zone_radius,
            )
        )
    return maps


def cnc_cost(
    candidate,
    predicted: list[list[Pedestrian]],
    params,
    robot_position: np.ndarray | None = None,
    maps: list[Hccdm] | None = None,
) -> float:
    """H = sum over steps of the mixture density at the candidate position.

    The map for step k is rebuilt from pedestrians predicted to that step's
    time; pass ``maps`` to reuse per-cycle prebuilt maps (identical result).
    """
    n_steps = len(candidate.controls)
    if n_steps == 0:
        return 0.0
    if maps is None and not any(len(p) for p in predicted):
        return 0.0
    if maps is None:
        if robot_position is None:
            robot_position = candidate.states[0].position()
        maps = step_maps(predicted, robot_position, params)
    total = 0.0
    for k in range(1, n_steps + 1):
        # candidate step k lands at time k*dt; map index clamps at horizon end
        m = maps[min(k, len(maps) - 1)]
        total += mixture_density(m, candidate.states[k].position())
    return total
