"""Request/response models for the episode service."""

from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, Field

Mode = Literal["full", "cpc-only", "cnc-only", "distance-only"]


class EpisodeRequest(BaseModel):
    scenario: dict[str, Any]
    seed: int = 0
    mode: Mode = "full"
    include_trace: bool = True
    render: bool = False


class BreakdownOut(BaseModel):
    distance: float
    crowd: float
    cpc: float
    ell: float
    total: float
    cpc_active: bool
    zeta: float | None = None


class TickOut(BaseModel):
    time: float
    true_state: list[float]
    belief_mean: list[float]
    cov_trace: float
    belief_cov: list[list[float]]
    control: list[float]
    ped_positions: list[list[float]]
    min_ped_distance: float | None
    cpc_active: bool
    breakdown: BreakdownOut | None


class MetricsOut(BaseModel):
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
    mode: str
    start_state: list[float]
    dt: float
    ticks: int


class EpisodeResponse(BaseModel):
    metrics: MetricsOut
    trace: list[TickOut] | None = None
    svg: str | None = None


class RenderRequest(BaseModel):
    scenario: dict[str, Any]
    trace: list[TickOut] = Field(default_factory=list)


class RenderResponse(BaseModel):
    svg: str


class ValidateRequest(BaseModel):
    scenario: dict[str, Any]


class ValidateResponse(BaseModel):
    ok: bool
    error: str | None = None
    pedestrians: int = 0
    landmarks: int = 0
    landmark_density: float = 0.0
