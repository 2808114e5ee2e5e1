"""FastAPI application exposing episode runs, validation, and rendering.

Scenario documents travel in the request body, so the service holds no
state between calls; batch runs fan out client-side.
"""

from __future__ import annotations

import json

from fastapi import FastAPI, HTTPException

from .. import render, simkit, world
from ..simkit import metrics_to_dict, tick_from_dict, tick_to_dict
from .schemas import (
    EpisodeRequest,
    EpisodeResponse,
    RenderRequest,
    RenderResponse,
    ValidateRequest,
    ValidateResponse,
)


def create_app() -> FastAPI:
    app = FastAPI(title="curionav", version="0.1.0")

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.post("/scenarios/validate", response_model=ValidateResponse)
    def validate(req: ValidateRequest) -> ValidateResponse:
        try:
            scenario = world.load_scenario(req.scenario)
        except world.ScenarioError as exc:
            return ValidateResponse(ok=False, error=str(exc))
        return ValidateResponse(
            ok=True,
            pedestrians=len(scenario.pedestrians),
            landmarks=len(scenario.landmarks),
            landmark_density=world.landmark_density(scenario.grid),
        )

    @app.post("/episodes/run", response_model=EpisodeResponse, response_model_exclude_none=False)
    def run_episode(req: EpisodeRequest) -> dict:
        try:
            scenario = world.load_scenario(req.scenario)
        except world.ScenarioError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        trace, report = simkit.run_episode(scenario, req.seed, req.mode)
        out: dict = {"metrics": metrics_to_dict(report, trace)}
        out["trace"] = [tick_to_dict(t) for t in trace.ticks] if req.include_trace else None
        out["svg"] = render.render_svg(trace, scenario) if req.render else None
        return out

    @app.post("/render", response_model=RenderResponse)
    def render_trace(req: RenderRequest) -> RenderResponse:
        try:
            scenario = world.load_scenario(req.scenario)
        except world.ScenarioError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        ticks = [tick_from_dict(t.model_dump()) for t in req.trace]
        trace = simkit.EpisodeTrace(
            start_state=scenario.robot_start, dt=scenario.params.dt, ticks=ticks
        )
        try:
            svg = render.render_svg(trace, scenario)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return RenderResponse(svg=svg)

    return app
