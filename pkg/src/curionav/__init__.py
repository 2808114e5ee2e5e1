"""Curiosity-driven navigation: planning that trades goal progress against
localization uncertainty and crowd comfort."""

from .crowd import Hccdm, Pedestrian, build_hccdm, cluster_pedestrians, cnc_cost
from .dynamics import Control, RobotState, step
from .estimation import Belief, cpc_score, feedback_gains, propagate_uncertainty
from .evaluator import CostBreakdown, CostWeights, plan_cycle, total_cost
from .planner import TrajectoryCandidate, grow_tree, find_path_candidates
from .render import render_svg
from .simkit import (
    EpisodeTrace,
    MetricsReport,
    efficiency_metrics,
    localization_metrics,
    run_episode,
    social_metrics,
)
from .world import GridMap, Params, Scenario, ScenarioError, load_scenario

__all__ = [
    "Belief",
    "Control",
    "CostBreakdown",
    "CostWeights",
    "EpisodeTrace",
    "GridMap",
    "Hccdm",
    "MetricsReport",
    "Params",
    "Pedestrian",
    "RobotState",
    "Scenario",
    "ScenarioError",
    "TrajectoryCandidate",
    "build_hccdm",
    "cluster_pedestrians",
    "cnc_cost",
    "cpc_score",
    "efficiency_metrics",
    "feedback_gains",
    "find_path_candidates",
    "grow_tree",
    "load_scenario",
    "localization_metrics",
    "plan_cycle",
    "propagate_uncertainty",
    "render_svg",
    "run_episode",
    "social_metrics",
    "step",
    "total_cost",
    "__version__",
]

__version__ = "0.1.0"
