from __future__ import annotations

from curionav.world import Scenario, load_scenario

OPEN_8 = ["........"] * 8

CORNER_LANDMARKS = [[0.5, 0.5], [7.5, 0.5], [0.5, 7.5], [7.5, 7.5]]


def make_scenario(
    rows: list[str] | None = None,
    start=(1.0, 1.0, 0.0),
    goal=(6.0, 6.0),
    landmarks: list | None = None,
    pedestrians: list | None = None,
    resolution: float = 1.0,
    **params,
) -> Scenario:
    doc = {
        "grid": {"rows": rows if rows is not None else OPEN_8, "resolution": resolution},
        "robot_start": list(start),
        "goal": list(goal),
        "landmarks": landmarks if landmarks is not None else CORNER_LANDMARKS,
        "pedestrians": pedestrians if pedestrians is not None else [],
        "params": params,
    }
    if not doc["landmarks"]:
        doc["allow_no_landmarks"] = True
    return load_scenario(doc)
