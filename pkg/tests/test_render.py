"""SVG output: structural validity and trace fidelity."""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET

import pytest

from conftest import make_scenario
from curionav.render import render_svg
from curionav.simkit import run_episode

SVG_NS = "{http://www.w3.org/2000/svg}"


@pytest.fixture(scope="module")
def episode():
    scn = make_scenario(
        rows=[
            "........",
            "...##...",
            "........",
            "........",
            "........",
            "........",
            "........",
            "........",
        ],
        pedestrians=[
            {"start": [5.0, 2.0], "speed": 1.0, "waypoints": [[2.0, 5.0], [5.0, 2.0]]},
        ],
        tick_limit=15,
        budget=250,
    )
    trace, _ = run_episode(scn, seed=2)
    return scn, trace


def test_map_only_render_is_valid_xml():
    scn = make_scenario()
    svg = render_svg(None, scn)
    root = ET.fromstring(svg)
    assert root.tag == f"{SVG_NS}svg"
    ids = {el.get("id") for el in root.iter()}
    assert "grid" in ids
    assert "landmarks" in ids
    # no trajectory without a trace
    assert not [el for el in root.iter(f"{SVG_NS}polyline")]


def test_full_render_is_valid_xml(episode):
    scn, trace = episode
    svg = render_svg(trace, scn)
    root = ET.fromstring(svg)
    assert root.tag == f"{SVG_NS}svg"


def test_polyline_has_one_vertex_per_tick(episode):
    scn, trace = episode
    svg = render_svg(trace, scn)
    root = ET.fromstring(svg)
    lines = [
        el for el in root.iter(f"{SVG_NS}polyline")
        if el.get("id") == "trajectory-line"
    ]
    assert len(lines) == 1
    pts = lines[0].get("points").split()
    assert len(pts) == len(trace.ticks)


def test_occupied_cells_rendered(episode):
    scn, trace = episode
    svg = render_svg(trace, scn)
    root = ET.fromstring(svg)
    grids = [el for el in root.iter() if el.get("id") == "grid"]
    assert len(grids) == 1
    assert len(list(grids[0])) == int(scn.grid.occupied.sum())


def test_landmarks_rendered(episode):
    scn, trace = episode
    svg = render_svg(trace, scn)
    root = ET.fromstring(svg)
    layer = [el for el in root.iter() if el.get("id") == "landmarks"][0]
    assert len(list(layer)) == len(scn.landmarks)


def test_pedestrians_present_when_traced(episode):
    scn, trace = episode
    svg = render_svg(trace, scn)
    assert 'id="pedestrians"' in svg
    assert 'id="ellipses"' in svg


def test_render_numbers_are_plain_decimals(episode):
    scn, trace = episode
    svg = render_svg(trace, scn)
    assert not re.search(r"\d[eE][+-]\d", svg)
    assert "nan" not in svg.lower().replace("xmlns", "")
