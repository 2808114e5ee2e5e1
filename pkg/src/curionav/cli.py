"""Command-line front end, a thin client over the episode service.

By default each command spins up the service in-process (no sockets); pass
--server URL to talk to a running instance instead. Batch runs fan out over
a thread pool capped by the CURIO_NAV_THREADS environment variable.
"""

from __future__ import annotations

import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click

MODES = ("full", "cpc-only", "cnc-only", "distance-only")
METRIC_COLUMNS = (
    ("RMSE", "rmse"), ("TCM", "tcm"), ("NM", "nm"), ("TD", "td"),
    ("MD", "md"), ("NT", "nt"), ("Vel", "vel"), ("Length", "length"),
    ("Time", "time"),
)


class ClientError(click.ClickException):
    exit_code = 1


def _thread_cap() -> int:
    raw = os.environ.get("CURIO_NAV_THREADS", "4")
    try:
        return max(1, int(raw))
    except ValueError:
        return 4


def _post(server: str | None, path: str, payload: dict) -> dict:
    if server:
        import httpx

        with httpx.Client(base_url=server, timeout=None) as client:
            resp = client.post(path, json=payload)
    else:
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            from fastapi.testclient import TestClient

        from .service import create_app

        with TestClient(create_app()) as client:
            resp = client.post(path, json=payload)
    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail", resp.text)
        except Exception:
            detail = resp.text
        raise ClientError(f"service error ({resp.status_code}): {detail}")
    return resp.json()


def _read_scenario(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ClientError(f"scenario file not found: {path}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ClientError(f"scenario is not valid JSON: {exc}") from exc


def _parse_seeds(raw: str) -> list[int]:
    try:
        seeds = [int(s) for s in raw.split(",") if s.strip() != ""]
    except ValueError as exc:
        raise ClientError(f"bad seed list {raw!r}") from exc
    if not seeds:
        raise ClientError("at least one seed is required")
    return seeds


def _run_one(
    server: str | None, scenario: dict, seed: int, mode: str,
    out_dir: Path, render: bool,
) -> dict:
    payload = {
        "scenario": scenario, "seed": seed, "mode": mode,
        "include_trace": True, "render": render,
    }
    resp = _post(server, "/episodes/run", payload)
    stem = f"run_s{seed}_{mode}"
    metrics_path = out_dir / f"{stem}.metrics.json"
    metrics_path.write_text(
        json.dumps(resp["metrics"], indent=2) + "\n", encoding="utf-8"
    )
    trace_lines = "\n".join(json.dumps(t) for t in resp["trace"]) + "\n"
    (out_dir / f"{stem}.trace.jsonl").write_text(trace_lines, encoding="utf-8")
    if render and resp.get("svg"):
        (out_dir / f"{stem}.svg").write_text(resp["svg"], encoding="utf-8")
    return resp["metrics"]


def _mean_std(values: list[float]) -> tuple[float, float]:
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / n
    return mean, math.sqrt(var)


def _summary_table(rows: dict[str, list[dict]]) -> str:
    """One line per label: mean +/- std for each metric column."""
    header = f"{'':14s}" + "".join(f"{name:>16s}" for name, _ in METRIC_COLUMNS)
    lines = [header]
    for label, reports in rows.items():
        cells = []
        for _, key in METRIC_COLUMNS:
            mean, std = _mean_std([float(r[key]) for r in reports])
            cells.append(f"{mean:9.3f}±{std:<6.3f}")
        lines.append(f"{label:14s}" + "".join(f"{c:>16s}" for c in cells))
    return "\n".join(lines)


def _run_batch(
    server: str | None, scenario: dict, seeds: list[int], mode: str,
    out_dir: Path, render: bool,
) -> list[dict]:
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(seed, mode) for seed in seeds]
    results: dict[int, dict] = {}
    workers = min(_thread_cap(), len(jobs))
    if workers <= 1:
        for seed, m in jobs:
            results[seed] = _run_one(server, scenario, seed, m, out_dir, render)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futs = {
                seed: pool.submit(_run_one, server, scenario, seed, m, out_dir, render)
                for seed, m in jobs
            }
            for seed, fut in futs.items():
                results[seed] = fut.result()
    return [results[s] for s in seeds]


@click.group()
def main() -> None:
    """Curiosity-driven navigation experiments."""


@main.command()
@click.option("--scenario", "scenario_path", required=True, help="Scenario JSON file.")
@click.option("--seed", "seed_raw", default="0", show_default=True,
              help="Seed or comma-separated seed list.")
@click.option("--mode", type=click.Choice(MODES), default="full", show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--render", is_flag=True, help="Also write an SVG per run.")
@click.option("--server", default=None, help="Remote service URL (default: in-process).")
def run(scenario_path: str, seed_raw: str, mode: str, out_dir: str,
        render: bool, server: str | None) -> None:
    """Run one episode per seed; write metrics, trace, and optional SVG."""
    scenario = _read_scenario(scenario_path)
    seeds = _parse_seeds(seed_raw)
    reports = _run_batch(server, scenario, seeds, mode, Path(out_dir), render)
    click.echo(_summary_table({mode: reports}))


@main.command()
@click.option("--scenario", "scenario_path", required=True, help="Scenario JSON file.")
@click.option("--seeds", "seeds_raw", required=True,
              help="Comma-separated seed list, shared by all modes.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--server", default=None, help="Remote service URL (default: in-process).")
def ablate(scenario_path: str, seeds_raw: str, out_dir: str, server: str | None) -> None:
    """Run all four modes over the same seeds; print the cross-mode table."""
    scenario = _read_scenario(scenario_path)
    seeds = _parse_seeds(seeds_raw)
    base = Path(out_dir)
    rows: dict[str, list[dict]] = {}
    for mode in MODES:
        rows[mode] = _run_batch(server, scenario, seeds, mode, base / mode, render=False)
    table = _summary_table(rows)
    click.echo(table)
    summary = {
        mode: {
            key: _mean_std([float(r[key]) for r in reports])[0]
            for _, key in METRIC_COLUMNS
        }
        for mode, reports in rows.items()
    }
    base.mkdir(parents=True, exist_ok=True)
    (base / "ablation.json").write_text(
        json.dumps({"seeds": seeds, "means": summary}, indent=2) + "\n",
        encoding="utf-8",
    )


@main.command("render")
@click.option("--trace", "trace_path", required=True, help="Trace JSONL file.")
@click.option("--scenario", "scenario_path", required=True, help="Scenario JSON file.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--server", default=None, help="Remote service URL (default: in-process).")
def render_cmd(trace_path: str, scenario_path: str, out_path: str,
               server: str | None) -> None:
    """Render a recorded trace over its scenario to an SVG file."""
    scenario = _read_scenario(scenario_path)
    tp = Path(trace_path)
    if not tp.is_file():
        raise ClientError(f"trace file not found: {trace_path}")
    ticks = [
        json.loads(line) for line in tp.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    resp = _post(server, "/render", {"scenario": scenario, "trace": ticks})
    Path(out_path).write_text(resp["svg"], encoding="utf-8")
    click.echo(f"wrote {out_path}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host: str, port: int) -> None:
    """Run the episode service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    sys.exit(main())
