"""CSV outputs of simulation campaigns and their summaries.

``runs.csv``            seed,time_to_sync_s,success_ratio,arrived_ratio
``timeline_<seed>.csv`` t_s,sync_share,arrived_share,successful_share

An empty ``time_to_sync_s`` cell means the run never reached the threshold.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

from .engine import MetricsTimeline, RunSummary

RUNS_HEADER = ("seed", "time_to_sync_s", "success_ratio", "arrived_ratio")
TIMELINE_HEADER = ("t_s", "sync_share", "arrived_share", "successful_share")
SUMMARY_HEADER = ("metric", "runs", "mean", "min", "max")


class AnalyzeError(ValueError):
    pass


def _ratio(x: float) -> str:
    return f"{x:.6f}"


def _seconds(x: float) -> str:
    return f"{x:.3f}"


def runs_csv(summaries: list[RunSummary]) -> str:
    out = io.StringIO()
    out.write(",".join(RUNS_HEADER) + "\n")
    for s in summaries:
        tts = "" if s.time_to_sync is None else _seconds(s.time_to_sync)
        out.write(f"{s.seed},{tts},{_ratio(s.success_ratio)},{_ratio(s.arrived_ratio)}\n")
    return out.getvalue()


def timeline_csv(timeline: MetricsTimeline) -> str:
    out = io.StringIO()
    out.write(",".join(TIMELINE_HEADER) + "\n")
    rows = zip(timeline.times, timeline.sync_share, timeline.arrived_share, timeline.successful_share)
    for t, sync, arrived, successful in rows:
        out.write(f"{_seconds(t)},{_ratio(sync)},{_ratio(arrived)},{_ratio(successful)}\n")
    return out.getvalue()


def write_campaign(out_dir, timelines: list[MetricsTimeline]) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for tl in timelines:
        path = out_dir / f"timeline_{tl.seed}.csv"
        path.write_text(timeline_csv(tl))
        written.append(path)
    path = out_dir / "runs.csv"
    path.write_text(runs_csv([tl.summary for tl in timelines]))
    written.append(path)
    return written


@dataclass(frozen=True)
class MetricSummary:
    metric: str
    runs: int
    mean: float
    low: float
    high: float


def read_runs(path) -> list[dict]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise AnalyzeError(f"cannot read {path}: {exc}") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise AnalyzeError(f"{path} is empty")
    if tuple(rows[0]) != RUNS_HEADER:
        raise AnalyzeError(f"{path}: expected header {','.join(RUNS_HEADER)}")
    parsed = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(RUNS_HEADER):
            raise AnalyzeError(f"{path}:{lineno}: expected {len(RUNS_HEADER)} fields")
        try:
            parsed.append({
                "seed": int(row[0]),
                "time_to_sync_s": float(row[1]) if row[1] else None,
                "success_ratio": float(row[2]),
                "arrived_ratio": float(row[3]),
            })
        except ValueError as exc:
            raise AnalyzeError(f"{path}:{lineno}: {exc}") from None
    if not parsed:
        raise AnalyzeError(f"{path} has no runs")
    return parsed


def analyze(path) -> list[MetricSummary]:
    """Mean and min-max per metric; runs that never synced are excluded from the sync row."""
    rows = read_runs(path)
    out = []
    for metric in RUNS_HEADER[1:]:
        values = [r[metric] for r in rows if r[metric] is not None]
        if values:
            out.append(MetricSummary(metric, len(values), math.fsum(values) / len(values),
                                     min(values), max(values)))
        else:
            out.append(MetricSummary(metric, 0, math.nan, math.nan, math.nan))
    return out


def summary_csv(summaries: list[MetricSummary]) -> str:
    out = io.StringIO()
    out.write(",".join(SUMMARY_HEADER) + "\n")
    for s in summaries:
        out.write(f"{s.metric},{s.runs},{s.mean:.6f},{s.low:.6f},{s.high:.6f}\n")
    return out.getvalue()
