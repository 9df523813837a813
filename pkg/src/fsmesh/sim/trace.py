"""Movement traces: canonical CSV, conversion from raw logs, interpolation.

The canonical format is a CSV with header ``node_id,time_s,x_m,y_m``,
rows sorted by node and time.  A node exists from its first to its last
sample and moves linearly in between; outside that span it is absent.
"""

from __future__ import annotations

import csv
import io
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

CANONICAL_HEADER = ("node_id", "time_s", "x_m", "y_m")
EARTH_RADIUS_M = 6371000.0


class TraceError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def _node_key(node_id: str):
    return (0, int(node_id), "") if node_id.isdigit() else (1, 0, node_id)


@dataclass
class Trace:
    node_ids: list
    times: list  # per node, increasing np.ndarray
    xs: list
    ys: list

    @property
    def users(self) -> int:
        return len(self.node_ids)

    @property
    def end(self) -> float:
        return max(float(t[-1]) for t in self.times)

    def positions(self, t: float) -> np.ndarray:
        out = np.full((self.users, 2), np.nan)
        for i, (ts, xs, ys) in enumerate(zip(self.times, self.xs, self.ys)):
            if ts[0] <= t <= ts[-1]:
                out[i, 0] = np.interp(t, ts, xs)
                out[i, 1] = np.interp(t, ts, ys)
        return out


def parse_canonical(lines: Iterable[str]) -> Trace:
    reader = csv.reader(lines)
    samples: dict = {}
    header_seen = False
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if not header_seen:
            if tuple(c.strip() for c in row) != CANONICAL_HEADER:
                raise TraceError(f"expected header {','.join(CANONICAL_HEADER)}", lineno)
            header_seen = True
            continue
        if len(row) != 4:
            raise TraceError(f"expected 4 fields, got {len(row)}", lineno)
        node = row[0].strip()
        try:
            t, x, y = (float(v) for v in row[1:])
        except ValueError:
            raise TraceError("time and coordinates must be numbers", lineno) from None
        if not node:
            raise TraceError("empty node id", lineno)
        if not all(math.isfinite(v) for v in (t, x, y)):
            raise TraceError("non-finite value", lineno)
        per_node = samples.setdefault(node, {})
        if t in per_node:
            raise TraceError(f"duplicate sample for node {node} at t={t}", lineno)
        per_node[t] = (x, y)
    if not header_seen:
        raise TraceError("empty trace")
    if not samples:
        raise TraceError("trace has no samples")
    ids = sorted(samples, key=_node_key)
    times, xs, ys = [], [], []
    for node in ids:
        ordered = sorted(samples[node].items())
        times.append(np.array([t for t, _ in ordered]))
        xs.append(np.array([p[0] for _, p in ordered]))
        ys.append(np.array([p[1] for _, p in ordered]))
    return Trace(ids, times, xs, ys)


def load_trace(path) -> Trace:
    try:
        with open(path, newline="") as fh:
            return parse_canonical(fh)
    except OSError as exc:
        raise TraceError(f"cannot read {path}: {exc}") from exc


@dataclass(frozen=True)
class TraceSchema:
    """Where the canonical fields live in a raw log.

    Column references are header names, or 0-based indices when the raw
    file has no header.  ``coords='latlon'`` reads x as longitude and y as
    latitude in degrees and projects them onto a local plane around the
    first sample.
    """

    node: str = "node_id"
    time: str = "time_s"
    x: str = "x_m"
    y: str = "y_m"
    delimiter: str = ","
    has_header: bool = True
    time_scale: float = 1.0
    coords: str = "xy"

    @classmethod
    def parse(cls, spec: str, **kwargs) -> "TraceSchema":
        """Build from ``"node=id,time=ts,x=lon,y=lat"``."""
        mapping = {}
        for part in filter(None, (p.strip() for p in spec.split(","))):
            key, sep, value = part.partition("=")
            if not sep or key not in ("node", "time", "x", "y"):
                raise TraceError(f"bad schema entry {part!r}")
            mapping[key] = value
        return cls(**mapping, **kwargs)


def _fmt(value: float) -> str:
    text = f"{value:.3f}"
    return "0.000" if text == "-0.000" else text


def convert_trace(raw: Iterable[str], schema: TraceSchema = TraceSchema()) -> str:
    """Convert a raw movement log to canonical CSV text."""
    if schema.coords not in ("xy", "latlon"):
        raise TraceError(f"unknown coordinate system {schema.coords!r}")
    reader = csv.reader(raw, delimiter=schema.delimiter)
    columns = None
    rows = []
    origin = None
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if columns is None:
            if schema.has_header:
                header = [c.strip() for c in row]
                try:
                    columns = [header.index(name) for name in (schema.node, schema.time, schema.x, schema.y)]
                except ValueError as exc:
                    raise TraceError(f"missing column: {exc}", lineno) from None
                continue
            try:
                columns = [int(c) for c in (schema.node, schema.time, schema.x, schema.y)]
            except ValueError:
                raise TraceError("headerless schema needs integer column indices") from None
        if len(row) <= max(columns):
            raise TraceError(f"expected at least {max(columns) + 1} fields, got {len(row)}", lineno)
        node = row[columns[0]].strip()
        if not node:
            raise TraceError("empty node id", lineno)
        try:
            t = float(row[columns[1]]) * schema.time_scale
            a = float(row[columns[2]])
            b = float(row[columns[3]])
        except ValueError:
            raise TraceError("time and coordinates must be numbers", lineno) from None
        if not all(math.isfinite(v) for v in (t, a, b)):
            raise TraceError("non-finite value", lineno)
        if schema.coords == "latlon":
            lon, lat = a, b  # x column holds longitude, y latitude
            if origin is None:
                origin = (lat, lon)
            x = EARTH_RADIUS_M * math.radians(lon - origin[1]) * math.cos(math.radians(origin[0]))
            y = EARTH_RADIUS_M * math.radians(lat - origin[0])
        else:
            x, y = a, b
        rows.append((node, t, x, y, lineno))
    if columns is None:
        raise TraceError("empty input")
    rows.sort(key=lambda r: (_node_key(r[0]), r[1]))
    out = io.StringIO()
    out.write(",".join(CANONICAL_HEADER) + "\n")
    seen = set()
    for node, t, x, y, lineno in rows:
        key = (node, _fmt(t))
        if key in seen:
            raise TraceError(f"duplicate sample for node {node} at t={key[1]}", lineno)
        seen.add(key)
        out.write(f"{node},{_fmt(t)},{_fmt(x)},{_fmt(y)}\n")
    return out.getvalue()


def synthetic_trace(users: int = 60, duration: float = 3600.0, step: float = 30.0,
                    area: float = 60.0, seed: int = 0) -> str:
    """Festival-like canonical trace: staggered arrivals, random waypoints, early leavers."""
    rng = random.Random(seed)
    out = io.StringIO()
    out.write(",".join(CANONICAL_HEADER) + "\n")
    for node in range(users):
        start = rng.uniform(0, duration / 3)
        stop = duration if rng.random() < 0.8 else rng.uniform(start + duration / 3, duration)
        x, y = rng.uniform(0, area), rng.uniform(0, area)
        t = start
        while t <= stop:
            out.write(f"{node},{_fmt(t)},{_fmt(x)},{_fmt(y)}\n")
            heading = rng.uniform(0, 2 * math.pi)
            dist = rng.uniform(0, 1.4 * step)
            x = min(area, max(0.0, x + dist * math.cos(heading)))
            y = min(area, max(0.0, y + dist * math.sin(heading)))
            t += step
    return out.getvalue()


SYNTHETIC_TRACE_PATH = Path(__file__).resolve().parent.parent / "data" / "synthetic_trace.csv"
