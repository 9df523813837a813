"""Leaderless clock agreement by periodic three-majority votes.

Every ``period`` seconds a node draws three clock values from what its
neighbours broadcast since the last vote (plus its own clock), adopts a
value two of them agree on within ``epsilon_ms``, and otherwise adopts one
of the three at random.  It then broadcasts the new value and forgets the
neighbour table.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

TIME_BROADCAST_TAG = 0x20
_TIME_BROADCAST = struct.Struct(">BQ")
TIME_BROADCAST_BYTES = _TIME_BROADCAST.size

DEFAULT_PERIOD = 30.0
DEFAULT_EPSILON_MS = 100.0


class TimeBroadcastError(ValueError):
    pass


@dataclass(frozen=True)
class SyncConfig:
    period: float = DEFAULT_PERIOD
    epsilon_ms: float = DEFAULT_EPSILON_MS
    phase: float = 0.0

    def __post_init__(self):
        if self.period <= 0:
            raise ValueError("vote period must be positive")
        if self.epsilon_ms < 0:
            raise ValueError("epsilon must be non-negative")


@dataclass(frozen=True)
class ClockState:
    """Local clock reading ``value`` (ms) taken at true time ``last_advanced`` (s)."""

    value: float
    drift_rate: float = 0.0  # ms gained per minute of true time
    last_advanced: float = 0.0

    def read(self, true_now: float) -> float:
        elapsed_ms = (true_now - self.last_advanced) * 1000.0
        return self.value + elapsed_ms + elapsed_ms * self.drift_rate / 60000.0

    def set(self, value: float, true_now: float) -> "ClockState":
        return ClockState(value, self.drift_rate, true_now)


def apply_drift(clock: ClockState, elapsed: float) -> ClockState:
    """Advance ``clock`` by ``elapsed`` seconds of true time."""
    if elapsed < 0:
        raise ValueError("elapsed time must be non-negative")
    elapsed_ms = elapsed * 1000.0
    return ClockState(
        clock.value + elapsed_ms + elapsed_ms * clock.drift_rate / 60000.0,
        clock.drift_rate,
        clock.last_advanced + elapsed,
    )


@dataclass
class NeighborClockTable:
    # neighbour id -> (broadcast value, local clock at receipt), both ms
    entries: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def clear(self) -> None:
        self.entries.clear()

    def candidates(self, local_now: float) -> list[float]:
        """Neighbour values aged forward to ``local_now``."""
        return [value + (local_now - received) for value, received in self.entries.values()]


def record_broadcast(table: NeighborClockTable, neighbor_id, clock_value: float,
                     receive_instant: float) -> NeighborClockTable:
    table.entries[neighbor_id] = (clock_value, receive_instant)
    return table


def majority_rule(ti: float, tj: float, tk: float, epsilon: float, rng) -> float:
    if abs(ti - tj) < epsilon or abs(ti - tk) < epsilon:
        return ti
    if abs(tj - tk) < epsilon:
        return tj
    return (ti, tj, tk)[rng.randrange(3)]


def three_majority_vote(table: NeighborClockTable, own_clock: float, epsilon: float, rng) -> float:
    """Run one vote at local time ``own_clock`` and clear ``table``.

    Candidates are the aged neighbour values plus ``own_clock``; the three
    draws are independent, so small tables are sampled with replacement.
    """
    values = table.candidates(own_clock)
    values.append(own_clock)
    n = len(values)
    ti = values[rng.randrange(n)]
    tj = values[rng.randrange(n)]
    tk = values[rng.randrange(n)]
    table.clear()
    return majority_rule(ti, tj, tk, epsilon, rng)


def make_time_broadcast(clock_ms: float) -> bytes:
    return _TIME_BROADCAST.pack(TIME_BROADCAST_TAG, int(round(clock_ms)))


def parse_time_broadcast(data: bytes) -> int:
    if len(data) != TIME_BROADCAST_BYTES:
        raise TimeBroadcastError(f"time broadcast must be {TIME_BROADCAST_BYTES} bytes, got {len(data)}")
    tag, value = _TIME_BROADCAST.unpack(data)
    if tag != TIME_BROADCAST_TAG:
        raise TimeBroadcastError(f"unexpected type tag {tag:#x}")
    return value
