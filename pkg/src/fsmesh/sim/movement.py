"""Node positions over time and the radio neighbour graph."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .config import ConvergingMovement, SimConfig, StaticMovement, TraceMovement
from .trace import Trace, TraceError, load_trace


def grid_positions(users: int, density: float) -> np.ndarray:
    """Row-major square grid, ``ceil(sqrt(users))`` per row, spacing ``1/sqrt(density)``."""
    side = math.ceil(math.sqrt(users))
    spacing = 1.0 / math.sqrt(density)
    idx = np.arange(users)
    return np.column_stack(((idx % side) * spacing, (idx // side) * spacing)).astype(float)


@dataclass
class _GroupPath:
    members: np.ndarray  # node indices
    offsets: np.ndarray  # member offsets from the group centroid
    spawn: np.ndarray
    target: np.ndarray
    depart: float
    arrive: float
    leave: float
    home: float

    def centroid(self, t: float) -> np.ndarray:
        if t <= self.depart or t >= self.home:
            return self.spawn
        if t < self.arrive:
            f = (t - self.depart) / (self.arrive - self.depart)
        elif t <= self.leave:
            return self.target
        else:
            f = (self.home - t) / (self.home - self.leave)
        return self.spawn + f * (self.target - self.spawn)


class ConvergingModel:
    """Groups spawn on a circle, walk straight to the centre, dwell, walk back.

    The dwell window is centred in the run.  Each group stops one group-width
    short of the centre along its own approach direction, so the gathered
    groups sit side by side instead of on top of each other.
    """

    def __init__(self, movement: ConvergingMovement, config: SimConfig):
        users, groups = config.users, movement.groups
        spacing = 1.0 / math.sqrt(config.density)
        self.users = users
        self.groups: list[_GroupPath] = []
        for g in range(groups):
            members = np.arange(g, users, groups)
            local = grid_positions(len(members), config.density)
            offsets = local - local.mean(axis=0)
            extent = (math.ceil(math.sqrt(len(members))) - 1) * spacing / 2
            angle = 2 * math.pi * g / groups
            direction = np.array([math.cos(angle), math.sin(angle)])
            spawn = movement.spawn_radius * direction
            target = (extent + spacing / 2) * direction if groups > 1 else np.zeros(2)
            travel = float(np.linalg.norm(spawn - target)) / movement.speed
            depart = max(0.0, config.duration / 2 - movement.dwell / 2 - travel)
            arrive = depart + travel
            leave = arrive + movement.dwell
            self.groups.append(_GroupPath(members, offsets, spawn, target, depart, arrive,
                                          leave, leave + travel))

    def positions(self, t: float) -> np.ndarray:
        out = np.empty((self.users, 2))
        for group in self.groups:
            out[group.members] = group.centroid(t) + group.offsets
        return out


class MovementModel:
    """Uniform ``positions(t)`` over the three movement kinds; NaN rows are absent nodes."""

    def __init__(self, config: SimConfig, trace: Trace | None = None):
        movement = config.movement
        self.static = isinstance(movement, StaticMovement)
        if self.static:
            self._grid = grid_positions(config.users, config.density)
            self._model = None
        elif isinstance(movement, ConvergingMovement):
            self._model = ConvergingModel(movement, config)
        elif isinstance(movement, TraceMovement):
            trace = trace if trace is not None else load_trace(movement.path)
            if trace.users != config.users:
                raise TraceError(f"trace has {trace.users} nodes but the config asks for {config.users}")
            self._model = trace
        else:
            raise TypeError(f"unknown movement {movement!r}")

    def positions(self, t: float) -> np.ndarray:
        if self.static:
            return self._grid
        return self._model.positions(t)


def build_positions(config: SimConfig, t: float, trace: Trace | None = None) -> np.ndarray:
    return MovementModel(config, trace).positions(t)


def connectivity(positions: np.ndarray, radius: float) -> list[set]:
    """Neighbour sets; an edge exists iff distance <= radius, absent (NaN) nodes have none."""
    n = len(positions)
    neighbors: list[set] = [set() for _ in range(n)]
    present = np.flatnonzero(~np.isnan(positions).any(axis=1))
    if len(present) < 2:
        return neighbors
    tree = cKDTree(positions[present])
    # a hair of slack so points exactly at the radius survive float rounding
    for a, b in tree.query_pairs(radius * (1 + 1e-12)):
        i, j = int(present[a]), int(present[b])
        neighbors[i].add(j)
        neighbors[j].add(i)
    return neighbors
