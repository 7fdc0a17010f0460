"""Synthetic walkers and hand-built maps with known flow fields."""

from __future__ import annotations

import math
from typing import Callable, Iterable

import numpy as np

from .core import CliffMap, GridKey, Swgmm, cell_center, grid_key
from .ingestion import RawTrack

TINY_VAR = 1e-30


def deterministic_mixture(theta: float, rho: float = 1.0, var: float = TINY_VAR) -> Swgmm:
    return Swgmm.single((theta, rho), ((var, 0.0), (0.0, var)))


def map_from_field(resolution: float, keys: Iterable[GridKey], field: Callable[[float, float], float],
                   rho: float = 1.0, var: float = TINY_VAR,
                   ratio: Callable[[float, float], float] | float = 1.0) -> CliffMap:
    """Map whose cell at center ``(x, y)`` has a single mode ``field(x, y)``."""
    entries = {}
    for key in keys:
        cx, cy = cell_center(key, resolution)
        r = ratio(cx, cy) if callable(ratio) else ratio
        entries[key] = (deterministic_mixture(field(cx, cy), rho, var), r, 100)
    return CliffMap.from_grid(resolution, entries)


def box_keys(x0: float, y0: float, x1: float, y1: float, resolution: float) -> list[GridKey]:
    """Grid keys of all cells intersecting the box ``[x0, x1) x [y0, y1)``."""
    kx0, ky0 = grid_key(x0, y0, resolution)
    kx1, ky1 = grid_key(x1 - 1e-12, y1 - 1e-12, resolution)
    return [(i, j) for i in range(kx0, kx1 + 1) for j in range(ky0, ky1 + 1)]


def _track_along(path: Callable[[np.ndarray], np.ndarray], length: float, s0: float, speed: float,
                 duration: float | None, hz: float, noise: float, rng: np.random.Generator,
                 person_id: int, t_start: float) -> RawTrack:
    end = length if duration is None else min(length, s0 + speed * duration)
    n = int(math.floor((end - s0) / speed * hz)) + 1
    t = np.arange(n) / hz
    xy = path(s0 + speed * t)
    xy = xy + rng.normal(0.0, noise, xy.shape)
    return RawTrack(person_id, t_start + t, xy[:, 0], xy[:, 1])


def corridor_walkers(n: int, rng: np.random.Generator, length: float = 40.0, width: float = 3.0,
                     heading: float = 0.0, speed=(1.0, 1.4), hz: float = 10.0, noise: float = 0.02,
                     first_id: int = 1) -> list[RawTrack]:
    """Walkers traversing a straight corridor starting at the origin along ``heading``."""
    c, s = math.cos(heading), math.sin(heading)
    tracks = []
    for i in range(n):
        lane = rng.uniform(-width / 2 + 0.3, width / 2 - 0.3)
        v = rng.uniform(*speed)

        def path(d, lane=lane):
            return np.column_stack([d * c - lane * s, d * s + lane * c])

        tracks.append(_track_along(path, length, 0.0, v, None, hz, noise, rng, first_id + i, 100.0 * i))
    return tracks


class CornerScenario:
    """L-shaped flow: east along a corridor of ``width`` meters, a left turn, then north.

    A walker in lane ``y`` (distance from the south wall) heads east until
    ``x = east_length``, follows an arc about ``(east_length, width +
    inner_radius)`` and continues north. The vertical leg therefore spans
    ``east_length + inner_radius <= x <= east_length + inner_radius + width``.
    """

    def __init__(self, width: float = 6.0, inner_radius: float = 4.0, east_length: float = 16.0,
                 north_end: float = 50.0, speed=(1.0, 1.4), hz: float = 10.0, noise: float = 0.02,
                 sway: float = 0.1, margin: float = 0.6):
        self.width = width
        self.inner_radius = inner_radius
        self.east_length = east_length
        self.north_end = north_end
        self.center = (east_length, width + inner_radius)
        self.lane_range = (margin, width - margin)
        self.speed = speed
        self.hz = hz
        self.noise = noise
        self.sway = sway

    def path(self, lane: float, phase: float = 0.0) -> tuple[Callable[[np.ndarray], np.ndarray], float]:
        cx, cy = self.center
        r = cy - lane
        arc = 0.5 * math.pi * r
        north = self.north_end - cy
        total = self.east_length + arc + north
        sway = self.sway
        east = self.east_length

        def fn(s: np.ndarray) -> np.ndarray:
            s = np.asarray(s, dtype=float)
            off = sway * np.sin(2 * np.pi * s / 9.0 + phase)
            out = np.empty((len(s), 2))
            a = s <= east
            out[a, 0] = s[a]
            out[a, 1] = lane + off[a]
            b = (s > east) & (s <= east + arc)
            phi = (s[b] - east) / r
            rr = r - off[b]
            out[b, 0] = cx + rr * np.sin(phi)
            out[b, 1] = cy - rr * np.cos(phi)
            c = s > east + arc
            out[c, 0] = cx + r - off[c]
            out[c, 1] = cy + (s[c] - east - arc)
            return out

        return fn, total

    def walkers(self, n: int, rng: np.random.Generator, duration: float | None = None,
                start=(0.0, 2.0), first_id: int = 1) -> list[RawTrack]:
        """``n`` walkers starting at ``x`` in ``start``; full path unless ``duration`` is given."""
        out = []
        for i in range(n):
            lane = rng.uniform(*self.lane_range)
            fn, total = self.path(lane, rng.uniform(0, 2 * math.pi))
            v = rng.uniform(*self.speed)
            s0 = rng.uniform(*start)
            out.append(_track_along(fn, total, s0, v, duration, self.hz, self.noise, rng, first_id + i, 100.0 * i))
        return out



def crossing_walkers(n_per_flow: int, rng: np.random.Generator, length: float = 20.0, width: float = 2.0,
                     hz: float = 10.0) -> list[RawTrack]:
    """Two perpendicular corridor flows crossing at ``(length/2, length/2)``."""
    half = length / 2
    a = corridor_walkers(n_per_flow, rng, length, width, 0.0, hz=hz, first_id=1)
    b = corridor_walkers(n_per_flow, rng, length, width, math.pi / 2, hz=hz, first_id=n_per_flow + 1)
    shift_a = [RawTrack(t.person_id, t.t, t.x, t.y + half) for t in a]
    shift_b = [RawTrack(t.person_id, t.t, t.x + half, t.y) for t in b]
    return shift_a + shift_b
