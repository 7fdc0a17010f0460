"""Map-biased constant-velocity rollout and the plain constant-velocity baseline.

A rollout starts from the kernel-weighted observed velocity and advances
with fixed speed. At every new position it samples a direction from the most
active nearby SWGMM and turns toward it by ``d * exp(-beta * d**2)``, where
``d`` is the wrapped angle between sampled and current heading. The rollout
stops as soon as no SWGMM lies within the sampling radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import CliffMap, wrap_2pi, wrap_angle
from .ingestion import State
from .rng import substream


@dataclass(frozen=True)
class PredictorConfig:
    beta: float = 1.0
    r_s: float = 1.0
    delta_t: float = 1.0
    horizon: float = 50.0
    sigma_obs: float = 1.5
    k: int = 20
    seed: int = 0

    def __post_init__(self):
        if not (self.beta >= 0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if not self.r_s > 0:
            raise ValueError(f"r_s must be > 0, got {self.r_s}")
        if not self.delta_t > 0:
            raise ValueError(f"delta_t must be > 0, got {self.delta_t}")
        if not self.horizon >= self.delta_t:
            raise ValueError(f"horizon ({self.horizon}) must be >= delta_t ({self.delta_t})")
        if not self.sigma_obs > 0:
            raise ValueError("sigma_obs must be > 0")
        if self.k < 1:
            raise ValueError("k must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.delta_t))

    @classmethod
    def atc(cls, **kw) -> "PredictorConfig":
        return cls(**{**dict(beta=1.0, r_s=1.0, delta_t=1.0, horizon=50.0), **kw})

    @classmethod
    def thor(cls, **kw) -> "PredictorConfig":
        return cls(**{**dict(beta=1.0, r_s=0.5, delta_t=0.4, horizon=12.0), **kw})

    def with_(self, **kw) -> "PredictorConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class Prediction:
    """Predicted states after the origin; ``complete`` if the horizon was reached."""

    origin: State
    states: tuple[State, ...]
    complete: bool

    def __len__(self) -> int:
        return len(self.states)

    @property
    def xy(self) -> np.ndarray:
        return np.array([(s.x, s.y) for s in self.states]).reshape(-1, 2)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.states])


def observation_weights(n: int, sigma: float) -> np.ndarray:
    """Normalized zero-mean Gaussian weights for lags ``1..n`` (most recent first)."""
    t = np.arange(1, n + 1, dtype=float)
    g = np.exp(-0.5 * (t / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
    return g / g.sum()


def observed_velocity(history: Sequence[State], sigma_obs: float = 1.5) -> tuple[float, float]:
    """Kernel-weighted speed and circular-mean direction of the history.

    ``history`` is ordered oldest to newest; the newest state gets lag 1.
    """
    if len(history) == 0:
        raise ValueError("empty observation history")
    w = observation_weights(len(history), sigma_obs)
    newest_first = history[::-1]
    rho = np.array([s.rho for s in newest_first])
    theta = np.array([s.theta for s in newest_first])
    rho_obs = float(w @ rho)
    theta_obs = wrap_2pi(math.atan2(float(w @ np.sin(theta)), float(w @ np.cos(theta))))
    return rho_obs, theta_obs


def kernel(x: float, beta: float) -> float:
    return math.exp(-beta * x * x)


def sample_direction(x: float, y: float, cliff_map: CliffMap, r_s: float, rng: np.random.Generator) -> float | None:
    """Direction drawn from the nearby SWGMM with the highest motion ratio.

    Ties go to the nearest cell center, then to the smallest grid key.
    Returns ``None`` when no cell center is closer than ``r_s``.
    """
    near = cliff_map.within(x, y, r_s)
    if not near:
        return None
    _, cell, _ = min(near, key=lambda e: (-e[1].motion_ratio, e[2], e[0]))
    return cell.mixture.sample(rng).theta


def advance_position(prev: State, delta_t: float) -> tuple[float, float]:
    return (prev.x + prev.rho * math.cos(prev.theta) * delta_t,
            prev.y + prev.rho * math.sin(prev.theta) * delta_t)


def step(prev: State, theta_s: float | None, cfg: PredictorConfig) -> State:
    """One constant-speed step; the heading is pulled toward ``theta_s`` if given."""
    x, y = advance_position(prev, cfg.delta_t)
    theta = prev.theta
    if theta_s is not None:
        d = wrap_angle(theta_s - prev.theta)
        theta = wrap_2pi(prev.theta + d * kernel(d, cfg.beta))
    return State(x, y, prev.rho, theta, prev.time + cfg.delta_t)


def origin_state(history: Sequence[State], x0: float, y0: float, t0: float, sigma_obs: float) -> State:
    rho, theta = observed_velocity(history, sigma_obs)
    return State(float(x0), float(y0), rho, theta, float(t0))


def _t0(history: Sequence[State], t0: float | None) -> float:
    if t0 is not None:
        return t0
    if len(history) >= 2:
        return history[-1].time + (history[-1].time - history[-2].time)
    return history[-1].time


def predict(history: Sequence[State], x0: float, y0: float, cliff_map: CliffMap, cfg: PredictorConfig,
            rng: np.random.Generator, t0: float | None = None) -> Prediction:
    """Roll out ``cfg.n_steps`` steps; truncate (``complete=False``) when the map runs out.

    A step whose new position has no SWGMM within ``r_s`` is not emitted.
    ``t0`` defaults to one sampling period after the last history state.
    """
    state = origin_state(history, x0, y0, _t0(history, t0), cfg.sigma_obs)
    origin = state
    out = []
    for _ in range(cfg.n_steps):
        x, y = advance_position(state, cfg.delta_t)
        theta_s = sample_direction(x, y, cliff_map, cfg.r_s, rng)
        if theta_s is None:
            return Prediction(origin, tuple(out), False)
        state = step(state, theta_s, cfg)
        out.append(state)
    return Prediction(origin, tuple(out), True)


def rollout_rng(seed: int, traj_key: Sequence[int], rollout: int) -> np.random.Generator:
    return substream(seed, *traj_key, rollout)


def predict_k(history: Sequence[State], x0: float, y0: float, cliff_map: CliffMap, cfg: PredictorConfig,
              traj_key: Sequence[int] = (0,), t0: float | None = None) -> list[Prediction]:
    """``cfg.k`` rollouts, rollout ``i`` seeded from ``(cfg.seed, *traj_key, i)``."""
    return [
        predict(history, x0, y0, cliff_map, cfg, rollout_rng(cfg.seed, traj_key, i), t0)
        for i in range(cfg.k)
    ]


def cvm_predict(history: Sequence[State], x0: float, y0: float, horizon: float, delta_t: float,
                sigma_obs: float = 1.5, t0: float | None = None) -> Prediction:
    """Straight line at the observed velocity; always complete."""
    state = origin_state(history, x0, y0, _t0(history, t0), sigma_obs)
    origin = state
    out = []
    for m in range(1, int(round(horizon / delta_t)) + 1):
        dist = origin.rho * m * delta_t
        out.append(State(origin.x + dist * math.cos(origin.theta), origin.y + dist * math.sin(origin.theta),
                         origin.rho, origin.theta, origin.time + m * delta_t))
    return Prediction(origin, tuple(out), True)
