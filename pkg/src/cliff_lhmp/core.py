"""Circular-linear probability primitives.

Velocities are (direction, speed) pairs. Directions are stored in ``[0, 2*pi)``
and every difference between two directions goes through :func:`wrap_angle`.
The semi-wrapped normal density sums the bivariate normal over the winding
numbers ``k in {-1, 0, 1}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi
WINDINGS = (-1, 0, 1)

# Covariances are accepted down to a vanishing scale (deterministic maps use
# them); they are rejected only when non-positive or numerically singular.
MIN_EIGENVALUE = 0.0
MAX_CONDITION = 1e12


class InvalidDistributionError(ValueError):
    """Raised for malformed SWND/SWGMM parameters."""


def wrap_angle(x):
    """Wrap an angle (or array of angles) into ``(-pi, pi]``."""
    if np.isscalar(x):
        x = float(x)
        if not math.isfinite(x):
            raise ValueError(f"non-finite angle: {x!r}")
        if -math.pi < x <= math.pi:
            return x
        r = math.pi - (math.pi - x) % TWO_PI
        return math.pi if r <= -math.pi else r
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite angle in input")
    out = np.pi - np.mod(np.pi - arr, TWO_PI)
    out = np.where(out <= -np.pi, np.pi, out)
    return np.where((arr > -np.pi) & (arr <= np.pi), arr, out)


def wrap_2pi(x):
    """Wrap an angle (or array) into ``[0, 2*pi)``."""
    if np.isscalar(x):
        x = float(x)
        if not math.isfinite(x):
            raise ValueError(f"non-finite angle: {x!r}")
        if 0.0 <= x < TWO_PI:
            return x
        r = x % TWO_PI
        # x % 2pi may round up to exactly 2pi for tiny negative x
        return 0.0 if r >= TWO_PI else r
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite angle in input")
    r = np.mod(arr, TWO_PI)
    return np.where(r >= TWO_PI, 0.0, r)


@dataclass(frozen=True)
class Velocity:
    """Direction ``theta`` (radians) and speed ``rho`` (m/s).

    ``theta`` is normalized into ``[0, 2*pi)`` on construction.
    """

    theta: float
    rho: float

    def __post_init__(self):
        if not math.isfinite(self.rho):
            raise ValueError(f"non-finite speed: {self.rho!r}")
        if self.rho < 0:
            raise ValueError(f"speed must be >= 0, got {self.rho}")
        object.__setattr__(self, "theta", wrap_2pi(self.theta))
        object.__setattr__(self, "rho", float(self.rho))


@dataclass(frozen=True)
class Swnd:
    """Semi-wrapped normal distribution over (theta, rho).

    ``mu`` is ``(theta, rho)`` and ``sigma`` the 2x2 covariance as nested tuples,
    so instances compare and hash by value.
    """

    mu: tuple[float, float]
    sigma: tuple[tuple[float, float], tuple[float, float]]
    _mean: np.ndarray = field(init=False, repr=False, compare=False)
    _chol: np.ndarray = field(init=False, repr=False, compare=False)
    _prec: np.ndarray = field(init=False, repr=False, compare=False)
    _log_norm: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        theta, rho = (float(v) for v in self.mu)
        if not (math.isfinite(theta) and math.isfinite(rho)):
            raise InvalidDistributionError(f"non-finite mean {self.mu!r}")
        s = np.asarray(self.sigma, dtype=float)
        if s.shape != (2, 2) or not np.all(np.isfinite(s)):
            raise InvalidDistributionError(f"covariance must be a finite 2x2 matrix, got {self.sigma!r}")
        if s[0, 1] != s[1, 0]:
            raise InvalidDistributionError("covariance must be symmetric")
        eig = np.linalg.eigvalsh(s)
        if eig[0] <= MIN_EIGENVALUE or eig[1] / eig[0] > MAX_CONDITION:
            raise InvalidDistributionError(f"covariance is singular or not positive definite (eigenvalues {eig})")
        theta = wrap_2pi(theta)
        object.__setattr__(self, "mu", (theta, rho))
        object.__setattr__(self, "sigma", ((float(s[0, 0]), float(s[0, 1])), (float(s[1, 0]), float(s[1, 1]))))
        chol = np.linalg.cholesky(s)
        object.__setattr__(self, "_mean", np.array([theta, rho]))
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_prec", np.linalg.inv(s))
        log_det = 2.0 * float(np.log(np.diag(chol)).sum())
        object.__setattr__(self, "_log_norm", -math.log(TWO_PI) - 0.5 * log_det)

    @property
    def mean(self) -> np.ndarray:
        return self._mean.copy()

    @property
    def cov(self) -> np.ndarray:
        return np.array(self.sigma)

    def log_terms(self, theta, rho) -> np.ndarray:
        """Log bivariate-normal terms for each winding; shape ``(..., 3)``.

        Windings are counted from the representative of ``theta - mu`` in
        ``[-pi, pi)``, so the dropped terms (|k| >= 2) lie at least 3 pi away.
        """
        theta = np.asarray(theta, dtype=float)[..., None]
        rho = np.asarray(rho, dtype=float)[..., None]
        shifts = TWO_PI * np.asarray(WINDINGS, dtype=float)
        d0 = np.mod(theta - self._mean[0] + math.pi, TWO_PI) - math.pi + shifts
        d1 = rho - self._mean[1]
        p = self._prec
        maha = p[0, 0] * d0 * d0 + 2.0 * p[0, 1] * d0 * d1 + p[1, 1] * d1 * d1
        return self._log_norm - 0.5 * maha

    def pdf(self, theta, rho):
        """Vectorized density at ``(theta, rho)``."""
        return np.exp(self.log_terms(theta, rho)).sum(axis=-1)

    def sample(self, rng: np.random.Generator) -> Velocity:
        z = rng.standard_normal(2)
        theta, rho = self._mean + self._chol @ z
        return Velocity(theta, max(rho, 0.0))


@dataclass(frozen=True)
class Swgmm:
    """Mixture of SWNDs: ``components`` is a tuple of ``(weight, Swnd)``."""

    components: tuple[tuple[float, Swnd], ...]
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        comps = tuple((float(w), n) for w, n in self.components)
        if not comps:
            raise InvalidDistributionError("mixture needs at least one component")
        weights = np.array([w for w, _ in comps])
        if np.any(weights < 0) or np.any(weights > 1) or not np.all(np.isfinite(weights)):
            raise InvalidDistributionError(f"weights must lie in [0, 1], got {weights}")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise InvalidDistributionError(f"weights must sum to 1, got {weights.sum()!r}")
        for _, n in comps:
            if not isinstance(n, Swnd):
                raise InvalidDistributionError(f"component is not an Swnd: {n!r}")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "_cum", np.cumsum(weights))

    @classmethod
    def single(cls, mu, sigma) -> "Swgmm":
        return cls(((1.0, Swnd(tuple(mu), tuple(map(tuple, sigma)))),))

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.components])

    def __len__(self) -> int:
        return len(self.components)

    def __iter__(self) -> Iterator[tuple[float, Swnd]]:
        return iter(self.components)

    def pdf(self, theta, rho):
        out = 0.0
        for w, n in self.components:
            out = out + w * n.pdf(theta, rho)
        return out

    def dominant(self) -> Swnd:
        """Component with the largest weight (first one on ties)."""
        return max(self.components, key=lambda c: c[0])[1]

    def sample(self, rng: np.random.Generator) -> Velocity:
        u = rng.random() * self._cum[-1]
        j = int(np.searchsorted(self._cum, u, side="right"))
        j = min(j, len(self.components) - 1)
        return self.components[j][1].sample(rng)


def swnd_pdf(v: Velocity, n: Swnd) -> float:
    return float(n.pdf(v.theta, v.rho))


def swgmm_pdf(v: Velocity, g: Swgmm) -> float:
    return float(g.pdf(v.theta, v.rho))


def sample_swgmm(g: Swgmm, rng: np.random.Generator) -> Velocity:
    """Pick a component by weight, draw from its normal, wrap theta, clamp rho at 0."""
    return g.sample(rng)


GridKey = tuple[int, int]


@dataclass(frozen=True)
class CliffCell:
    location: tuple[float, float]
    mixture: Swgmm
    motion_ratio: float
    observation_count: int

    def __post_init__(self):
        if not 0.0 <= self.motion_ratio <= 1.0:
            raise ValueError(f"motion ratio must be in [0, 1], got {self.motion_ratio}")
        if self.observation_count < 0:
            raise ValueError("observation count must be >= 0")


def cell_center(key: GridKey, resolution: float) -> tuple[float, float]:
    return ((key[0] + 0.5) * resolution, (key[1] + 0.5) * resolution)


def grid_key(x: float, y: float, resolution: float) -> GridKey:
    return (math.floor(x / resolution), math.floor(y / resolution))


class CliffMap:
    """Grid of SWGMMs keyed by integer cell coordinate.

    Cell ``(cx, cy)`` covers ``[cx*res, (cx+1)*res) x [cy*res, (cy+1)*res)`` and
    its SWGMM is located at the square's center.
    """

    def __init__(self, resolution: float, cells: Mapping[GridKey, CliffCell]):
        if not (resolution > 0 and math.isfinite(resolution)):
            raise ValueError(f"resolution must be > 0, got {resolution}")
        self.resolution = float(resolution)
        self._cells: dict[GridKey, CliffCell] = {}
        for key in sorted(cells):
            cell = cells[key]
            cx, cy = cell_center(key, self.resolution)
            if not (math.isclose(cell.location[0], cx, abs_tol=1e-9)
                    and math.isclose(cell.location[1], cy, abs_tol=1e-9)):
                raise ValueError(f"cell {key} location {cell.location} is off the grid lattice")
            self._cells[(int(key[0]), int(key[1]))] = cell
        self._offsets: dict[float, list[GridKey]] = {}

    @classmethod
    def from_grid(cls, resolution: float, entries: Mapping[GridKey, tuple[Swgmm, float, int]]) -> "CliffMap":
        cells = {
            key: CliffCell(cell_center(key, resolution), mix, ratio, count)
            for key, (mix, ratio, count) in entries.items()
        }
        return cls(resolution, cells)

    @property
    def cells(self) -> Mapping[GridKey, CliffCell]:
        return self._cells

    def __len__(self) -> int:
        return len(self._cells)

    def __iter__(self) -> Iterator[GridKey]:
        return iter(self._cells)

    def __eq__(self, other) -> bool:
        if not isinstance(other, CliffMap):
            return NotImplemented
        return self.resolution == other.resolution and self._cells == other._cells

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        if not self._cells:
            return (0.0, 0.0, 0.0, 0.0)
        xs = [k[0] for k in self._cells]
        ys = [k[1] for k in self._cells]
        r = self.resolution
        return (min(xs) * r, min(ys) * r, (max(xs) + 1) * r, (max(ys) + 1) * r)

    def _candidate_keys(self, x: float, y: float, radius: float) -> Iterable[GridKey]:
        r = self.resolution
        kx0, kx1 = math.floor((x - radius) / r) - 1, math.floor((x + radius) / r) + 1
        ky0, ky1 = math.floor((y - radius) / r) - 1, math.floor((y + radius) / r) + 1
        if (kx1 - kx0 + 1) * (ky1 - ky0 + 1) > len(self._cells):
            return self._cells.keys()
        return ((i, j) for i in range(kx0, kx1 + 1) for j in range(ky0, ky1 + 1))

    def within(self, x: float, y: float, radius: float) -> list[tuple[GridKey, CliffCell, float]]:
        """Cells whose centers are strictly closer than ``radius`` to ``(x, y)``."""
        out = []
        cells = self._cells
        for key in self._candidate_keys(x, y, radius):
            cell = cells.get(key)
            if cell is None:
                continue
            d = math.hypot(cell.location[0] - x, cell.location[1] - y)
            if d < radius:
                out.append((key, cell, d))
        return out

    def cell_at(self, x: float, y: float) -> CliffCell | None:
        return self._cells.get(grid_key(x, y, self.resolution))


def rotate_points(xy: Sequence[float] | np.ndarray, phi: float, origin=(0.0, 0.0)) -> np.ndarray:
    """Rotate points counter-clockwise by ``phi`` about ``origin``."""
    p = np.asarray(xy, dtype=float) - np.asarray(origin, dtype=float)
    c, s = math.cos(phi), math.sin(phi)
    rot = np.array([[c, -s], [s, c]])
    return p @ rot.T + np.asarray(origin, dtype=float)
