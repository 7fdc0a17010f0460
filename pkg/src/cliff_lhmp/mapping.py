"""CLiFF-map construction: grid binning, per-cell SWGMM fitting, serialization."""

from __future__ import annotations

import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .core import (
    TWO_PI,
    WINDINGS,
    CliffCell,
    CliffMap,
    GridKey,
    Swgmm,
    Swnd,
    cell_center,
    grid_key,
    wrap_2pi,
    wrap_angle,
)
from .ingestion import Trajectory
from .rng import substream

log = logging.getLogger(__name__)

MAP_FORMAT = "cliff-map"
MAP_VERSION = 1


class EmptyMapError(ValueError):
    pass


class MapFormatError(ValueError):
    pass


class MapVersionError(MapFormatError):
    pass


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class BuilderConfig:
    resolution: float = 1.0
    max_components: int = 5
    min_observations_per_cell: int = 10
    em_max_iterations: int = 200
    em_convergence_tol: float = 1e-6
    covariance_floor: float = 1e-4
    motion_speed_threshold: float = 0.1
    kmeans_iterations: int = 10
    seed: int = 0

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError(f"resolution must be > 0, got {self.resolution}")
        if self.max_components < 1:
            raise ValueError("max_components must be >= 1")
        if self.min_observations_per_cell < 1:
            raise ValueError("min_observations_per_cell must be >= 1")
        if self.em_max_iterations < 1:
            raise ValueError("em_max_iterations must be >= 1")
        if not (self.em_convergence_tol > 0 and self.covariance_floor > 0):
            raise ValueError("tolerances must be > 0")
        if self.motion_speed_threshold < 0:
            raise ValueError("motion_speed_threshold must be >= 0")


@dataclass
class CellObservations:
    """Velocities observed inside one grid cell.

    ``theta``/``rho``/``time`` hold the moving (``rho > 0``) states used for
    fitting; ``stationary`` counts the zero-speed states seen in the cell.
    """

    key: GridKey
    theta: np.ndarray
    rho: np.ndarray
    time: np.ndarray
    stationary: int = 0

    def __len__(self) -> int:
        return len(self.rho)

    @property
    def total_frames(self) -> int:
        return len(self.rho) + self.stationary


def bin_observations(trajectories: Iterable[Trajectory], resolution: float) -> dict[GridKey, CellObservations]:
    """Assign every state to cell ``(floor(x/res), floor(y/res))``."""
    buckets: dict[GridKey, list[list[float]]] = {}
    stationary: dict[GridKey, int] = {}
    for tr in trajectories:
        for x, y, rho, theta, t in zip(tr.x, tr.y, tr.rho, tr.theta, tr.t):
            key = grid_key(x, y, resolution)
            if rho > 0:
                buckets.setdefault(key, []).append([theta, rho, t])
            else:
                stationary[key] = stationary.get(key, 0) + 1
    out = {}
    for key in sorted(set(buckets) | set(stationary)):
        arr = np.array(buckets.get(key, []), dtype=float).reshape(-1, 3)
        out[key] = CellObservations(key, arr[:, 0], arr[:, 1], arr[:, 2], stationary.get(key, 0))
    return out


def compute_motion_ratio(cell: CellObservations, cell_total_frames: int | None = None,
                         speed_threshold: float = 0.1) -> float | None:
    """Fraction of frames in the cell with speed above ``speed_threshold``.

    Returns ``None`` when the cell saw no frames or no motion, in which case
    it carries no mixture.
    """
    total = cell.total_frames if cell_total_frames is None else int(cell_total_frames)
    moving = int(np.count_nonzero(cell.rho > speed_threshold))
    if total < moving:
        raise ValueError(f"total frames ({total}) smaller than moving frames ({moving})")
    if total == 0 or moving == 0:
        return None
    return moving / total


# --------------------------------------------------------------------------
# EM on semi-wrapped mixtures


@dataclass
class EMResult:
    mixture: Swgmm
    log_likelihood: float
    history: list[float] = field(default_factory=list)
    converged: bool = True
    n_iter: int = 0

    @property
    def n_components(self) -> int:
        return len(self.mixture)

    def bic(self, n: int) -> float:
        return -2.0 * self.log_likelihood + n_parameters(self.n_components) * math.log(n)


def n_parameters(n_components: int) -> int:
    # per component: 2 mean + 3 covariance + 1 weight; weights sum to one
    return 6 * n_components - 1


def _floor_cov(s: np.ndarray, floor: float) -> np.ndarray:
    """Clip eigenvalues of one (2, 2) or a stack of (..., 2, 2) covariances."""
    s = 0.5 * (s + np.swapaxes(s, -1, -2))
    w, v = np.linalg.eigh(s)
    s = np.einsum("...ik,...jk->...ij", v * np.maximum(w, floor)[..., None, :], v)
    s[..., 1, 0] = s[..., 0, 1]
    return s


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1)
    return m + np.log(np.exp(a - m[:, None]).sum(axis=1))


def _kmeanspp(emb: np.ndarray, k: int, rng: np.random.Generator, iterations: int) -> np.ndarray:
    """k-means++ seeding plus a few Lloyd steps; returns labels."""
    n = len(emb)
    centers = [emb[rng.integers(n)]]
    d2 = ((emb - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers.append(emb[idx])
        d2 = np.minimum(d2, ((emb - emb[idx]) ** 2).sum(axis=1))
    centers = np.array(centers)
    labels = np.zeros(n, dtype=int)
    for _ in range(max(iterations, 1)):
        dist = ((emb[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = dist.argmin(axis=1)
        if np.array_equal(new, labels) and _ > 0:
            break
        labels = new
        for j in range(k):
            members = emb[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    return labels


def _init_params(theta, rho, k, cfg, rng):
    emb = np.column_stack([np.cos(theta), np.sin(theta), rho])
    labels = _kmeanspp(emb, k, rng, cfg.kmeans_iterations)
    n = len(theta)
    means = np.empty((k, 2))
    covs = np.empty((k, 2, 2))
    weights = np.empty(k)
    for j in range(k):
        sel = labels == j
        if not sel.any():
            sel = np.zeros(n, dtype=bool)
            sel[rng.integers(n)] = True
        th, rh = theta[sel], rho[sel]
        mt = math.atan2(np.sin(th).mean(), np.cos(th).mean())
        resid = np.column_stack([wrap_angle(th - mt), rh - rh.mean()])
        s = np.einsum("ni,nj->ij", resid, resid) / len(th)
        means[j] = (wrap_2pi(mt), rh.mean())
        covs[j] = _floor_cov(s, cfg.covariance_floor)
        weights[j] = max(sel.sum(), 1) / n
    return weights / weights.sum(), means, covs


def _log_terms(theta, rho, weights, means, covs):
    """``log(pi_j) + log N([theta + 2 pi k, rho]; mu_j, Sigma_j)``, shape (n, J, 3)."""
    shifts = TWO_PI * np.asarray(WINDINGS, dtype=float)
    det = covs[:, 0, 0] * covs[:, 1, 1] - covs[:, 0, 1] ** 2
    p00 = covs[:, 1, 1] / det
    p11 = covs[:, 0, 0] / det
    p01 = -covs[:, 0, 1] / det
    d0 = theta[:, None, None] + shifts[None, None, :] - means[None, :, 0, None]
    d1 = (rho[:, None] - means[None, :, 1])[:, :, None]
    maha = p00[None, :, None] * d0 * d0 + 2 * p01[None, :, None] * d0 * d1 + p11[None, :, None] * d1 * d1
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    return (logw - math.log(TWO_PI) - 0.5 * np.log(det))[None, :, None] - 0.5 * maha


def _to_mixture(weights, means, covs) -> Swgmm:
    keep = weights > 1e-12
    w = weights[keep] / weights[keep].sum()
    comps = [
        (float(wi), Swnd((float(m[0]), float(m[1])), ((float(c[0, 0]), float(c[0, 1])), (float(c[0, 1]), float(c[1, 1])))))
        for wi, m, c in zip(w, means[keep], covs[keep])
    ]
    comps.sort(key=lambda c: (-c[0], c[1].mu))
    # sorting may reorder float additions; renormalize so weights sum to one exactly enough
    total = math.fsum(c[0] for c in comps)
    return Swgmm(tuple((c[0] / total, c[1]) for c in comps))


def em_fit(theta, rho, n_components: int, cfg: BuilderConfig, rng: np.random.Generator) -> EMResult:
    """Maximum-likelihood SWGMM with ``n_components`` components.

    Each datum is softly assigned to a (component, winding) pair. The M-step
    takes responsibility-weighted means and covariances of the unwrapped data
    ``(theta + 2 pi k, rho)``, floors covariance eigenvalues at
    ``cfg.covariance_floor`` and re-wraps the mean direction into ``[0, 2 pi)``.
    """
    # contiguous copies: numpy reductions over strided views round differently,
    # which would make results depend on how the arrays reached this process
    theta = np.ascontiguousarray(theta, dtype=float)
    rho = np.ascontiguousarray(rho, dtype=float)
    n = len(theta)
    if n == 0:
        raise ValueError("no observations to fit")
    weights, means, covs = _init_params(theta, rho, n_components, cfg, rng)
    shifts = TWO_PI * np.asarray(WINDINGS, dtype=float)
    history: list[float] = []
    best = None
    converged = False
    it = 0
    for it in range(cfg.em_max_iterations + 1):
        lt = _log_terms(theta, rho, weights, means, covs)
        ll_i = _logsumexp_rows(lt.reshape(n, -1))
        ll = float(ll_i.sum())
        history.append(ll)
        if best is None or ll > best[0]:
            best = (ll, weights.copy(), means.copy(), covs.copy())
        if len(history) > 1 and abs(history[-1] - history[-2]) < cfg.em_convergence_tol * n:
            converged = True
            break
        if it == cfg.em_max_iterations:
            break
        resp = np.exp(lt - ll_i[:, None, None])  # (n, J, 3)
        nk = resp.sum(axis=(0, 2))
        alive = nk >= 1e-10
        safe = np.where(alive, nk, 1.0)
        th_unwrapped = theta[:, None] + shifts[None, :]  # (n, 3)
        rj = resp.sum(axis=2)  # (n, J)
        mt = np.einsum("njk,nk->j", resp, th_unwrapped) / safe
        mr = np.einsum("n,nj->j", rho, rj) / safe  # not BLAS: keeps sums identical across processes
        d0 = th_unwrapped[:, None, :] - mt[None, :, None]  # (n, J, 3)
        d1 = rho[:, None] - mr[None, :]  # (n, J)
        s00 = np.einsum("njk,njk->j", resp, d0 * d0) / safe
        s01 = np.einsum("njk,nj->j", resp * d0, d1) / safe
        s11 = np.einsum("nj,nj->j", rj, d1 * d1) / safe
        new_covs = _floor_cov(np.stack([np.stack([s00, s01], -1), np.stack([s01, s11], -1)], -2),
                              cfg.covariance_floor)
        covs[alive] = new_covs[alive]
        means[alive, 0] = wrap_2pi(mt[alive])
        means[alive, 1] = mr[alive]
        weights = np.where(alive, nk / n, 0.0)
        weights = weights / weights.sum()
    if not converged:
        warnings.warn(
            f"EM with {n_components} components did not converge in {cfg.em_max_iterations} iterations; "
            "returning the best parameters seen",
            ConvergenceWarning,
            stacklevel=2,
        )
    ll, weights, means, covs = best
    return EMResult(_to_mixture(weights, means, covs), ll, history, converged, it)


def fit_swgmm(obs: CellObservations, cfg: BuilderConfig, rng: np.random.Generator) -> Swgmm:
    """Fit J = 1..max_components and keep the fit with the lowest BIC."""
    return select_model(obs.theta, obs.rho, cfg, rng).mixture


def select_model(theta, rho, cfg: BuilderConfig, rng: np.random.Generator) -> EMResult:
    n = len(theta)
    if n < cfg.min_observations_per_cell:
        raise ValueError(f"{n} observations, need at least {cfg.min_observations_per_cell}")
    best, best_bic = None, math.inf
    for j in range(1, cfg.max_components + 1):
        if n < n_parameters(j):
            break
        res = em_fit(theta, rho, j, cfg, rng)
        bic = res.bic(n)
        if bic < best_bic:
            best, best_bic = res, bic
    if best is None:
        raise ValueError(f"{n} observations are too few for even one component")
    return best


# --------------------------------------------------------------------------
# map assembly


def _fit_cell(args):
    obs, cfg = args
    rng = substream(cfg.seed, obs.key[0], obs.key[1])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        return obs.key, fit_swgmm(obs, cfg, rng)


def build_cliff_map(trajectories: Iterable[Trajectory], cfg: BuilderConfig, workers: int = 1) -> CliffMap:
    """Bin states, fit every eligible cell and attach motion ratios.

    Each cell draws from its own substream of ``cfg.seed``, so the result is
    identical for any worker count.
    """
    trajectories = list(trajectories)
    if not trajectories:
        raise ValueError("no trajectories to build a map from")
    binned = bin_observations(trajectories, cfg.resolution)
    jobs, ratios = [], {}
    for key, obs in binned.items():
        ratio = compute_motion_ratio(obs, obs.total_frames, cfg.motion_speed_threshold)
        if ratio is None or len(obs) < cfg.min_observations_per_cell:
            continue
        ratios[key] = ratio
        jobs.append((obs, cfg))
    if not jobs:
        raise EmptyMapError("empty map: no cell has enough moving observations")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            fitted = dict(pool.map(_fit_cell, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        fitted = dict(map(_fit_cell, jobs))
    entries = {key: (fitted[key], ratios[key], len(binned[key])) for key in sorted(fitted)}
    log.info("built map with %d cells", len(entries))
    return CliffMap.from_grid(cfg.resolution, entries)


# --------------------------------------------------------------------------
# serialization


def map_to_dict(cliff_map: CliffMap) -> dict:
    cells = []
    for (cx, cy), cell in cliff_map.cells.items():
        cells.append({
            "cx": cx,
            "cy": cy,
            "motion_ratio": cell.motion_ratio,
            "count": cell.observation_count,
            "components": [
                {"w": w, "mu": list(n.mu), "sigma": [list(n.sigma[0]), list(n.sigma[1])]}
                for w, n in cell.mixture
            ],
        })
    return {
        "format": MAP_FORMAT,
        "version": MAP_VERSION,
        "resolution": cliff_map.resolution,
        "bounds": list(cliff_map.bounds),
        "cells": cells,
    }


def _require(cond: bool, msg: str):
    if not cond:
        raise MapFormatError(f"schema violation: {msg}")


def _num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def map_from_dict(data: Mapping) -> CliffMap:
    _require(isinstance(data, dict), "top level must be an object")
    if data.get("format") != MAP_FORMAT:
        raise MapFormatError(f"not a CLiFF-map file (format={data.get('format')!r})")
    version = data.get("version")
    if version != MAP_VERSION:
        raise MapVersionError(f"unsupported map version {version!r}; this build reads version {MAP_VERSION}")
    res = data.get("resolution")
    _require(_num(res) and res > 0, "resolution must be a positive number")
    bounds = data.get("bounds")
    _require(isinstance(bounds, list) and len(bounds) == 4 and all(_num(b) for b in bounds),
             "bounds must be [x_min, y_min, x_max, y_max]")
    raw_cells = data.get("cells")
    _require(isinstance(raw_cells, list), "cells must be a list")
    entries = {}
    for i, c in enumerate(raw_cells):
        where = f"cells[{i}]"
        _require(isinstance(c, dict), f"{where} must be an object")
        for k in ("cx", "cy", "motion_ratio", "count", "components"):
            _require(k in c, f"{where} lacks {k!r}")
        _require(isinstance(c["cx"], int) and isinstance(c["cy"], int), f"{where} cx/cy must be integers")
        _require(isinstance(c["count"], int), f"{where}.count must be an integer")
        _require(_num(c["motion_ratio"]), f"{where}.motion_ratio must be a number")
        comps = c["components"]
        _require(isinstance(comps, list) and comps, f"{where}.components must be a non-empty list")
        mix = []
        for j, comp in enumerate(comps):
            cw = f"{where}.components[{j}]"
            _require(isinstance(comp, dict) and {"w", "mu", "sigma"} <= set(comp), f"{cw} needs w, mu, sigma")
            mu, sigma = comp["mu"], comp["sigma"]
            _require(_num(comp["w"]), f"{cw}.w must be a number")
            _require(isinstance(mu, list) and len(mu) == 2 and all(map(_num, mu)), f"{cw}.mu must be [theta, rho]")
            _require(isinstance(sigma, list) and len(sigma) == 2
                     and all(isinstance(r, list) and len(r) == 2 and all(map(_num, r)) for r in sigma),
                     f"{cw}.sigma must be a 2x2 array")
            try:
                mix.append((comp["w"], Swnd(tuple(mu), (tuple(sigma[0]), tuple(sigma[1])))))
            except ValueError as exc:
                raise MapFormatError(f"schema violation: {cw}: {exc}") from None
        key = (c["cx"], c["cy"])
        _require(key not in entries, f"duplicate cell {key}")
        try:
            entries[key] = (Swgmm(tuple(mix)), c["motion_ratio"], c["count"])
        except ValueError as exc:
            raise MapFormatError(f"schema violation: {where}: {exc}") from None
    try:
        m = CliffMap.from_grid(res, entries)
    except ValueError as exc:
        raise MapFormatError(f"schema violation: {exc}") from None
    _require(tuple(bounds) == m.bounds or not entries, f"bounds {bounds} do not match cells {m.bounds}")
    return m


def dumps_map(cliff_map: CliffMap) -> str:
    # repr-based float output round-trips every double exactly
    d = map_to_dict(cliff_map)
    head = {k: v for k, v in d.items() if k != "cells"}
    lines = [json.dumps(head)[:-1] + ', "cells": [']
    lines.append(",\n".join("  " + json.dumps(c) for c in d["cells"]))
    lines.append("]}")
    return "\n".join(lines) + "\n"


def loads_map(text: str) -> CliffMap:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise MapFormatError(f"malformed map file at byte offset {offset}: {exc.msg}") from None
    return map_from_dict(data)


def save_map(cliff_map: CliffMap, path) -> None:
    Path(path).write_text(dumps_map(cliff_map), encoding="utf-8")


def load_map(path) -> CliffMap:
    return loads_map(Path(path).read_text(encoding="utf-8"))


def map_summary(cliff_map: CliffMap) -> dict:
    comps = [len(c.mixture) for c in cliff_map.cells.values()]
    return {
        "cells": len(cliff_map),
        "mean_components": float(np.mean(comps)) if comps else 0.0,
        "coverage_m2": len(cliff_map) * cliff_map.resolution ** 2,
        "resolution": cliff_map.resolution,
        "bounds": cliff_map.bounds,
    }


__all__ = [
    "BuilderConfig",
    "CellObservations",
    "ConvergenceWarning",
    "EMResult",
    "EmptyMapError",
    "MapFormatError",
    "MapVersionError",
    "bin_observations",
    "build_cliff_map",
    "cell_center",
    "compute_motion_ratio",
    "em_fit",
    "fit_swgmm",
    "load_map",
    "loads_map",
    "dumps_map",
    "map_from_dict",
    "map_summary",
    "map_to_dict",
    "save_map",
    "select_model",
]
