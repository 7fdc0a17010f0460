"""Displacement metrics and horizon/parameter sweeps.

Predicted step ``m`` (time ``t0 + m * dt``) is compared with the ground truth
linearly interpolated at the same time. A truncated rollout only counts up to
its last predicted point, and a trajectory shorter than the horizon counts up
to its own end.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .core import CliffMap
from .ingestion import SplitTrajectory, State, Trajectory, filter_and_split
from .predictor import Prediction, PredictorConfig, cvm_predict, predict_k

log = logging.getLogger(__name__)

CLIFF = "cliff-lhmp"
CVM = "cvm"


class EvaluationError(ValueError):
    pass


def _xy(obj) -> np.ndarray:
    if isinstance(obj, Prediction):
        return obj.xy
    arr = obj
    if len(obj) and isinstance(obj[0], State):
        arr = [(s.x, s.y) for s in obj]
    return np.asarray(arr, dtype=float).reshape(-1, 2)


def displacement(pred, gt, n_steps: int | None = None) -> np.ndarray:
    """Per-step Euclidean errors over the steps both sequences share."""
    p, g = _xy(pred), _xy(gt)
    m = min(len(p), len(g))
    if n_steps is not None:
        m = min(m, n_steps)
    if m == 0:
        raise EvaluationError("prediction and ground truth share no time steps")
    return np.hypot(*(p[:m] - g[:m]).T)


def ade(pred, gt, n_steps: int | None = None) -> float:
    return float(displacement(pred, gt, n_steps).mean())


def fde(pred, gt, n_steps: int | None = None) -> float:
    return float(displacement(pred, gt, n_steps)[-1])


def top_k(predictions: Sequence, gt, metric: Callable = ade, n_steps: int | None = None) -> float:
    """Best (smallest) metric value among the predictions."""
    if len(predictions) == 0:
        raise EvaluationError("top-k needs at least one prediction")
    values = [metric(p, gt, n_steps) for p in predictions if len(_xy(p))]
    if not values:
        raise EvaluationError("no prediction has any step")
    return min(values)


@dataclass(frozen=True)
class MetricsRow:
    method: str
    horizon: float
    n: int
    ade_mean: float
    ade_std: float
    fde_mean: float
    fde_std: float
    topk_ade_mean: float
    topk_fde_mean: float
    completion_ratio: float


def ground_truth_at(split: SplitTrajectory, times: np.ndarray) -> np.ndarray:
    """Interpolated true positions at ``times`` (must not exceed the last true state)."""
    t = np.array([split.current.time] + [s.time for s in split.future])
    x = np.array([split.current.x] + [s.x for s in split.future])
    y = np.array([split.current.y] + [s.y for s in split.future])
    return np.column_stack([np.interp(times, t, x), np.interp(times, t, y)])


def _steps_within(duration: float, delta_t: float) -> int:
    return int(math.floor(duration / delta_t + 1e-9))


@dataclass(frozen=True)
class _Scored:
    """Per-trajectory summary for one horizon and method."""

    ade: float | None
    fde: float | None
    topk_ade: float | None
    topk_fde: float | None
    n_complete: int
    n_rollouts: int


def _score(preds: Sequence[Prediction], gt: np.ndarray, n_needed: int) -> _Scored:
    ades, fdes = [], []
    complete = 0
    for p in preds:
        if len(p) >= n_needed:
            complete += 1
        if len(p) == 0:
            continue
        err = displacement(p, gt, n_needed)
        ades.append(float(err.mean()))
        fdes.append(float(err[-1]))
    if not ades:
        return _Scored(None, None, None, None, complete, len(preds))
    return _Scored(float(np.mean(ades)), float(np.mean(fdes)), min(ades), min(fdes), complete, len(preds))


_WORKER: dict = {}


def _init_worker(cliff_map, cfg, horizons, with_cliff, with_cvm):
    _WORKER.update(map=cliff_map, cfg=cfg, horizons=horizons, cliff=with_cliff, cvm=with_cvm)


def _evaluate_split(split: SplitTrajectory):
    cfg: PredictorConfig = _WORKER["cfg"]
    horizons = _WORKER["horizons"]
    t0 = split.current.time
    gt_duration = split.future[-1].time - t0
    total = _steps_within(min(max(horizons), gt_duration), cfg.delta_t)
    if total == 0:
        return None
    hist = split.history
    out: dict[str, list] = {}
    run_cfg = cfg.with_(horizon=total * cfg.delta_t)
    times = t0 + cfg.delta_t * np.arange(1, total + 1)
    gt = ground_truth_at(split, times)
    methods = []
    if _WORKER["cliff"]:
        methods.append((CLIFF, predict_k(hist, split.current.x, split.current.y, _WORKER["map"], run_cfg,
                                         traj_key=split.key, t0=t0)))
    if _WORKER["cvm"]:
        methods.append((CVM, [cvm_predict(hist, split.current.x, split.current.y, run_cfg.horizon, cfg.delta_t,
                                          cfg.sigma_obs, t0=t0)]))
    for name, preds in methods:
        scored = []
        for h in horizons:
            n_needed = _steps_within(min(h, gt_duration), cfg.delta_t)
            scored.append(None if n_needed == 0 else _score(preds, gt, n_needed))
        out[name] = scored
    return out


def _run(splits, cliff_map, cfg, horizons, with_cliff, with_cvm, workers):
    args = (cliff_map, cfg, tuple(horizons), with_cliff, with_cvm)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=args) as pool:
            return list(pool.map(_evaluate_split, splits, chunksize=max(1, len(splits) // (4 * workers))))
    _init_worker(*args)
    try:
        return [_evaluate_split(s) for s in splits]
    finally:
        _WORKER.clear()


def _predict_split(split: SplitTrajectory):
    cfg: PredictorConfig = _WORKER["cfg"]
    t0 = split.current.time
    total = _steps_within(min(cfg.horizon, split.future[-1].time - t0), cfg.delta_t)
    if total == 0:
        return split.traj_id, []
    run_cfg = cfg.with_(horizon=total * cfg.delta_t)
    return split.traj_id, predict_k(split.history, split.current.x, split.current.y, _WORKER["map"], run_cfg,
                                    traj_key=split.key, t0=t0)


def predict_splits(splits: Sequence[SplitTrajectory], cliff_map: CliffMap, cfg: PredictorConfig,
                   workers: int = 1) -> list[tuple[str, list[Prediction]]]:
    """``cfg.k`` rollouts per split, up to ``cfg.horizon`` or the end of its ground truth."""
    splits = list(splits)
    args = (cliff_map, cfg, (cfg.horizon,), True, False)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=args) as pool:
            return list(pool.map(_predict_split, splits, chunksize=max(1, len(splits) // (4 * workers))))
    _init_worker(*args)
    try:
        return [_predict_split(s) for s in splits]
    finally:
        _WORKER.clear()


def _aggregate(method: str, horizon: float, scored: Iterable[_Scored | None]) -> MetricsRow:
    scored = [s for s in scored if s is not None]
    valid = [s for s in scored if s.ade is not None]
    # a trajectory counts as predicted to the full horizon if any rollout got there
    completion = sum(s.n_complete > 0 for s in scored) / len(scored) if scored else math.nan
    if not valid:
        nan = math.nan
        return MetricsRow(method, horizon, 0, nan, nan, nan, nan, nan, nan, completion)
    a = np.array([s.ade for s in valid])
    f = np.array([s.fde for s in valid])
    return MetricsRow(
        method=method,
        horizon=horizon,
        n=len(valid),
        ade_mean=float(a.mean()),
        ade_std=float(a.std()),
        fde_mean=float(f.mean()),
        fde_std=float(f.std()),
        topk_ade_mean=float(np.mean([s.topk_ade for s in valid])),
        topk_fde_mean=float(np.mean([s.topk_fde for s in valid])),
        completion_ratio=completion,
    )


def evaluate(splits: Sequence[SplitTrajectory], cliff_map: CliffMap | None, cfg: PredictorConfig,
             horizons: Sequence[float], workers: int = 1, include_cvm: bool = True) -> list[MetricsRow]:
    """Per-horizon metrics for the map-based predictor and the CVM baseline.

    Rollouts are generated once up to the largest horizon (or the trajectory's
    end) and scored by prefix at each horizon. ``cliff_map=None`` evaluates
    the CVM only. Per-trajectory ADE/FDE is the mean over the ``k`` rollouts;
    top-k uses the best rollout. The completion ratio is the fraction of
    trajectories with at least one rollout reaching the horizon.
    """
    splits = list(splits)
    if not splits:
        raise EvaluationError("empty dataset: no trajectories to evaluate")
    horizons = [float(h) for h in horizons]
    if not horizons or min(horizons) <= 0:
        raise EvaluationError("horizons must be a non-empty list of positive values")
    with_cliff = cliff_map is not None
    if not (with_cliff or include_cvm):
        raise EvaluationError("nothing to evaluate: no map and CVM disabled")
    results = _run(splits, cliff_map, cfg, horizons, with_cliff, include_cvm, workers)
    rows = []
    methods = ([CLIFF] if with_cliff else []) + ([CVM] if include_cvm else [])
    for method in methods:
        for i, h in enumerate(horizons):
            rows.append(_aggregate(method, h, (r[method][i] if r else None for r in results)))
    return rows


def horizon_grid(max_horizon: float, step: float) -> list[float]:
    n = _steps_within(max_horizon, step)
    return [round(step * i, 10) for i in range(1, n + 1)]


SWEEP_PARAMS = {
    "obs_horizon": "obs_horizon", "o_s": "obs_horizon", "obs-horizon": "obs_horizon",
    "beta": "beta",
    "r_s": "r_s", "rs": "r_s",
    "delta_t": "delta_t", "dt": "delta_t",
}
SWEEP_RANGES = {"obs_horizon": (1.2, 3.2), "beta": (0.5, 10.0), "r_s": (1.0, 3.0), "delta_t": (0.4, 1.0)}


def canonical_param(name: str) -> str:
    try:
        return SWEEP_PARAMS[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown sweep parameter {name!r}; choose from obs_horizon, beta, r_s, delta_t") from None


def sweep(param: str, values: Sequence[float], cfg: PredictorConfig, trajectories: Sequence[Trajectory],
          cliff_map: CliffMap | None, horizons: Sequence[float], obs_horizon: float = 3.2,
          max_future: float = 50.0, continuity_min_speed: float = 0.3, workers: int = 1,
          include_cvm: bool = True) -> dict[float, list[MetricsRow]]:
    """One :func:`evaluate` run per parameter value, all with the same seed."""
    param = canonical_param(param)
    lo, hi = SWEEP_RANGES[param]
    out = {}
    for v in values:
        v = float(v)
        if not lo <= v <= hi:
            log.warning("%s=%g is outside the usual analysis range [%g, %g]", param, v, lo, hi)
        o_s = v if param == "obs_horizon" else obs_horizon
        run_cfg = cfg if param == "obs_horizon" else cfg.with_(**{param: v})
        splits = filter_and_split(trajectories, o_s, max_future, continuity_min_speed)
        out[v] = evaluate(splits, cliff_map, run_cfg, horizons, workers, include_cvm)
    return out
