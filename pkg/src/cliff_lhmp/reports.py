"""Delimited outputs: metrics tables and prediction records."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .evaluation import MetricsRow
from .predictor import Prediction

METRICS_HEADER = ["method", "horizon_s", "n", "ade_mean", "ade_std", "fde_mean", "fde_std",
                  "topk_ade", "topk_fde", "completion_ratio"]
SWEEP_HEADER = ["sweep_param", "sweep_value"]
PREDICTIONS_HEADER = ["traj_id", "rollout", "step", "time_s", "x_m", "y_m", "rho", "theta", "complete"]


def _fmt(v: float) -> str:
    return repr(float(v))


def _metrics_fields(r: MetricsRow) -> list[str]:
    return [r.method, _fmt(r.horizon), str(r.n), _fmt(r.ade_mean), _fmt(r.ade_std), _fmt(r.fde_mean),
            _fmt(r.fde_std), _fmt(r.topk_ade_mean), _fmt(r.topk_fde_mean), _fmt(r.completion_ratio)]


def write_metrics_csv(rows: Iterable[MetricsRow], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow(_metrics_fields(r))


def write_sweep_csv(param: str, table: Mapping[float, Sequence[MetricsRow]], path) -> None:
    """Metrics table with two leading columns naming the swept parameter and value."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER + METRICS_HEADER)
        for value, rows in table.items():
            for r in rows:
                w.writerow([param, _fmt(value)] + _metrics_fields(r))


def read_metrics_csv(path) -> list[MetricsRow]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = []
        for rec in csv.DictReader(fh):
            rows.append(MetricsRow(
                rec["method"], float(rec["horizon_s"]), int(rec["n"]), float(rec["ade_mean"]),
                float(rec["ade_std"]), float(rec["fde_mean"]), float(rec["fde_std"]), float(rec["topk_ade"]),
                float(rec["topk_fde"]), float(rec["completion_ratio"]),
            ))
        return rows


def write_predictions_csv(records: Iterable[tuple[str, Sequence[Prediction]]], path) -> int:
    """One row per predicted state; step 0 is the origin with the observed velocity."""
    count = 0
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTIONS_HEADER)
        for traj_id, preds in records:
            for i, p in enumerate(preds):
                flag = "1" if p.complete else "0"
                for step, s in enumerate((p.origin,) + p.states):
                    w.writerow([traj_id, i, step, _fmt(s.time), _fmt(s.x), _fmt(s.y), _fmt(s.rho),
                                _fmt(s.theta), flag])
                    count += 1
    return count


@dataclass
class PredictionRecord:
    traj_id: str
    rollout: int
    complete: bool
    xy: list[tuple[float, float]]


def read_predictions_csv(path) -> list[PredictionRecord]:
    out: dict[tuple[str, int], PredictionRecord] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != PREDICTIONS_HEADER:
            raise ValueError(f"{path}: expected header {','.join(PREDICTIONS_HEADER)}")
        for rec in reader:
            key = (rec["traj_id"], int(rec["rollout"]))
            if key not in out:
                out[key] = PredictionRecord(key[0], key[1], rec["complete"] == "1", [])
            out[key].xy.append((float(rec["x_m"]), float(rec["y_m"])))
    return list(out.values())
