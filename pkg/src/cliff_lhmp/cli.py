"""Command-line interface: ``build-map``, ``predict``, ``evaluate``, ``render``.

Settings resolve as command-line flag, then ``--config`` file, then the
dataset profile (ATC or THÖR evaluation parameters). The profile follows
``--adapter`` unless ``--profile`` is given. Exit codes: 0 success,
1 runtime or model error, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import yaml

from .evaluation import canonical_param, evaluate, horizon_grid, predict_splits, sweep
from .ingestion import PARSERS, filter_and_split, parse, prepare_trajectories
from .mapping import BuilderConfig, build_cliff_map, load_map, map_summary, save_map
from .plotting import plot_metrics, plot_sweep, render_map
from .predictor import PredictorConfig
from .reports import read_predictions_csv, write_metrics_csv, write_predictions_csv, write_sweep_csv
from .rng import SEED_ENV, seed_from_env

log = logging.getLogger("cliff_lhmp")

PROFILES = {
    "atc": {"resolution": 1.0, "r_s": 1.0, "delta_t": 1.0, "horizon": 50.0, "horizon_step": 1.0},
    "thor": {"resolution": 0.5, "r_s": 0.5, "delta_t": 0.4, "horizon": 12.0, "horizon_step": 0.4},
}
SHARED = {
    "beta": 1.0,
    "sigma_obs": 1.5,
    "k": 20,
    "obs_horizon": 3.2,
    "hz": 2.5,
    "max_future": 50.0,
    "min_speed": 0.3,
    "max_components": 5,
    "min_observations": 10,
    "workers": 1,
    "seed": None,
}
SETTINGS = set(SHARED) | set(PROFILES["atc"])


class UsageError(Exception):
    """Bad arguments, configuration or paths (exit code 2)."""


def _positive(kind):
    def convert(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
        if not (v > 0 and math.isfinite(v)):
            raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
        return v
    return convert


def _non_negative(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not (v >= 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def _add_common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("common")
    g.add_argument("--config", type=Path, help="JSON or YAML file with settings (flags override it)")
    g.add_argument("--profile", choices=sorted(PROFILES),
                   help="parameter profile (default: thor for --adapter thor, else atc)")
    g.add_argument("--seed", type=int, help=f"random seed (default: ${SEED_ENV}, else 0)")
    g.add_argument("--workers", type=_positive(int), help="worker processes; output does not depend on it (default: 1)")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def _add_input(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--input", type=Path, required=required, help="trajectory file")
    p.add_argument("--adapter", choices=sorted(PARSERS), default="canonical",
                   help="input format (default: canonical person_id,time_s,x_m,y_m)")
    p.add_argument("--hz", type=_positive(float), help="resampling rate in Hz (default: 2.5)")


def _add_split(p: argparse.ArgumentParser) -> None:
    p.add_argument("--obs-horizon", dest="obs_horizon", type=_positive(float),
                   help="observation horizon O_s in seconds (default: 3.2)")
    p.add_argument("--max-future", dest="max_future", type=_positive(float),
                   help="longest ground-truth future kept, seconds (default: 50)")
    p.add_argument("--min-speed", dest="min_speed", type=_non_negative,
                   help="drop trajectories with lower mean speed, m/s (default: 0.3)")


def _add_predictor(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("prediction")
    g.add_argument("--beta", type=_non_negative, help="kernel parameter beta (default: 1)")
    g.add_argument("--rs", dest="r_s", type=_positive(float),
                   help="sampling radius r_s in meters (default: 1 ATC / 0.5 THÖR)")
    g.add_argument("--dt", dest="delta_t", type=_positive(float),
                   help="prediction time step in seconds (default: 1 ATC / 0.4 THÖR)")
    g.add_argument("--horizon", type=_positive(float),
                   help="prediction horizon T_s in seconds (default: 50 ATC / 12 THÖR)")
    g.add_argument("--sigma-obs", dest="sigma_obs", type=_positive(float),
                   help="std of the observed-velocity weighting kernel (default: 1.5)")
    g.add_argument("--k", type=_positive(int), help="predicted trajectories per ground truth (default: 20)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cliff-lhmp",
        description="Learn CLiFF-maps from pedestrian trajectories and predict long-term motion.",
        epilog="Exit codes: 0 success, 1 runtime or model error, 2 usage or I/O error.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("build-map", help="fit a CLiFF-map and write it as JSON")
    _add_input(p)
    p.add_argument("--output", type=Path, required=True, help="map JSON to write")
    p.add_argument("--resolution", type=_positive(float), help="grid resolution in meters (default: 1 ATC / 0.5 THÖR)")
    p.add_argument("--max-components", dest="max_components", type=_positive(int),
                   help="largest mixture size tried per cell (default: 5)")
    p.add_argument("--min-observations", dest="min_observations", type=_positive(int),
                   help="fewest moving observations for a cell to be fitted (default: 10)")
    _add_common(p)

    p = sub.add_parser("predict", help="write k rollouts per trajectory to CSV")
    _add_input(p)
    p.add_argument("--map", type=Path, required=True, help="map JSON")
    p.add_argument("--output", type=Path, required=True, help="predictions CSV to write")
    _add_split(p)
    _add_predictor(p)
    _add_common(p)

    p = sub.add_parser("evaluate", help="ADE/FDE tables against ground truth, optionally as a sweep")
    _add_input(p)
    p.add_argument("--map", type=Path, help="map JSON (not needed with --cvm-only)")
    p.add_argument("--output", type=Path, required=True, help="metrics CSV to write")
    p.add_argument("--cvm-only", action="store_true", help="evaluate only the constant-velocity baseline")
    p.add_argument("--no-cvm", action="store_true", help="skip the constant-velocity baseline")
    p.add_argument("--sweep", nargs=2, metavar=("PARAM", "VALUES"),
                   help="sweep PARAM (obs_horizon, beta, r_s, delta_t) over comma-separated VALUES")
    p.add_argument("--horizon-step", dest="horizon_step", type=_positive(float),
                   help="spacing of evaluated horizons in seconds (default: 1 ATC / 0.4 THÖR)")
    p.add_argument("--figure", type=Path, help="SVG figure path (default: next to --output)")
    p.add_argument("--no-figure", action="store_true", help="do not write the SVG figure")
    _add_split(p)
    _add_predictor(p)
    _add_common(p)

    p = sub.add_parser("render", help="draw a map with optional trajectory overlays as SVG")
    p.add_argument("--map", type=Path, required=True, help="map JSON")
    p.add_argument("--output", type=Path, required=True, help="SVG to write")
    p.add_argument("--predictions", type=Path, help="predictions CSV to overlay (blue)")
    _add_input(p, required=False)
    p.add_argument("--traj-id", dest="traj_ids", action="append",
                   help="only overlay this trajectory id (repeatable)")
    p.add_argument("--title", help="figure title")
    _add_split(p)
    _add_common(p)
    return parser


def _load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text) if path.suffix.lower() == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a mapping of setting names to values")
    data = {str(k).replace("-", "_"): v for k, v in data.items()}
    unknown = sorted(set(data) - SETTINGS - {"profile"})
    if unknown:
        raise UsageError(f"unknown config keys in {path}: {', '.join(unknown)}")
    return data


def resolve_settings(args: argparse.Namespace) -> dict:
    """Merge profile defaults, config file and flags (in increasing priority)."""
    config = _load_config(getattr(args, "config", None))
    profile = getattr(args, "profile", None) or config.pop("profile", None)
    config.pop("profile", None)
    if profile is None:
        profile = "thor" if getattr(args, "adapter", None) == "thor" else "atc"
    if profile not in PROFILES:
        raise UsageError(f"unknown profile {profile!r}; choose from {', '.join(sorted(PROFILES))}")
    settings = {**SHARED, **PROFILES[profile], **config}
    for key in SETTINGS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    if settings["seed"] is None:
        try:
            settings["seed"] = seed_from_env(0)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    settings["profile"] = profile
    return settings


def _predictor_config(s: dict) -> PredictorConfig:
    try:
        return PredictorConfig(beta=float(s["beta"]), r_s=float(s["r_s"]), delta_t=float(s["delta_t"]),
                               horizon=float(s["horizon"]), sigma_obs=float(s["sigma_obs"]), k=int(s["k"]),
                               seed=int(s["seed"]))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid prediction settings: {exc}") from None


def _builder_config(s: dict) -> BuilderConfig:
    try:
        return BuilderConfig(resolution=float(s["resolution"]), max_components=int(s["max_components"]),
                             min_observations_per_cell=int(s["min_observations"]), seed=int(s["seed"]))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid map settings: {exc}") from None


def _need_file(path: Path | None, what: str) -> None:
    if path is None or not path.is_file():
        raise UsageError(f"{what} not found: {path}")


def _need_parent(path: Path) -> None:
    parent = path.resolve().parent
    if not parent.is_dir():
        raise UsageError(f"output directory does not exist: {parent}")


def _trajectories(args, s: dict):
    tracks = parse(args.input, args.adapter)
    return prepare_trajectories(tracks, float(s["hz"]))


def _splits(args, s: dict):
    trajs = _trajectories(args, s)
    return trajs, filter_and_split(trajs, float(s["obs_horizon"]), float(s["max_future"]), float(s["min_speed"]))


def cmd_build_map(args, s: dict) -> int:
    _need_file(args.input, "input file")
    _need_parent(args.output)
    cfg = _builder_config(s)
    trajs = _trajectories(args, s)
    cliff_map = build_cliff_map(trajs, cfg, workers=int(s["workers"]))
    save_map(cliff_map, args.output)
    info = map_summary(cliff_map)
    print(f"cells: {info['cells']}")
    print(f"mean components: {info['mean_components']:.3f}")
    print(f"coverage: {info['coverage_m2']:g} m^2 at {info['resolution']:g} m resolution")
    print(f"wrote {args.output}")
    return 0


def cmd_predict(args, s: dict) -> int:
    _need_file(args.input, "input file")
    _need_file(args.map, "map file")
    _need_parent(args.output)
    cfg = _predictor_config(s)
    cliff_map = load_map(args.map)
    _, splits = _splits(args, s)
    if not splits:
        raise ValueError(f"no eligible trajectories in {args.input}")
    records = predict_splits(splits, cliff_map, cfg, workers=int(s["workers"]))
    rows = write_predictions_csv(records, args.output)
    n_complete = sum(p.complete for _, preds in records for p in preds)
    n_total = sum(len(preds) for _, preds in records)
    print(f"trajectories: {len(records)}")
    print(f"rollouts: {n_total} ({n_complete} reached the horizon)")
    print(f"wrote {rows} rows to {args.output}")
    return 0


def _parse_values(text: str) -> list[float]:
    parts = [t.strip() for t in text.split(",")]
    try:
        values = [float(t) for t in parts]
    except ValueError:
        raise UsageError(f"malformed sweep values {text!r}: expected comma-separated numbers") from None
    if not values or not all(math.isfinite(v) for v in values):
        raise UsageError(f"malformed sweep values {text!r}")
    return values


def _print_rows(rows) -> None:
    print(f"{'method':<11} {'horizon':>7} {'n':>5} {'ADE':>7} {'FDE':>7} {'topk ADE':>9} {'complete':>8}")
    for r in rows:
        print(f"{r.method:<11} {r.horizon:>7g} {r.n:>5d} {r.ade_mean:>7.3f} {r.fde_mean:>7.3f} "
              f"{r.topk_ade_mean:>9.3f} {r.completion_ratio:>8.3f}")


def cmd_evaluate(args, s: dict) -> int:
    _need_file(args.input, "input file")
    _need_parent(args.output)
    if args.cvm_only and args.no_cvm:
        raise UsageError("--cvm-only and --no-cvm exclude each other")
    if not args.cvm_only:
        if args.map is None:
            raise UsageError("--map is required unless --cvm-only is given")
        _need_file(args.map, "map file")
    sweep_param = sweep_values = None
    if args.sweep:
        try:
            sweep_param = canonical_param(args.sweep[0])
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        sweep_values = _parse_values(args.sweep[1])
    figure = None if args.no_figure else (args.figure or args.output.with_suffix(".svg"))
    if figure is not None:
        _need_parent(figure)
    cfg = _predictor_config(s)
    horizons = horizon_grid(cfg.horizon, float(s["horizon_step"]))
    if not horizons:
        raise UsageError(f"no horizons: --horizon-step {s['horizon_step']} exceeds --horizon {cfg.horizon}")
    cliff_map = None if args.cvm_only else load_map(args.map)
    trajs, splits = _splits(args, s)
    workers = int(s["workers"])
    include_cvm = not args.no_cvm
    if sweep_param is None:
        if not splits:
            raise ValueError(f"no eligible trajectories in {args.input}")
        rows = evaluate(splits, cliff_map, cfg, horizons, workers=workers, include_cvm=include_cvm)
        write_metrics_csv(rows, args.output)
        if figure is not None:
            plot_metrics(rows, figure)
        _print_rows([r for r in rows if r.horizon == horizons[-1]])
    else:
        table = sweep(sweep_param, sweep_values, cfg, trajs, cliff_map, horizons,
                      obs_horizon=float(s["obs_horizon"]), max_future=float(s["max_future"]),
                      continuity_min_speed=float(s["min_speed"]), workers=workers, include_cvm=include_cvm)
        write_sweep_csv(sweep_param, table, args.output)
        if figure is not None:
            method = "cvm" if args.cvm_only else "cliff-lhmp"
            plot_sweep(sweep_param, table, figure, method=method)
        for value, rows in table.items():
            print(f"{sweep_param} = {value:g}")
            _print_rows([r for r in rows if r.horizon == horizons[-1]])
    print(f"wrote {args.output}" + (f" and {figure}" if figure is not None else ""))
    return 0


def cmd_render(args, s: dict) -> int:
    _need_file(args.map, "map file")
    if args.predictions is not None:
        _need_file(args.predictions, "predictions file")
    if args.input is not None:
        _need_file(args.input, "input file")
    _need_parent(args.output)
    cliff_map = load_map(args.map)
    wanted = set(args.traj_ids) if args.traj_ids else None
    observed, truth, predicted = [], [], []
    if args.input is not None:
        _, splits = _splits(args, s)
        for sp in splits:
            if wanted is not None and sp.traj_id not in wanted:
                continue
            cur = (sp.current.x, sp.current.y)
            observed.append([(h.x, h.y) for h in sp.history] + [cur])
            truth.append([cur] + [(f.x, f.y) for f in sp.future])
    if args.predictions is not None:
        for rec in read_predictions_csv(args.predictions):
            if wanted is None or rec.traj_id in wanted:
                predicted.append(rec.xy)
    render_map(cliff_map, args.output, observed=observed, ground_truth=truth, predictions=predicted,
               title=args.title)
    print(f"wrote {args.output} ({len(cliff_map)} cells, {len(predicted)} predictions, {len(truth)} ground truths)")
    return 0


COMMANDS = {"build-map": cmd_build_map, "predict": cmd_predict, "evaluate": cmd_evaluate, "render": cmd_render}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        settings = resolve_settings(args)
        return COMMANDS[args.command](args, settings)
    except UsageError as exc:
        print(f"cliff-lhmp {args.command}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cliff-lhmp {args.command}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError) as exc:
        print(f"cliff-lhmp {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
