"""Dataset parsing, resampling and history/future splitting.

All parsers return :class:`RawTrack` sequences in meters and seconds. The
:func:`prepare_trajectories` pipeline then splits tracks at recording gaps,
resamples them onto a uniform clock and derives per-step velocities.
"""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .core import wrap_2pi

log = logging.getLogger(__name__)

CANONICAL_HEADER = ["person_id", "time_s", "x_m", "y_m"]
DEFAULT_HZ = 2.5


class IngestionError(ValueError):
    pass


class FormatError(IngestionError):
    """Malformed file: missing header, bad row, unparsable number."""


class DataError(IngestionError):
    """Well-formed file with inconsistent content (e.g. non-monotone time)."""


class TooShortError(IngestionError):
    pass


class RawPoint(NamedTuple):
    person_id: int
    time: float
    x: float
    y: float


@dataclass(frozen=True, eq=False)
class RawTrack:
    """Time-ordered positions of one person; ``segment`` numbers gap-split pieces."""

    person_id: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    segment: int = 0

    def __post_init__(self):
        for name in ("t", "x", "y"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (len(self.t) == len(self.x) == len(self.y)):
            raise ValueError("t, x, y must have equal length")
        if len(self.t) > 1 and np.any(np.diff(self.t) <= 0):
            raise DataError(f"time is not strictly increasing for person {self.person_id}")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def points(self) -> list[RawPoint]:
        return [RawPoint(self.person_id, float(t), float(x), float(y)) for t, x, y in zip(self.t, self.x, self.y)]

    def equals(self, other: "RawTrack") -> bool:
        return (
            self.person_id == other.person_id
            and self.segment == other.segment
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
        )


class State(NamedTuple):
    x: float
    y: float
    rho: float
    theta: float
    time: float


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Uniformly sampled states of one person with derived velocities."""

    person_id: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    rho: np.ndarray
    theta: np.ndarray
    dt: float
    segment: int = 0

    def __post_init__(self):
        n = len(self.t)
        for name in ("t", "x", "y", "rho", "theta"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if len(arr) != n:
                raise ValueError("trajectory arrays must have equal length")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if n < 2:
            raise TooShortError(f"trajectory of person {self.person_id} has fewer than 2 states")
        steps = np.diff(self.t)
        if np.any(np.abs(steps - self.dt) > 0.1 * self.dt):
            raise DataError(f"trajectory of person {self.person_id} is not uniformly sampled at dt={self.dt}")
        if np.any(self.rho < 0) or np.any((self.theta < 0) | (self.theta >= 2 * math.pi)):
            raise ValueError("rho must be >= 0 and theta in [0, 2pi)")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def traj_id(self) -> str:
        return str(self.person_id) if self.segment == 0 else f"{self.person_id}_{self.segment}"

    @property
    def key(self) -> tuple[int, int]:
        return (self.person_id, self.segment)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    @property
    def states(self) -> list[State]:
        return [State(*map(float, v)) for v in zip(self.x, self.y, self.rho, self.theta, self.t)]

    def positions(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])


@dataclass(frozen=True)
class SplitTrajectory:
    """Observed history, the state at the prediction origin and the true future."""

    traj_id: str
    key: tuple[int, int]
    history: tuple[State, ...]
    current: State
    future: tuple[State, ...]

    def __post_init__(self):
        if not self.history:
            raise ValueError("history must not be empty")
        if not self.future:
            raise ValueError("future must contain at least one state")

    @property
    def future_xy(self) -> np.ndarray:
        return np.array([(s.x, s.y) for s in self.future])

    @property
    def future_t(self) -> np.ndarray:
        return np.array([s.time for s in self.future])


# --------------------------------------------------------------------------
# parsers


def _group(rows: Iterable[tuple[int, float, float, float, int]], source: str) -> list[RawTrack]:
    by_person: dict[int, list[tuple[float, float, float, int]]] = {}
    for pid, t, x, y, line in rows:
        by_person.setdefault(pid, []).append((t, x, y, line))
    tracks = []
    for pid in sorted(by_person):
        pts = sorted(by_person[pid], key=lambda r: r[0])
        t = np.array([p[0] for p in pts])
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            i = int(np.argmax(np.diff(t) <= 0))
            raise DataError(
                f"{source}: non-monotone time for person_id {pid} "
                f"(duplicate timestamp {t[i]!r} at lines {pts[i][3]} and {pts[i + 1][3]})"
            )
        tracks.append(RawTrack(pid, t, np.array([p[1] for p in pts]), np.array([p[2] for p in pts])))
    return tracks


def _number(text: str, what: str, line: int, source: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise FormatError(f"{source}: line {line}: {what} is not a number: {text!r}") from None
    if not math.isfinite(value):
        raise FormatError(f"{source}: line {line}: {what} is not finite: {text!r}")
    return value


def _person(text: str, line: int, source: str) -> int:
    try:
        return int(text)
    except ValueError:
        try:
            f = float(text)
        except ValueError:
            f = math.nan
        if f.is_integer():
            return int(f)
        raise FormatError(f"{source}: line {line}: person id is not an integer: {text!r}") from None


def parse_canonical(path) -> list[RawTrack]:
    """Read ``person_id,time_s,x_m,y_m`` CSV; one track per person, time-sorted."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CANONICAL_HEADER:
            raise FormatError(f"{path}: missing or wrong header, expected {','.join(CANONICAL_HEADER)}")
        rows = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise FormatError(f"{path}: line {line}: expected 4 fields, got {len(row)}")
            rows.append((
                _person(row[0].strip(), line, str(path)),
                _number(row[1], "time_s", line, str(path)),
                _number(row[2], "x_m", line, str(path)),
                _number(row[3], "y_m", line, str(path)),
                line,
            ))
    return _group(rows, str(path))


def write_canonical(tracks: Iterable[RawTrack], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CANONICAL_HEADER)
        for tr in tracks:
            for t, x, y in zip(tr.t, tr.x, tr.y):
                w.writerow([tr.person_id, repr(float(t)), repr(float(x)), repr(float(y))])


def parse_atc(path) -> list[RawTrack]:
    """Read the ATC shopping-mall CSV.

    Columns: time [s, unix with millisecond fraction], person id, x [mm], y [mm],
    z [mm], velocity [mm/s], motion angle [rad], facing angle [rad]. Only time,
    id and the planar position are kept; velocities are re-derived later.
    """
    path = Path(path)
    rows = []
    with path.open(newline="", encoding="utf-8") as fh:
        for line, row in enumerate(csv.reader(fh), start=1):
            if not row or not row[0].strip() or row[0].lstrip().startswith("#"):
                continue
            if len(row) < 4:
                raise FormatError(f"{path}: line {line}: expected at least 4 fields, got {len(row)}")
            rows.append((
                _person(row[1].strip(), line, str(path)),
                _number(row[0], "time", line, str(path)),
                _number(row[2], "x", line, str(path)) / 1000.0,
                _number(row[3], "y", line, str(path)) / 1000.0,
                line,
            ))
    return _group(rows, str(path))


_TRAILING_INT = re.compile(r"(\d+)\D*$")


def parse_thor(path) -> list[RawTrack]:
    """Read a THOR motion-capture export (tab- or comma-separated).

    Leading metadata lines are skipped up to the column header, which starts
    with ``Frame`` and ``Time`` followed by ``<Helmet> X``, ``<Helmet> Y``,
    ``<Helmet> Z`` groups in millimeters. The person id is the trailing integer
    of the helmet name (its 1-based group index if there is none). Missing
    samples (empty, NaN, or an all-zero position) split the track.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    start = None
    for i, raw in enumerate(lines):
        head = re.split(r"[\t,]", raw.strip(), maxsplit=1)[0].strip().lower()
        if head == "frame":
            start = i
            break
    if start is None:
        raise FormatError(f"{path}: no column header starting with 'Frame'")
    delim = "\t" if "\t" in lines[start] else ","
    header = [h.strip() for h in lines[start].split(delim)]
    if len(header) < 5 or header[1].lower() != "time":
        raise FormatError(f"{path}: line {start + 1}: expected 'Frame, Time, <name> X, <name> Y, ...'")
    groups: list[tuple[int, int, int]] = []  # (person id, x column, y column)
    col = 2
    while col + 1 < len(header):
        name_x, name_y = header[col], header[col + 1]
        if not (name_x.upper().endswith(" X") and name_y.upper().endswith(" Y")):
            raise FormatError(f"{path}: line {start + 1}: unexpected columns {name_x!r}, {name_y!r}")
        m = _TRAILING_INT.search(name_x[:-2])
        pid = int(m.group(1)) if m else len(groups) + 1
        groups.append((pid, col, col + 1))
        col += 3 if col + 2 < len(header) and header[col + 2].upper().endswith(" Z") else 2

    series: dict[int, list[tuple[float, float, float] | None]] = {pid: [] for pid, _, _ in groups}
    for offset, raw in enumerate(lines[start + 1:], start=start + 2):
        if not raw.strip():
            continue
        fields = raw.split(delim)
        t = _number(fields[1] if len(fields) > 1 else "", "Time", offset, str(path))
        for pid, cx, cy in groups:
            xs = fields[cx].strip() if cx < len(fields) else ""
            ys = fields[cy].strip() if cy < len(fields) else ""
            if xs == "" or ys == "" or xs.lower() == "nan" or ys.lower() == "nan":
                series[pid].append(None)
                continue
            x = _number(xs, f"x of person {pid}", offset, str(path))
            y = _number(ys, f"y of person {pid}", offset, str(path))
            series[pid].append(None if x == 0.0 and y == 0.0 else (t, x / 1000.0, y / 1000.0))

    tracks = []
    for pid in sorted(series):
        segment, run = 0, []
        for item in series[pid] + [None]:
            if item is not None:
                run.append(item)
                continue
            if run:
                arr = np.array(run)
                tracks.append(RawTrack(pid, arr[:, 0], arr[:, 1], arr[:, 2], segment=segment))
                segment += 1
                run = []
    return tracks


PARSERS = {"canonical": parse_canonical, "atc": parse_atc, "thor": parse_thor}


def parse(path, adapter: str = "canonical") -> list[RawTrack]:
    try:
        parser = PARSERS[adapter]
    except KeyError:
        raise ValueError(f"unknown adapter {adapter!r}; choose from {sorted(PARSERS)}") from None
    return parser(path)


# --------------------------------------------------------------------------
# resampling


def split_gaps(track: RawTrack, max_gap: float) -> list[RawTrack]:
    """Cut a track wherever consecutive samples are more than ``max_gap`` s apart."""
    if len(track) < 2:
        return [track]
    cuts = np.flatnonzero(np.diff(track.t) > max_gap) + 1
    if len(cuts) == 0:
        return [track]
    return [
        RawTrack(track.person_id, track.t[a:b], track.x[a:b], track.y[a:b], segment=track.segment)
        for a, b in zip(np.r_[0, cuts], np.r_[cuts, len(track)])
    ]


def derive_velocities(x: Sequence[float], y: Sequence[float], dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Finite-difference speed and direction for uniformly sampled positions.

    The first state copies the second state's velocity. Zero-length steps keep
    the previous direction (0 at the start of the sequence).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2:
        raise TooShortError("need at least 2 positions to derive velocities")
    dx, dy = np.diff(x), np.diff(y)
    rho = np.hypot(dx, dy) / dt
    theta = np.empty_like(rho)
    prev = 0.0
    for i in range(len(rho)):
        if dx[i] == 0.0 and dy[i] == 0.0:
            theta[i] = prev
        else:
            theta[i] = prev = wrap_2pi(math.atan2(dy[i], dx[i]))
    return np.r_[rho[0], rho], np.r_[theta[0], theta]


def resample(track: RawTrack, target_hz: float = DEFAULT_HZ) -> Trajectory:
    """Linearly interpolate positions onto a ``1/target_hz`` clock from the first sample."""
    if len(track) < 2:
        raise TooShortError(f"person {track.person_id}: need at least 2 points to resample")
    period = 1.0 / target_hz
    rel = track.t - track.t[0]
    n = int(math.floor(rel[-1] / period + 1e-9)) + 1
    if n < 2:
        raise TooShortError(
            f"person {track.person_id}: duration {rel[-1]:.3f} s is shorter than one period ({period} s)"
        )
    grid = np.arange(n) * period
    x = np.interp(grid, rel, track.x)
    y = np.interp(grid, rel, track.y)
    rho, theta = derive_velocities(x, y, period)
    return Trajectory(track.person_id, track.t[0] + grid, x, y, rho, theta, period, segment=track.segment)


def prepare_trajectories(
    tracks: Iterable[RawTrack], target_hz: float = DEFAULT_HZ, max_gap_periods: float = 2.0
) -> list[Trajectory]:
    """Gap-split, resample and derive velocities; tracks too short to resample are dropped.

    Segments are renumbered ``0, 1, ...`` per person in time order.
    """
    out, dropped = [], 0
    max_gap = max_gap_periods / target_hz
    pieces: dict[int, list[RawTrack]] = {}
    for tr in tracks:
        pieces.setdefault(tr.person_id, []).extend(split_gaps(tr, max_gap))
    for pid in sorted(pieces):
        segment = 0
        for piece in sorted(pieces[pid], key=lambda p: p.t[0]):
            piece = RawTrack(pid, piece.t, piece.x, piece.y, segment=segment)
            try:
                out.append(resample(piece, target_hz))
            except TooShortError:
                dropped += 1
                continue
            segment += 1
    if dropped:
        log.info("dropped %d track pieces shorter than one resampling period", dropped)
    return out


def filter_and_split(
    trajectories: Iterable[Trajectory],
    obs_horizon: float = 3.2,
    max_future: float = 50.0,
    continuity_min_speed: float = 0.3,
) -> list[SplitTrajectory]:
    """Split each trajectory into history, prediction origin and ground-truth future.

    With ``O_p = round(obs_horizon / dt)`` the first ``O_p`` states form the
    history, state ``O_p`` is the origin ``t0`` and up to
    ``round(max_future / dt)`` following states the future. Trajectories
    without at least one future state, or whose mean speed is below
    ``continuity_min_speed``, are dropped.
    """
    out = []
    short = slow = 0
    for tr in trajectories:
        obs_steps = int(round(obs_horizon / tr.dt))
        if obs_steps < 1:
            raise ValueError(f"observation horizon {obs_horizon} s is shorter than one step")
        max_steps = int(round(max_future / tr.dt))
        if len(tr) < obs_steps + 2:
            short += 1
            continue
        if float(np.mean(tr.rho)) < continuity_min_speed:
            slow += 1
            continue
        states = tr.states
        out.append(SplitTrajectory(
            traj_id=tr.traj_id,
            key=tr.key,
            history=tuple(states[:obs_steps]),
            current=states[obs_steps],
            future=tuple(states[obs_steps + 1: obs_steps + 1 + max_steps]),
        ))
    log.info("split %d trajectories (dropped %d too short, %d without continuous motion)", len(out), short, slow)
    return out
