"""Cycle containers, CSV ingestion, normalization, windowing and splits.

The on-disk format is a plain CSV with header
``cell_id,cycle_index,time_s,current_a,voltage_v`` sorted by
(cell_id, cycle_index, time_s); synthetic files may append ground-truth
columns ``soc,theta_q,theta_r``.  Current is positive on discharge.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DataError, ShapeError

CSV_COLUMNS = ("cell_id", "cycle_index", "time_s", "current_a", "voltage_v")
GROUND_TRUTH_COLUMNS = ("soc", "theta_q", "theta_r")
NOMINAL_SPACING_S = 0.1


def _freeze(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass
class CycleSeries:
    """One discharge cycle of one cell.

    Sequences all share one length; time is strictly increasing.  The
    ground-truth fields are filled by the simulator (per-sample ``soc``,
    per-cycle aging factors) and stay ``None`` for measured data unless the
    CSV carries them.
    """

    cell_id: str
    cycle_index: int
    time_s: np.ndarray
    current_a: np.ndarray
    voltage_v: np.ndarray
    soc: np.ndarray | None = None
    theta_q: float | None = None
    theta_r: float | None = None
    truncated: bool = False

    def __post_init__(self):
        self.time_s = _freeze(self.time_s)
        self.current_a = _freeze(self.current_a)
        self.voltage_v = _freeze(self.voltage_v)
        if self.soc is not None:
            self.soc = _freeze(self.soc)
        n = self.time_s.size
        if n < 1:
            raise DataError(f"cycle {self.cell_id}/{self.cycle_index} is empty")
        for name in ("current_a", "voltage_v"):
            if getattr(self, name).size != n:
                raise DataError(
                    f"cycle {self.cell_id}/{self.cycle_index}: {name} has "
                    f"{getattr(self, name).size} samples, time_s has {n}"
                )
        if self.soc is not None and self.soc.size != n:
            raise DataError(
                f"cycle {self.cell_id}/{self.cycle_index}: soc length mismatch"
            )
        if n > 1 and not np.all(np.diff(self.time_s) > 0):
            raise DataError(
                f"cycle {self.cell_id}/{self.cycle_index}: time not strictly increasing"
            )

    @property
    def n_samples(self) -> int:
        return int(self.time_s.size)


@dataclass
class Dataset:
    """A bag of cycles plus optional normalization stats."""

    cycles: list[CycleSeries]
    stats: "NormStats | None" = None
    provenance: str = "synthetic"

    def cell_ids(self) -> tuple[str, ...]:
        seen = dict.fromkeys(c.cell_id for c in self.cycles)
        return tuple(seen)

    def cycles_for(self, cell_id: str) -> list[CycleSeries]:
        return [c for c in self.cycles if c.cell_id == cell_id]

    @property
    def n_samples(self) -> int:
        return sum(c.n_samples for c in self.cycles)


@dataclass(frozen=True)
class ChannelStats:
    """Min/max of one channel; ``constant`` marks a degenerate span."""

    lo: float
    hi: float
    constant: bool = False

    def normalize(self, values):
        arr = np.asarray(values, dtype=np.float64)
        if self.constant:
            return np.zeros_like(arr)
        return -0.8 + 1.6 * (arr - self.lo) / (self.hi - self.lo)

    def denormalize(self, values):
        arr = np.asarray(values, dtype=np.float64)
        if self.constant:
            return np.full_like(arr, self.lo)
        return self.lo + (arr + 0.8) * (self.hi - self.lo) / 1.6


@dataclass(frozen=True)
class NormStats:
    """Per-channel min/max mapping raw units onto [-0.8, 0.8]."""

    current: ChannelStats
    voltage: ChannelStats

    def to_dict(self) -> dict:
        return {
            "current": {"lo": self.current.lo, "hi": self.current.hi,
                        "constant": self.current.constant},
            "voltage": {"lo": self.voltage.lo, "hi": self.voltage.hi,
                        "constant": self.voltage.constant},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        try:
            return cls(
                current=ChannelStats(float(d["current"]["lo"]), float(d["current"]["hi"]),
                                     bool(d["current"]["constant"])),
                voltage=ChannelStats(float(d["voltage"]["lo"]), float(d["voltage"]["hi"]),
                                     bool(d["voltage"]["constant"])),
            )
        except KeyError as exc:
            raise DataError(f"normalization stats missing key: {exc}") from exc


def _channel_stats(values: np.ndarray) -> ChannelStats:
    lo = float(np.min(values))
    hi = float(np.max(values))
    if hi - lo < 1e-12:
        return ChannelStats(lo=lo, hi=hi, constant=True)
    return ChannelStats(lo=lo, hi=hi)


def compute_norm_stats(source) -> NormStats:
    """Min/max stats from a Dataset, cycle list, or window list."""
    currents, voltages = [], []
    items = source.cycles if isinstance(source, Dataset) else list(source)
    if not items:
        raise DataError("cannot compute normalization stats from nothing")
    for item in items:
        if isinstance(item, CycleSeries):
            currents.append(item.current_a)
            voltages.append(item.voltage_v)
        else:
            currents.append(item.history[:, 0])
            currents.append(item.future_current)
            voltages.append(item.history[:, 1])
            voltages.append(item.future_voltage)
    return NormStats(current=_channel_stats(np.concatenate(currents)),
                     voltage=_channel_stats(np.concatenate(voltages)))


def normalize(dataset: Dataset, stats: NormStats | None = None):
    """Map current/voltage onto [-0.8, 0.8] per channel.

    :returns: (normalized dataset, stats).  Stats default to the dataset's
        own min/max; ground-truth fields pass through unchanged.
    """
    if not dataset.cycles:
        raise DataError("cannot normalize an empty dataset")
    if stats is None:
        stats = compute_norm_stats(dataset)
    cycles = [
        replace(c, current_a=stats.current.normalize(c.current_a),
                voltage_v=stats.voltage.normalize(c.voltage_v))
        for c in dataset.cycles
    ]
    return Dataset(cycles=cycles, stats=stats, provenance=dataset.provenance), stats


def denormalize(stats: NormStats, channel: str, values):
    """Invert :func:`normalize` for one channel ("current" or "voltage")."""
    if channel not in ("current", "voltage"):
        raise ConfigError(f"unknown channel {channel!r}")
    return getattr(stats, channel).denormalize(values)


@dataclass
class WindowSample:
    """One training sample: history block plus aligned future block.

    ``history`` is [n_a, 2] with columns (current, voltage); the future
    arrays hold the next ``n_b`` samples of the same cycle.  ``soc_end`` is
    the ground-truth SOC at the last history sample when available.
    """

    history: np.ndarray
    future_current: np.ndarray
    future_voltage: np.ndarray
    cell_id: str
    cycle_index: int
    start: int
    soc_end: float | None = None

    @property
    def n_a(self) -> int:
        return int(self.history.shape[0])

    @property
    def n_b(self) -> int:
        return int(self.future_current.size)


def make_windows(source, n_a: int, n_b: int, stride: int = 1) -> list[WindowSample]:
    """Slice cycles into overlapping (history, future) windows.

    A cycle of length T yields floor((T - n_a - n_b) / stride) + 1 windows
    when T >= n_a + n_b and none otherwise; windows never cross cycle
    boundaries.
    """
    if n_a < 1 or n_b < 1:
        raise ShapeError(f"window sizes must be positive, got n_a={n_a}, n_b={n_b}")
    if stride < 1:
        raise ShapeError(f"stride must be positive, got {stride}")
    cycles = source.cycles if isinstance(source, Dataset) else list(source)
    windows = []
    for cycle in cycles:
        t_total = cycle.n_samples
        if t_total < n_a + n_b:
            continue
        current = cycle.current_a
        voltage = cycle.voltage_v
        for start in range(0, t_total - n_a - n_b + 1, stride):
            mid = start + n_a
            end = mid + n_b
            history = np.column_stack((current[start:mid], voltage[start:mid]))
            soc_end = float(cycle.soc[mid - 1]) if cycle.soc is not None else None
            windows.append(WindowSample(
                history=history,
                future_current=np.array(current[mid:end]),
                future_voltage=np.array(voltage[mid:end]),
                cell_id=cycle.cell_id,
                cycle_index=cycle.cycle_index,
                start=start,
                soc_end=soc_end,
            ))
    return windows


def split_windows(windows, val_fraction: float, seed, block_length: int = 1):
    """Shuffle windows (seeded) and split off a validation fraction.

    With ``block_length > 1`` the shuffle operates on blocks of that many
    windows consecutive within a cycle, so training keeps unbroken runs for
    the correlation regularizer; the validation count is then approximate.
    """
    if not 0 < val_fraction < 1:
        raise ConfigError(f"val_fraction must be in (0, 1), got {val_fraction}")
    if block_length < 1:
        raise ConfigError(f"block_length must be positive, got {block_length}")
    if not windows:
        raise DataError("no windows to split")
    rng = np.random.default_rng(seed)
    if block_length == 1:
        order = rng.permutation(len(windows))
        n_val = round(val_fraction * len(windows))
        val_idx = set(order[:n_val].tolist())
        train = [w for i, w in enumerate(windows) if i not in val_idx]
        val = [w for i, w in enumerate(windows) if i in val_idx]
        return train, val
    blocks = []
    for i in range(0, len(windows), block_length):
        blocks.append(windows[i:i + block_length])
    order = rng.permutation(len(blocks))
    target = round(val_fraction * len(windows))
    val, train = [], []
    taken = 0
    for b_idx in order:
        if taken < target:
            val.extend(blocks[b_idx])
            taken += len(blocks[b_idx])
        else:
            train.extend(blocks[b_idx])
    if not train or not val:
        raise DataError("split produced an empty train or validation set")
    return train, val


@dataclass
class SplitResult:
    """Outcome of :func:`split_dataset`."""

    train: list[WindowSample]
    val: list[WindowSample]
    test: list[CycleSeries]


def split_dataset(dataset: Dataset, holdout_cells, val_fraction: float, seed, *,
                  n_a: int, n_b: int, stride: int = 1, block_length: int = 1,
                  holdout_cycles=()) -> SplitResult:
    """Set aside test cycles, window the rest, and split train/validation.

    Test cycles are the named holdout cells in full, plus any cycle whose
    index appears in ``holdout_cycles`` (useful for single-cell synthetic
    data).  Remaining cycles are windowed and shuffled into train and
    validation by ``val_fraction``; no window leaks across splits.
    """
    holdout_cells = set(holdout_cells)
    holdout_cycles = set(holdout_cycles)
    known = set(dataset.cell_ids())
    missing = holdout_cells - known
    if missing:
        raise ConfigError(f"holdout cells not in dataset: {sorted(missing)}")
    test, rest = [], []
    for cycle in dataset.cycles:
        if cycle.cell_id in holdout_cells or cycle.cycle_index in holdout_cycles:
            test.append(cycle)
        else:
            rest.append(cycle)
    if not rest:
        raise ConfigError("holdout selection leaves no cycles to train on")
    windows = make_windows(rest, n_a, n_b, stride)
    if not windows:
        raise DataError(
            f"no training windows: no remaining cycle has {n_a + n_b} samples"
        )
    train, val = split_windows(windows, val_fraction, seed, block_length)
    return SplitResult(train=train, val=val, test=test)


def _parse_float(text: str, column: str, line_no: int) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise DataError(
            f"row {line_no}: column {column!r} is not numeric: {text!r}"
        ) from exc


def load_csv(path) -> Dataset:
    """Read a cycle CSV (see module docstring for the schema).

    Rows must be grouped by (cell_id, cycle_index) with strictly increasing
    time inside each group; violations are reported with their line number.
    Sample spacing far from the 10 Hz nominal only triggers a warning.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {missing}")
        unknown = [c for c in header if c not in CSV_COLUMNS + GROUND_TRUTH_COLUMNS]
        if unknown:
            raise DataError(f"{path}: unknown column(s) {unknown}")
        col = {name: header.index(name) for name in header}
        has_gt = all(c in col for c in GROUND_TRUTH_COLUMNS)

        groups: dict[tuple[str, int], dict] = {}
        current_key = None
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"row {line_no}: expected {len(header)} fields, got {len(row)}"
                )
            cell = row[col["cell_id"]]
            try:
                k = int(row[col["cycle_index"]])
            except ValueError:
                raise DataError(
                    f"row {line_no}: cycle_index is not an integer: "
                    f"{row[col['cycle_index']]!r}"
                ) from None
            if k < 0:
                raise DataError(f"row {line_no}: negative cycle_index {k}")
            key = (cell, k)
            if key != current_key:
                if key in groups:
                    raise DataError(
                        f"row {line_no}: rows for cell {cell!r} cycle {k} are not "
                        f"contiguous; file must be sorted by (cell_id, cycle_index, time_s)"
                    )
                groups[key] = {"time": [], "current": [], "voltage": [],
                               "soc": [], "theta_q": None, "theta_r": None}
                current_key = key
            g = groups[key]
            t = _parse_float(row[col["time_s"]], "time_s", line_no)
            if g["time"] and t <= g["time"][-1]:
                raise DataError(
                    f"row {line_no}: time_s {t} not increasing within cell "
                    f"{cell!r} cycle {k} (previous {g['time'][-1]})"
                )
            g["time"].append(t)
            g["current"].append(_parse_float(row[col["current_a"]], "current_a", line_no))
            g["voltage"].append(_parse_float(row[col["voltage_v"]], "voltage_v", line_no))
            if has_gt:
                g["soc"].append(_parse_float(row[col["soc"]], "soc", line_no))
                if g["theta_q"] is None:
                    g["theta_q"] = _parse_float(row[col["theta_q"]], "theta_q", line_no)
                    g["theta_r"] = _parse_float(row[col["theta_r"]], "theta_r", line_no)

    if not groups:
        raise DataError(f"{path}: no data rows")
    cycles = []
    spacing_samples = []
    for (cell, k), g in groups.items():
        cycles.append(CycleSeries(
            cell_id=cell, cycle_index=k,
            time_s=g["time"], current_a=g["current"], voltage_v=g["voltage"],
            soc=g["soc"] if has_gt else None,
            theta_q=g["theta_q"], theta_r=g["theta_r"],
        ))
        if len(g["time"]) > 1:
            spacing_samples.append(np.diff(g["time"]))
    if spacing_samples:
        median_dt = float(np.median(np.concatenate(spacing_samples)))
        if abs(median_dt - NOMINAL_SPACING_S) / NOMINAL_SPACING_S > 0.10:
            warnings.warn(
                f"{path}: median sample spacing {median_dt:.4g} s deviates more "
                f"than 10% from the nominal {NOMINAL_SPACING_S} s",
                stacklevel=2,
            )
    return Dataset(cycles=cycles, provenance="csv")


def write_csv(dataset: Dataset, path, include_ground_truth: bool | None = None) -> None:
    """Write a dataset in the package CSV schema.

    Ground-truth columns are included when every cycle carries them (or
    when forced via ``include_ground_truth``); floats use repr so a read
    back reproduces the exact values.
    """
    if include_ground_truth is None:
        include_ground_truth = all(
            c.soc is not None and c.theta_q is not None and c.theta_r is not None
            for c in dataset.cycles
        ) and bool(dataset.cycles)
    header = list(CSV_COLUMNS) + (list(GROUND_TRUTH_COLUMNS) if include_ground_truth else [])
    try:
        fh = open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc
    with fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for cycle in sorted(dataset.cycles, key=lambda c: (c.cell_id, c.cycle_index)):
            if include_ground_truth and cycle.soc is None:
                raise DataError(
                    f"cycle {cycle.cell_id}/{cycle.cycle_index} has no ground truth"
                )
            for i in range(cycle.n_samples):
                row = [cycle.cell_id, cycle.cycle_index,
                       repr(float(cycle.time_s[i])),
                       repr(float(cycle.current_a[i])),
                       repr(float(cycle.voltage_v[i]))]
                if include_ground_truth:
                    row += [repr(float(cycle.soc[i])),
                            repr(float(cycle.theta_q)),
                            repr(float(cycle.theta_r))]
                writer.writerow(row)
