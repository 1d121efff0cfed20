"""Prediction metrics and latent-space analyses.

Metrics run on non-overlapping windows (stride n_a + n_b) so every sample
is predicted once; errors are reported in denormalized volts.  The "MAE"
of the report is the maximum absolute error, labeled ``maxabs_v`` to avoid
confusion with the mean absolute error.

Latent analyses pair encoder outputs with the state of charge, either the
simulator's ground truth or, for measured data, a coulomb-counting proxy
from the cycle start (documented approximate).
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr

from .data import CycleSeries, Dataset
from .errors import ConfigError, DataError, ShapeError
from .losses import lag1_autocorrelation
from .training import ModelBundle

DEFAULT_Q_NOM_AH = 4.85
DEFAULT_SOC_START = 0.8


def worker_count(n_tasks: int) -> int:
    """Worker cap from the TSAE_THREADS environment variable (default 1)."""
    raw = os.environ.get("TSAE_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"TSAE_THREADS must be an integer, got {raw!r}") from None
    return max(1, min(value, n_tasks))


def soc_labels(cycle: CycleSeries, q_nom_ah: float = DEFAULT_Q_NOM_AH,
               assumed_start: float = DEFAULT_SOC_START) -> np.ndarray:
    """Per-sample SOC: ground truth when present, else a coulomb proxy.

    The proxy integrates current from the cycle start at nominal capacity,
    assuming the cycle begins at ``assumed_start``; it ignores aging, so
    treat it as approximate.
    """
    if cycle.soc is not None:
        return cycle.soc
    if cycle.n_samples == 1:
        return np.array([assumed_start])
    charge = cycle.current_a[:-1] * np.diff(cycle.time_s)
    depleted = np.concatenate(([0.0], np.cumsum(charge))) / (3600.0 * q_nom_ah)
    return assumed_start - depleted


@dataclass
class CycleMetrics:
    """Per-cycle prediction error summary."""

    cell_id: str
    cycle_index: int
    rmse_v: float
    maxabs_v: float
    n_windows: int


@dataclass
class PredictionReport:
    """Multi-step prediction quality over a set of cycles.

    ``predictions`` and ``latents`` keep the raw per-cycle arrays that
    :func:`export_report` writes out; the aggregate RMSE is the root of the
    window-count-weighted mean of per-cycle mean squared errors.
    """

    per_cycle: list[CycleMetrics]
    rmse_v: float
    maxabs_v: float
    horizon: int
    hist_edges: np.ndarray
    hist_counts: np.ndarray
    predictions: list[dict]
    latents: list[dict]


def _cycle_windows(cycle: CycleSeries, n_a: int, n_b: int, stride: int):
    """History/future blocks of one cycle as stacked arrays."""
    t_total = cycle.n_samples
    n_w = (t_total - n_a - n_b) // stride + 1 if t_total >= n_a + n_b else 0
    if n_w <= 0:
        return None
    starts = np.arange(n_w) * stride
    h = np.empty((n_w, n_a, 2))
    u = np.empty((n_w, n_b))
    y = np.empty((n_w, n_b))
    t_s = np.empty((n_w, n_b))
    for i, s in enumerate(starts):
        mid = s + n_a
        h[i, :, 0] = cycle.current_a[s:mid]
        h[i, :, 1] = cycle.voltage_v[s:mid]
        u[i] = cycle.current_a[mid:mid + n_b]
        y[i] = cycle.voltage_v[mid:mid + n_b]
        t_s[i] = cycle.time_s[mid:mid + n_b]
    return starts, h, u, y, t_s


def _as_cycles(source) -> list[CycleSeries]:
    if isinstance(source, Dataset):
        return list(source.cycles)
    if isinstance(source, CycleSeries):
        return [source]
    return list(source)


def _metrics_from_cycle_results(results, horizon: int) -> PredictionReport:
    """Assemble the report from per-cycle (cycle, starts, errors, ...) rows."""
    per_cycle = []
    predictions = []
    latents = []
    all_errors = []
    weighted_mse = 0.0
    total_windows = 0
    maxabs = 0.0
    for row in results:
        cycle = row["cycle"]
        err = row["y_pred"] - row["y_true"]
        mse = float(np.mean(err * err))
        cycle_max = float(np.max(np.abs(err)))
        n_w = err.shape[0]
        per_cycle.append(CycleMetrics(
            cell_id=cycle.cell_id, cycle_index=cycle.cycle_index,
            rmse_v=float(np.sqrt(mse)), maxabs_v=cycle_max, n_windows=n_w))
        weighted_mse += mse * n_w
        total_windows += n_w
        maxabs = max(maxabs, cycle_max)
        all_errors.append(err.ravel())
        predictions.append({
            "cycle_index": cycle.cycle_index, "cell_id": cycle.cell_id,
            "t_s": row["t_s"], "y_true": row["y_true"], "y_pred": row["y_pred"],
        })
        if row.get("latents") is not None:
            latents.append({
                "cycle_index": cycle.cycle_index, "cell_id": cycle.cell_id,
                "window_start": row["starts"], "soc": row["soc"],
                "x": row["latents"],
            })
    pooled = np.concatenate(all_errors)
    counts, edges = np.histogram(pooled, bins=50)
    return PredictionReport(
        per_cycle=per_cycle,
        rmse_v=float(np.sqrt(weighted_mse / total_windows)),
        maxabs_v=maxabs,
        horizon=horizon,
        hist_edges=edges,
        hist_counts=counts,
        predictions=predictions,
        latents=latents,
    )


def _evaluate_cycles(cycles, n_a, n_b, stride, predict_fn, encode_fn=None,
                     q_nom_ah=DEFAULT_Q_NOM_AH):
    usable = []
    for cycle in cycles:
        blocks = _cycle_windows(cycle, n_a, n_b, stride)
        if blocks is not None:
            usable.append((cycle, blocks))
    if not usable:
        raise DataError(
            f"no cycle is long enough for a single window ({n_a + n_b} samples)"
        )

    def run_one(item):
        cycle, (starts, h, u, y, t_s) = item
        row = {"cycle": cycle, "starts": starts, "t_s": t_s, "y_true": y,
               "y_pred": y.copy() if predict_fn is None else predict_fn(h, u)}
        if encode_fn is not None:
            soc = soc_labels(cycle, q_nom_ah)
            row["latents"] = encode_fn(h)
            row["soc"] = soc[starts + n_a - 1]
        return row

    workers = worker_count(len(usable))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, usable))
    else:
        results = [run_one(item) for item in usable]
    return _metrics_from_cycle_results(results, n_b)


def rollout_metrics(bundle: ModelBundle, test_data, stride: int | None = None,
                    q_nom_ah: float = DEFAULT_Q_NOM_AH) -> PredictionReport:
    """Multi-step prediction metrics of a trained model on test cycles.

    Windows default to non-overlapping (stride n_a + n_b); each window is
    encoded, rolled out over the horizon, and denormalized before errors
    are taken.  Latents with SOC labels ride along for the report files.
    """
    cycles = _as_cycles(test_data)
    if not cycles:
        raise DataError("empty test set")
    n_a, n_b = bundle.cfg.n_a, bundle.cfg.n_b
    if stride is None:
        stride = n_a + n_b
    return _evaluate_cycles(
        cycles, n_a, n_b, stride,
        predict_fn=bundle.predict,
        encode_fn=bundle.encode,
        q_nom_ah=q_nom_ah,
    )


def persistence_metrics(test_data, n_a: int, n_b: int,
                        stride: int | None = None) -> PredictionReport:
    """Baseline that repeats each window's last observed voltage."""
    cycles = _as_cycles(test_data)
    if not cycles:
        raise DataError("empty test set")
    if stride is None:
        stride = n_a + n_b

    def predict(h, u):
        return np.repeat(h[:, -1, 1][:, None], n_b, axis=1)

    return _evaluate_cycles(cycles, n_a, n_b, stride, predict_fn=predict)


def oracle_metrics(test_data, n_a: int, n_b: int,
                   stride: int | None = None) -> PredictionReport:
    """Passthrough harness: predictions equal the targets (all-zero errors).

    Exercises the windowing/report pipeline independently of any model.
    """
    cycles = _as_cycles(test_data)
    if not cycles:
        raise DataError("empty test set")
    if stride is None:
        stride = n_a + n_b
    return _evaluate_cycles(cycles, n_a, n_b, stride, predict_fn=None)


@dataclass
class FixedSocLatents:
    """One latent per cycle, taken where SOC passes nearest a target."""

    soc_target: float
    tolerance: float
    cell_ids: list[str]
    cycle_indices: np.ndarray
    socs: np.ndarray
    latents: np.ndarray


def _history_positions(cycle: CycleSeries, n_a: int):
    """All stride-1 history windows [W, n_a, 2] and their end indices."""
    t_total = cycle.n_samples
    if t_total < n_a + 1:
        return None
    n_w = t_total - n_a + 1
    h = np.empty((n_w, n_a, 2))
    for i in range(n_w):
        h[i, :, 0] = cycle.current_a[i:i + n_a]
        h[i, :, 1] = cycle.voltage_v[i:i + n_a]
    ends = np.arange(n_w) + n_a - 1
    return h, ends


def latent_at_fixed_soc(bundle: ModelBundle, dataset, soc_target: float,
                        tolerance: float,
                        q_nom_ah: float = DEFAULT_Q_NOM_AH) -> FixedSocLatents:
    """Per-cycle latents at (approximately) constant SOC.

    For each cycle, encodes the window whose end-sample SOC lies nearest
    ``soc_target``; cycles with no end sample within ``tolerance`` are
    omitted.  Raises when no cycle qualifies.
    """
    cycles = _as_cycles(dataset)
    chosen = []
    for cycle in cycles:
        pos = _history_positions(cycle, bundle.cfg.n_a)
        if pos is None:
            continue
        h, ends = pos
        soc = soc_labels(cycle, q_nom_ah)[ends]
        gap = np.abs(soc - soc_target)
        best = int(np.argmin(gap))
        if gap[best] <= tolerance:
            chosen.append((cycle, h[best], float(soc[best])))
    if not chosen:
        raise DataError(
            f"no cycle has a window ending within {tolerance} of SOC {soc_target}"
        )
    histories = np.stack([c[1] for c in chosen])
    latents = bundle.encode(histories)
    return FixedSocLatents(
        soc_target=soc_target, tolerance=tolerance,
        cell_ids=[c[0].cell_id for c in chosen],
        cycle_indices=np.array([c[0].cycle_index for c in chosen]),
        socs=np.array([c[2] for c in chosen]),
        latents=latents,
    )


@dataclass
class LatentTrajectory:
    """Stride-1 latent trace of one cycle with SOC labels."""

    cell_id: str
    cycle_index: int
    starts: np.ndarray
    socs: np.ndarray
    latents: np.ndarray

    def feature_autocorrelations(self) -> np.ndarray:
        """Lag-1 autocorrelation of each latent feature along the trace."""
        return np.array([
            lag1_autocorrelation(self.latents, i)
            for i in range(self.latents.shape[1])
        ])


def latent_across_soc(bundle: ModelBundle, cycle: CycleSeries,
                      q_nom_ah: float = DEFAULT_Q_NOM_AH) -> LatentTrajectory:
    """Latent trajectory within one cycle, one point per history position.

    The cycle must support at least two history windows (n_a + 1 samples).
    """
    pos = _history_positions(cycle, bundle.cfg.n_a)
    if pos is None or pos[0].shape[0] < 2:
        raise DataError(
            f"cycle {cycle.cell_id}/{cycle.cycle_index} is too short for a "
            f"latent trajectory (needs at least {bundle.cfg.n_a + 1} samples)"
        )
    h, ends = pos
    latents = bundle.encode(h)
    return LatentTrajectory(
        cell_id=cycle.cell_id, cycle_index=cycle.cycle_index,
        starts=ends - bundle.cfg.n_a + 1,
        socs=soc_labels(cycle, q_nom_ah)[ends],
        latents=latents,
    )


def _guarded_pearson(x: np.ndarray, y: np.ndarray) -> float:
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float(dx @ dx)
    sy = float(dy @ dy)
    if sx / x.size < 1e-12 or sy / y.size < 1e-12:
        return 0.0
    return float((dx @ dy) / np.sqrt(sx * sy))


def _guarded_spearman(x: np.ndarray, y: np.ndarray) -> float:
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0
    rho = spearmanr(x, y).statistic
    return 0.0 if np.isnan(rho) else float(rho)


@dataclass
class AlignmentEntry:
    feature: int
    pearson: float
    spearman: float


@dataclass
class AlignmentTable:
    """Per-feature correlation of latents against one target signal."""

    target: str
    entries: list[AlignmentEntry]

    @property
    def best_feature(self) -> int:
        return max(self.entries, key=lambda e: abs(e.pearson)).feature

    @property
    def best_abs_pearson(self) -> float:
        return max(abs(e.pearson) for e in self.entries)

    @property
    def best_abs_spearman(self) -> float:
        return max(abs(e.spearman) for e in self.entries)


def alignment_table(latents, target, name: str = "target") -> AlignmentTable:
    """Pearson/Spearman of each latent feature against a target signal."""
    lat = np.asarray(latents, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    if lat.ndim != 2 or tgt.ndim != 1 or lat.shape[0] != tgt.size:
        raise ShapeError(
            f"latents [N, n_xs] and target [N] required, got {lat.shape}, {tgt.shape}"
        )
    entries = [
        AlignmentEntry(feature=i,
                       pearson=_guarded_pearson(lat[:, i], tgt),
                       spearman=_guarded_spearman(lat[:, i], tgt))
        for i in range(lat.shape[1])
    ]
    return AlignmentTable(target=name, entries=entries)


def latent_alignment(latents, soc=None, theta_q=None) -> dict[str, AlignmentTable]:
    """Alignment tables of latents against available slow-state ground truth."""
    if soc is None and theta_q is None:
        raise DataError("latent_alignment needs SOC and/or theta_q ground truth")
    tables = {}
    if soc is not None:
        tables["soc"] = alignment_table(latents, soc, "soc")
    if theta_q is not None:
        tables["theta_q"] = alignment_table(latents, theta_q, "theta_q")
    return tables


def _open_out(path):
    try:
        return open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def export_report(report: PredictionReport, out_dir) -> dict[str, str]:
    """Write predictions.csv, latents.csv, and metrics.csv under ``out_dir``.

    Schemas: predictions (cycle, step, t_s, y_true_v, y_pred_v), latents
    (cycle, window_start, soc, x1..x{n_xs}), metrics (cycle, rmse_v,
    maxabs_v).  Floats use repr for exact re-import.
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out_dir}: {exc}") from exc
    paths = {name: os.path.join(out_dir, f"{name}.csv")
             for name in ("predictions", "latents", "metrics")}

    with _open_out(paths["predictions"]) as fh:
        writer = csv.writer(fh)
        writer.writerow(["cycle", "step", "t_s", "y_true_v", "y_pred_v"])
        for block in report.predictions:
            n_w, n_b = block["y_true"].shape
            for i in range(n_w):
                for j in range(n_b):
                    writer.writerow([
                        block["cycle_index"], j + 1,
                        repr(float(block["t_s"][i, j])),
                        repr(float(block["y_true"][i, j])),
                        repr(float(block["y_pred"][i, j])),
                    ])

    n_xs = report.latents[0]["x"].shape[1] if report.latents else 0
    with _open_out(paths["latents"]) as fh:
        writer = csv.writer(fh)
        writer.writerow(["cycle", "window_start", "soc"]
                        + [f"x{i + 1}" for i in range(n_xs)])
        for block in report.latents:
            for i in range(block["x"].shape[0]):
                writer.writerow([
                    block["cycle_index"], int(block["window_start"][i]),
                    repr(float(block["soc"][i])),
                ] + [repr(float(v)) for v in block["x"][i]])

    with _open_out(paths["metrics"]) as fh:
        writer = csv.writer(fh)
        writer.writerow(["cycle", "rmse_v", "maxabs_v"])
        for m in report.per_cycle:
            writer.writerow([m.cycle_index, repr(m.rmse_v), repr(m.maxabs_v)])
    return paths
