"""End-to-end optimization of the encoder/decoder pair.

Batches are built from groups of consecutive stride-1 windows of one cycle
so the latent autocorrelation term is well defined.  Per batch the loop
runs one batched encoder forward, one batched decoder rollout, then the
reverse pass in a fixed order (prediction gradient through the decoder,
correlation gradient added at the latents, one encoder backward), followed
by one Adam step.  That fixed order, plus seeded shuffling, makes whole
training runs bit-reproducible.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from .data import NormStats, WindowSample, compute_norm_stats
from .decoder import DecoderConfig, decoder_backward, decoder_rollout, init_decoder_params
from .encoder import (ConvLayerSpec, EncoderConfig, encoder_backward,
                      encoder_forward_batch, init_encoder_params)
from .errors import ConfigError, DataError, NumericalError, ShapeError
from .losses import (correlation_forward, correlation_loss_backward, mse_pred_grad,
                     mse_pred_loss, total_loss)
from .numerics import AdamState, ParamStore, adam_step

CHECKPOINT_FORMAT = "tsae-checkpoint"
CHECKPOINT_VERSION = 1
#: Gradient clipping stays off at short horizons so gradient checks are exact.
CLIP_MIN_HORIZON = 32


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a training run (given the data)."""

    n_a: int = 500
    n_b: int = 200
    n_xs: int = 3
    corr_weight: float = 0.1
    batch_size: int = 4
    contiguous_run_length: int = 16
    learning_rate: float = 1e-3
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    val_fraction: float = 0.2
    clip_norm: float = 5.0
    encoder_layers: tuple[ConvLayerSpec, ...] | None = None

    def __post_init__(self):
        for name in ("n_a", "n_b", "n_xs", "batch_size", "max_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"TrainConfig.{name} must be >= 1, got {getattr(self, name)}")
        if self.contiguous_run_length < 3:
            raise ConfigError(
                f"contiguous_run_length must be >= 3 for lag-1 statistics, "
                f"got {self.contiguous_run_length}"
            )
        if self.corr_weight < 0:
            raise ConfigError(f"corr_weight must be non-negative, got {self.corr_weight}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.patience < 0:
            raise ConfigError(f"patience must be non-negative, got {self.patience}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if not 0 < self.val_fraction < 1:
            raise ConfigError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.clip_norm <= 0:
            raise ConfigError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.encoder_layers is not None:
            specs = tuple(s if isinstance(s, ConvLayerSpec) else ConvLayerSpec(*s)
                          for s in self.encoder_layers)
            object.__setattr__(self, "encoder_layers", specs)
        self.encoder_config()  # validates layer chaining against n_a

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig.build(self.n_a, self.n_xs, input_channels=2,
                                   layers=self.encoder_layers)

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(n_x=self.n_xs, n_b=self.n_b)

    def to_dict(self) -> dict:
        layers = None
        if self.encoder_layers is not None:
            layers = [[s.in_channels, s.out_channels, s.kernel_length, s.stride,
                       s.activation] for s in self.encoder_layers]
        return {
            "n_a": self.n_a, "n_b": self.n_b, "n_xs": self.n_xs,
            "corr_weight": self.corr_weight, "batch_size": self.batch_size,
            "contiguous_run_length": self.contiguous_run_length,
            "learning_rate": self.learning_rate, "max_epochs": self.max_epochs,
            "patience": self.patience, "seed": self.seed,
            "val_fraction": self.val_fraction, "clip_norm": self.clip_norm,
            "encoder_layers": layers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {
            "n_a": int, "n_b": int, "n_xs": int, "corr_weight": float,
            "batch_size": int, "contiguous_run_length": int,
            "learning_rate": float, "max_epochs": int, "patience": int,
            "seed": int, "val_fraction": float, "clip_norm": float,
        }
        unknown = set(d) - set(known) - {"encoder_layers"}
        if unknown:
            raise ConfigError(f"unknown train config key(s): {sorted(unknown)}")
        kwargs = {}
        for key, cast in known.items():
            if key in d:
                kwargs[key] = cast(d[key])
        layers = d.get("encoder_layers")
        if layers is not None:
            specs = []
            for entry in layers:
                if len(entry) != 5:
                    raise ConfigError(
                        f"encoder layer entries need 5 fields "
                        f"[in, out, kernel, stride, activation], got {entry!r}"
                    )
                specs.append(ConvLayerSpec(int(entry[0]), int(entry[1]), int(entry[2]),
                                           int(entry[3]), str(entry[4])))
            kwargs["encoder_layers"] = tuple(specs)
        return cls(**kwargs)


@dataclass(frozen=True)
class EpochStats:
    """One row of the training history."""

    epoch: int
    train_pred: float
    train_corr: float
    val_pred: float


@dataclass
class TrainHistory:
    """Per-epoch losses plus which epoch won on validation."""

    epochs: list[EpochStats]
    best_epoch: int
    wall_time_s: float

    @property
    def n_epochs(self) -> int:
        return len(self.epochs)


@dataclass
class ModelBundle:
    """Trained parameters plus everything needed to use them on raw data."""

    params: ParamStore
    cfg: TrainConfig
    stats: NormStats
    epochs_completed: int = 0

    def encode(self, histories) -> np.ndarray:
        """Latents for raw-unit history windows [batch, n_a, 2] (or one window)."""
        arr = np.asarray(histories, dtype=np.float64)
        single = arr.ndim == 2
        if single:
            arr = arr[None]
        norm = np.empty_like(arr)
        norm[:, :, 0] = self.stats.current.normalize(arr[:, :, 0])
        norm[:, :, 1] = self.stats.voltage.normalize(arr[:, :, 1])
        latents, _ = encoder_forward_batch(norm, self.cfg.encoder_config(), self.params)
        return latents[0] if single else latents

    def predict(self, histories, future_currents) -> np.ndarray:
        """Voltage forecasts in volts for raw-unit inputs."""
        latents = self.encode(histories)
        u = np.asarray(future_currents, dtype=np.float64)
        single = latents.ndim == 1
        preds_norm = decoder_rollout(latents, self.stats.current.normalize(u),
                                     self.params, self.cfg.decoder_config())
        denorm = self.stats.voltage.denormalize(preds_norm)
        return denorm[0] if single and denorm.ndim == 2 else denorm


def init_model(cfg: TrainConfig) -> ParamStore:
    """Fresh parameter store for the configured encoder/decoder pair."""
    params = ParamStore()
    init_encoder_params(cfg.encoder_config(), params,
                        np.random.SeedSequence([cfg.seed, 0]))
    init_decoder_params(cfg.decoder_config(), params,
                        np.random.SeedSequence([cfg.seed, 1]))
    return params


def find_groups(windows, cfg: TrainConfig) -> list[list[WindowSample]]:
    """Chop stride-1 window runs into groups of ``contiguous_run_length``.

    Windows are grouped per (cell, cycle), ordered by start index, and cut
    into non-overlapping chunks; leftover windows shorter than a full group
    are dropped.
    """
    by_cycle: dict[tuple[str, int], list[WindowSample]] = {}
    for w in windows:
        by_cycle.setdefault((w.cell_id, w.cycle_index), []).append(w)
    groups = []
    run_len = cfg.contiguous_run_length
    for key in sorted(by_cycle):
        ws = sorted(by_cycle[key], key=lambda w: w.start)
        run: list[WindowSample] = []
        previous = None
        for w in ws:
            if previous is not None and w.start != previous + 1:
                run = []
            run.append(w)
            previous = w.start
            if len(run) == run_len:
                groups.append(run)
                run = []
    if not groups:
        raise ConfigError(
            f"no cycle provides {run_len} consecutive stride-1 windows; "
            f"shorten contiguous_run_length or provide longer cycles"
        )
    return groups


def _permuted_batches(items, batch_size: int, epoch_seed) -> list[list]:
    rng = np.random.default_rng(epoch_seed)
    order = rng.permutation(len(items))
    shuffled = [items[i] for i in order]
    return [shuffled[i:i + batch_size] for i in range(0, len(shuffled), batch_size)]


def _epoch_seed(cfg_seed: int, epoch: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg_seed, 2, epoch])


def batch_sampler(windows, cfg: TrainConfig, epoch_seed) -> list[list[list[WindowSample]]]:
    """Deterministic shuffled batches of contiguous window groups.

    Each batch holds up to ``cfg.batch_size`` groups; each group is
    ``cfg.contiguous_run_length`` windows with consecutive start indices
    from a single cycle.  The same ``epoch_seed`` reproduces the same order.
    """
    return _permuted_batches(find_groups(windows, cfg), cfg.batch_size, epoch_seed)


def _pack_group(group, stats: NormStats):
    h = np.stack([w.history for w in group])
    out = np.empty_like(h)
    out[:, :, 0] = stats.current.normalize(h[:, :, 0])
    out[:, :, 1] = stats.voltage.normalize(h[:, :, 1])
    u = stats.current.normalize(np.stack([w.future_current for w in group]))
    y = stats.voltage.normalize(np.stack([w.future_voltage for w in group]))
    return out, u, y


def _pack_windows(windows, stats: NormStats):
    return _pack_group(windows, stats)


def batch_loss_and_grads(params: ParamStore, cfg: TrainConfig, histories,
                         future_inputs, targets, group_slices):
    """One combined forward/backward over a batch, accumulating gradients.

    :param histories: normalized [batch, n_a, 2].
    :param future_inputs: normalized [batch, n_b].
    :param targets: normalized [batch, n_b].
    :param group_slices: slices partitioning the batch into contiguous
        window groups (for the correlation term).
    :returns: the loss breakdown; gradients are added into ``params``.

    Order of accumulation is fixed: decoder (prediction term), then the
    correlation contribution at the latents, then one encoder backward.
    """
    enc_cfg = cfg.encoder_config()
    dec_cfg = cfg.decoder_config()
    latents, enc_cache = encoder_forward_batch(histories, enc_cfg, params)
    preds, dec_cache = decoder_rollout(latents, future_inputs, params, dec_cfg,
                                       with_cache=True)
    pred_loss = mse_pred_loss(preds, targets)
    groups = [latents[sl] for sl in group_slices]
    corr_loss, _ = correlation_forward(groups)
    breakdown = total_loss(pred_loss, corr_loss, cfg.corr_weight)

    d_latents = decoder_backward(dec_cache, params, mse_pred_grad(preds, targets))
    if cfg.corr_weight > 0:
        corr_grads = correlation_loss_backward(groups, upstream=cfg.corr_weight)
        for sl, g in zip(group_slices, corr_grads):
            d_latents[sl] += g
    encoder_backward(enc_cache, enc_cfg, params, d_latents)
    return breakdown


def _param_norm_summary(params: ParamStore) -> str:
    parts = []
    for name in params.names():
        v = params.value(name)
        parts.append(f"{name}: |w|={float(np.linalg.norm(v)):.3e}")
    return "; ".join(parts)


def train(train_windows, val_windows, cfg: TrainConfig,
          stats: NormStats | None = None, *, init_params: ParamStore | None = None,
          epoch_offset: int = 0, progress=None) -> tuple[ModelBundle, TrainHistory]:
    """Fit the model, early-stopping on validation prediction loss.

    Normalization stats default to the training split's min/max (never the
    validation split).  Per epoch the history records the window-weighted
    training losses and the validation prediction loss; training stops
    after ``cfg.patience`` epochs without a new validation best, or at
    ``cfg.max_epochs``.  The returned bundle holds the best-validation
    parameters.

    ``init_params``/``epoch_offset`` continue a previous run (optimizer
    moments restart; epoch numbering and shuffling continue from the
    offset).
    """
    started = time.perf_counter()
    if not train_windows or not val_windows:
        raise DataError("both train and validation splits must be non-empty")
    if stats is None:
        stats = compute_norm_stats(train_windows)

    groups = find_groups(train_windows, cfg)
    packed = [_pack_group(g, stats) for g in groups]
    val_h, val_u, val_y = _pack_windows(val_windows, stats)

    params = init_params.copy() if init_params is not None else init_model(cfg)
    adam = AdamState(params, learning_rate=cfg.learning_rate)
    clip_active = cfg.clip_norm > 0 and cfg.n_b > CLIP_MIN_HORIZON

    history: list[EpochStats] = []
    best_val = np.inf
    best_params = params.copy()
    best_epoch = epoch_offset
    since_best = 0
    run_len = cfg.contiguous_run_length

    for epoch in range(epoch_offset + 1, epoch_offset + cfg.max_epochs + 1):
        batches = _permuted_batches(list(range(len(groups))), cfg.batch_size,
                                    _epoch_seed(cfg.seed, epoch))
        pred_sum = 0.0
        corr_sum = 0.0
        n_windows = 0
        n_groups = 0
        for batch_idx, group_ids in enumerate(batches):
            h = np.concatenate([packed[i][0] for i in group_ids])
            u = np.concatenate([packed[i][1] for i in group_ids])
            y = np.concatenate([packed[i][2] for i in group_ids])
            slices = [slice(j * run_len, (j + 1) * run_len)
                      for j in range(len(group_ids))]
            params.zero_grads()
            breakdown = batch_loss_and_grads(params, cfg, h, u, y, slices)
            if not (np.isfinite(breakdown.pred) and np.isfinite(breakdown.corr)):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch {batch_idx}: "
                    f"pred={breakdown.pred}, corr={breakdown.corr}; "
                    f"{_param_norm_summary(params)}"
                )
            if clip_active:
                norm = params.grad_norm()
                if norm > cfg.clip_norm:
                    params.scale_grads(cfg.clip_norm / norm)
            adam_step(params, adam)
            pred_sum += breakdown.pred * h.shape[0]
            corr_sum += breakdown.corr * len(group_ids)
            n_windows += h.shape[0]
            n_groups += len(group_ids)

        val_pred = _eval_pred_loss(params, cfg, val_h, val_u, val_y)
        if not np.isfinite(val_pred):
            raise NumericalError(
                f"non-finite validation loss at epoch {epoch}; "
                f"{_param_norm_summary(params)}"
            )
        stats_row = EpochStats(epoch=epoch, train_pred=pred_sum / n_windows,
                               train_corr=corr_sum / n_groups, val_pred=val_pred)
        history.append(stats_row)
        if progress is not None:
            progress(stats_row)

        if val_pred < best_val:
            best_val = val_pred
            best_params = params.copy()
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
        if since_best >= cfg.patience:
            break

    bundle = ModelBundle(params=best_params, cfg=cfg, stats=stats,
                         epochs_completed=history[-1].epoch)
    return bundle, TrainHistory(epochs=history, best_epoch=best_epoch,
                                wall_time_s=time.perf_counter() - started)


def _eval_pred_loss(params, cfg, h, u, y, chunk: int = 512) -> float:
    enc_cfg = cfg.encoder_config()
    dec_cfg = cfg.decoder_config()
    total = 0.0
    for i in range(0, h.shape[0], chunk):
        latents, _ = encoder_forward_batch(h[i:i + chunk], enc_cfg, params)
        preds = decoder_rollout(latents, u[i:i + chunk], params, dec_cfg)
        diff = preds - y[i:i + chunk]
        total += float(np.sum(diff * diff))
    return total / (h.shape[0] * cfg.n_b)


def save_checkpoint(bundle: ModelBundle, path) -> None:
    """Write the bundle as a self-describing JSON text document.

    Floats are serialized with full round-trip precision, so loading
    reproduces every parameter bit-exactly.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "config": bundle.cfg.to_dict(),
        "norm_stats": bundle.stats.to_dict(),
        "epochs_completed": bundle.epochs_completed,
        "params": {
            name: {"shape": list(bundle.params.value(name).shape),
                   "data": bundle.params.value(name).ravel().tolist()}
            for name in bundle.params.names()
        },
    }
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
            fh.write("\n")
    except OSError as exc:
        raise DataError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> ModelBundle:
    """Read a checkpoint, validating format, config, and parameter shapes."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"corrupted checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path} is not a {CHECKPOINT_FORMAT} document")
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(
            f"checkpoint format_version {version} unsupported "
            f"(expected {CHECKPOINT_VERSION})"
        )
    for key in ("config", "norm_stats", "params"):
        if key not in doc:
            raise DataError(f"checkpoint missing field {key!r}")
    cfg = TrainConfig.from_dict(doc["config"])
    stats = NormStats.from_dict(doc["norm_stats"])
    expected = init_model(cfg)
    params = ParamStore()
    for name, entry in doc["params"].items():
        try:
            shape = tuple(entry["shape"])
            data = np.asarray(entry["data"], dtype=np.float64)
        except (KeyError, TypeError) as exc:
            raise DataError(f"checkpoint parameter {name!r} malformed: {exc}") from exc
        if int(np.prod(shape)) != data.size:
            raise DataError(
                f"checkpoint parameter {name!r}: {data.size} values for shape {shape}"
            )
        params.add(name, data.reshape(shape))
    if params.names() != expected.names():
        raise ConfigError(
            f"checkpoint parameters {params.names()} do not match the "
            f"config's architecture {expected.names()}"
        )
    for name in expected.names():
        if params.value(name).shape != expected.value(name).shape:
            raise ConfigError(
                f"checkpoint parameter {name!r} has shape "
                f"{params.value(name).shape}, config implies "
                f"{expected.value(name).shape}"
            )
    return ModelBundle(params=params, cfg=cfg, stats=stats,
                       epochs_completed=int(doc.get("epochs_completed", 0)))
