"""Scikit-learn style facade over the training pipeline.

``TwoScaleAutoencoder`` follows the usual estimator conventions: the
constructor only stores hyperparameters, ``fit`` learns from a Dataset,
``transform`` maps history windows to latents, and ``predict`` rolls out
voltage forecasts.  ``get_params``/``set_params`` come from BaseEstimator,
so the class composes with scikit-learn tooling (clone, grid search).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import WindowSample, compute_norm_stats, make_windows, split_windows
from .errors import DataError, ShapeError
from .training import (ModelBundle, TrainConfig, TrainHistory, load_checkpoint,
                       save_checkpoint, train)


class TwoScaleAutoencoder(TransformerMixin, BaseEstimator):
    """Sequence-to-sequence model separating slow from fast battery dynamics.

    A convolutional encoder compresses ``n_a`` history samples of (current,
    voltage) into ``n_xs`` latent features; a recurrent decoder seeded with
    that latent predicts the next ``n_b`` voltage samples from future
    current.  The latent autocorrelation penalty (``corr_weight``) pushes
    slowly varying signals, like state of charge and aging, into the
    latent space.

    Parameters mirror :class:`tsae.training.TrainConfig`; fitted state
    lives in ``bundle_`` and ``history_``.
    """

    def __init__(self, n_a=500, n_b=200, n_xs=3, corr_weight=0.1,
                 learning_rate=1e-3, batch_size=4, contiguous_run_length=16,
                 max_epochs=100, patience=10, val_fraction=0.2, clip_norm=5.0,
                 encoder_layers=None, seed=0):
        self.n_a = n_a
        self.n_b = n_b
        self.n_xs = n_xs
        self.corr_weight = corr_weight
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.contiguous_run_length = contiguous_run_length
        self.max_epochs = max_epochs
        self.patience = patience
        self.val_fraction = val_fraction
        self.clip_norm = clip_norm
        self.encoder_layers = encoder_layers
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        layers = self.encoder_layers
        if layers is not None:
            layers = tuple(layers)
        return TrainConfig(
            n_a=self.n_a, n_b=self.n_b, n_xs=self.n_xs,
            corr_weight=self.corr_weight, batch_size=self.batch_size,
            contiguous_run_length=self.contiguous_run_length,
            learning_rate=self.learning_rate, max_epochs=self.max_epochs,
            patience=self.patience, seed=self.seed,
            val_fraction=self.val_fraction, clip_norm=self.clip_norm,
            encoder_layers=layers,
        )

    def fit(self, X, y=None, *, progress=None):
        """Fit on a :class:`tsae.data.Dataset` (or a list of cycles).

        Windows the cycles at stride 1, splits train/validation in blocks
        of ``contiguous_run_length`` windows (keeping runs unbroken for the
        correlation term), computes normalization stats on the training
        split only, and optimizes until early stopping.
        """
        cfg = self._train_config()
        windows = make_windows(X, cfg.n_a, cfg.n_b, stride=1)
        if not windows:
            raise DataError(
                f"no training windows: no cycle has n_a + n_b = "
                f"{cfg.n_a + cfg.n_b} samples"
            )
        train_w, val_w = split_windows(windows, cfg.val_fraction, cfg.seed,
                                       block_length=cfg.contiguous_run_length)
        stats = compute_norm_stats(train_w)
        self.bundle_, self.history_ = train(train_w, val_w, cfg, stats,
                                            progress=progress)
        return self

    def _histories_array(self, X) -> np.ndarray:
        if isinstance(X, WindowSample):
            return X.history[None]
        if isinstance(X, (list, tuple)) and X and isinstance(X[0], WindowSample):
            return np.stack([w.history for w in X])
        arr = np.asarray(X, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or arr.shape[1:] != (self.bundle_.cfg.n_a, 2):
            raise ShapeError(
                f"histories must be [batch, {self.bundle_.cfg.n_a}, 2] in raw "
                f"units, got {np.shape(X)}"
            )
        return arr

    def transform(self, X) -> np.ndarray:
        """Latent features for history windows (raw units).

        Accepts [batch, n_a, 2] arrays, a single [n_a, 2] window, or
        WindowSample lists; returns [batch, n_xs].
        """
        check_is_fitted(self, "bundle_")
        return self.bundle_.encode(self._histories_array(X))

    def predict(self, X, future_currents=None) -> np.ndarray:
        """Voltage forecasts (volts) over the horizon.

        With WindowSample input the stored future currents are used;
        otherwise pass ``future_currents`` [batch, n_b] in amperes.
        """
        check_is_fitted(self, "bundle_")
        if future_currents is None:
            if isinstance(X, WindowSample):
                future_currents = X.future_current[None]
            elif isinstance(X, (list, tuple)) and X and isinstance(X[0], WindowSample):
                future_currents = np.stack([w.future_current for w in X])
            else:
                raise ShapeError("predict needs future_currents for array input")
        histories = self._histories_array(X)
        u = np.asarray(future_currents, dtype=np.float64)
        if u.ndim == 1:
            u = u[None]
        if u.shape != (histories.shape[0], self.bundle_.cfg.n_b):
            raise ShapeError(
                f"future currents must be [batch, {self.bundle_.cfg.n_b}], "
                f"got {np.shape(future_currents)}"
            )
        return self.bundle_.predict(histories, u)

    def save(self, path) -> None:
        """Write the fitted model as a checkpoint file."""
        check_is_fitted(self, "bundle_")
        save_checkpoint(self.bundle_, path)

    @classmethod
    def from_bundle(cls, bundle: ModelBundle,
                    history: TrainHistory | None = None) -> "TwoScaleAutoencoder":
        cfg = bundle.cfg
        est = cls(n_a=cfg.n_a, n_b=cfg.n_b, n_xs=cfg.n_xs,
                  corr_weight=cfg.corr_weight, learning_rate=cfg.learning_rate,
                  batch_size=cfg.batch_size,
                  contiguous_run_length=cfg.contiguous_run_length,
                  max_epochs=cfg.max_epochs, patience=cfg.patience,
                  val_fraction=cfg.val_fraction, clip_norm=cfg.clip_norm,
                  encoder_layers=cfg.encoder_layers, seed=cfg.seed)
        est.bundle_ = bundle
        if history is not None:
            est.history_ = history
        return est

    @classmethod
    def load(cls, path) -> "TwoScaleAutoencoder":
        """Rebuild a fitted estimator from a checkpoint file."""
        return cls.from_bundle(load_checkpoint(path))
