"""Two-timescale sequence autoencoder for battery dynamics.

A 1-D convolutional encoder compresses a window of past current/voltage
samples into a small latent state; a gated recurrent decoder rolls that
state forward under known future current to predict voltage many steps
ahead.  An autocorrelation penalty on the latents steers them toward the
slowly varying physics (state of charge, aging) and away from fast RC
transients.  A built-in equivalent-circuit simulator provides ground truth
to verify the separation.
"""

from .data import (CycleSeries, Dataset, NormStats, SplitResult, WindowSample,
                   compute_norm_stats, load_csv, make_windows, normalize,
                   split_dataset, split_windows, write_csv)
from .decoder import DecoderConfig, decoder_rollout, gru_step, output_head
from .encoder import ConvLayerSpec, EncoderConfig, conv1d_forward, encoder_forward
from .errors import ConfigError, DataError, NumericalError, ShapeError, TsaeError
from .estimator import TwoScaleAutoencoder
from .evaluation import (PredictionReport, export_report, latent_across_soc,
                         latent_alignment, latent_at_fixed_soc,
                         persistence_metrics, rollout_metrics)
from .losses import (LossBreakdown, correlation_loss, lag1_autocorrelation,
                     mse_pred_loss, total_loss)
from .numerics import (AdamState, FiniteDiffReport, ParamStore, adam_step,
                       finite_diff_check, glorot_init, sigmoid, tanh_act)
from .simulate import SimConfig, discharge_capacity, generate_dataset, ocv, simulate_cycle
from .training import (ModelBundle, TrainConfig, TrainHistory, batch_sampler,
                       load_checkpoint, save_checkpoint, train)

__version__ = "0.1.0"

__all__ = [
    "AdamState", "ConfigError", "ConvLayerSpec", "CycleSeries", "Dataset",
    "DecoderConfig", "DataError", "EncoderConfig", "FiniteDiffReport",
    "LossBreakdown", "ModelBundle", "NormStats", "NumericalError",
    "ParamStore", "PredictionReport", "ShapeError", "SimConfig", "SplitResult",
    "TrainConfig", "TrainHistory", "TsaeError", "TwoScaleAutoencoder",
    "WindowSample", "adam_step", "batch_sampler", "compute_norm_stats",
    "conv1d_forward", "correlation_loss", "decoder_rollout", "discharge_capacity",
    "encoder_forward", "export_report", "finite_diff_check", "generate_dataset",
    "glorot_init", "gru_step", "lag1_autocorrelation", "latent_across_soc",
    "latent_alignment", "latent_at_fixed_soc", "load_checkpoint", "load_csv",
    "make_windows", "mse_pred_loss", "normalize", "ocv", "output_head",
    "persistence_metrics", "rollout_metrics", "save_checkpoint", "sigmoid",
    "simulate_cycle", "split_dataset", "split_windows", "tanh_act",
    "total_loss", "train", "write_csv",
]
