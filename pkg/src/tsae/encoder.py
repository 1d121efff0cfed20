"""History encoder: stacked 1-D convolutions ending in an affine head.

The encoder maps a window of ``n_a`` (current, voltage) samples to a small
latent vector that is meant to capture the slowly varying state of the
cell.  Convolutions are "valid" (no padding): a layer with kernel length L
and stride s turns a length-a input into floor((a - L) / s) + 1 frames.

All forward/backward functions are batched over windows; a single window
is just a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .numerics import ParamStore, as_seed_sequence, glorot_init

ACTIVATIONS = ("tanh", "identity")


@dataclass(frozen=True)
class ConvLayerSpec:
    """Shape of one convolution layer.

    :param in_channels: input channel count.
    :param out_channels: number of filters.
    :param kernel_length: taps per filter along the time axis.
    :param stride: step between output frames.
    :param activation: "tanh" or "identity".
    """

    in_channels: int
    out_channels: int
    kernel_length: int
    stride: int = 1
    activation: str = "tanh"

    def __post_init__(self):
        for field_name in ("in_channels", "out_channels", "kernel_length", "stride"):
            v = getattr(self, field_name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ShapeError(f"ConvLayerSpec.{field_name} must be a positive int, got {v!r}")
        if self.activation not in ACTIVATIONS:
            raise ShapeError(
                f"unknown activation {self.activation!r}, expected one of {ACTIVATIONS}"
            )


def conv_output_length(length: int, kernel_length: int, stride: int) -> int:
    """Number of output frames of a valid convolution."""
    if kernel_length > length:
        raise ShapeError(
            f"kernel length {kernel_length} exceeds input length {length}"
        )
    return (length - kernel_length) // stride + 1


def default_layers(n_a: int, input_channels: int = 2) -> tuple[ConvLayerSpec, ...]:
    """Built-in layer schedule chosen by history length.

    The tiers keep the flattened feature count modest whether the window is
    a dozen samples or several hundred.  Layer counts per tier: three for
    long windows, two for short ones, one below that.
    """
    c = input_channels
    if n_a >= 256:
        specs = [
            ConvLayerSpec(c, 8, 16, 4),
            ConvLayerSpec(8, 16, 8, 4),
            ConvLayerSpec(16, 16, 4, 2),
        ]
    elif n_a >= 64:
        specs = [
            ConvLayerSpec(c, 8, 8, 2),
            ConvLayerSpec(8, 16, 4, 2),
            ConvLayerSpec(16, 16, 4, 2),
        ]
    elif n_a >= 16:
        specs = [
            ConvLayerSpec(c, 4, 5, 2),
            ConvLayerSpec(4, 8, 3, 1),
        ]
    elif n_a >= 4:
        specs = [ConvLayerSpec(c, 4, 3, 1)]
    else:
        specs = [ConvLayerSpec(c, 4, 1, 1)]
    return tuple(specs)


@dataclass(frozen=True)
class EncoderConfig:
    """Fully determined encoder architecture."""

    n_a: int
    input_channels: int
    layers: tuple[ConvLayerSpec, ...]
    n_xs: int

    def __post_init__(self):
        if self.n_a < 1:
            raise ShapeError(f"history length must be positive, got {self.n_a}")
        if self.n_xs < 1:
            raise ShapeError(f"latent width must be positive, got {self.n_xs}")
        if not self.layers:
            raise ShapeError("encoder needs at least one convolution layer")
        if self.layers[0].in_channels != self.input_channels:
            raise ShapeError(
                f"first layer expects {self.layers[0].in_channels} channels, "
                f"input has {self.input_channels}"
            )
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.in_channels != prev.out_channels:
                raise ShapeError(
                    f"layer channel mismatch: {prev.out_channels} -> {nxt.in_channels}"
                )
        self.output_lengths()  # raises if any layer underflows

    def output_lengths(self) -> list[int]:
        """Frame count after each layer."""
        lengths = []
        length = self.n_a
        for spec in self.layers:
            length = conv_output_length(length, spec.kernel_length, spec.stride)
            lengths.append(length)
        return lengths

    def flat_dim(self) -> int:
        """Width of the flattened feature vector feeding the head."""
        return self.layers[-1].out_channels * self.output_lengths()[-1]

    @classmethod
    def build(cls, n_a, n_xs, input_channels=2, layers=None) -> "EncoderConfig":
        if layers is None:
            layers = default_layers(n_a, input_channels)
        specs = tuple(spec if isinstance(spec, ConvLayerSpec) else ConvLayerSpec(*spec)
                      for spec in layers)
        return cls(n_a=n_a, input_channels=input_channels,
                   layers=specs, n_xs=n_xs)


def init_encoder_params(cfg: EncoderConfig, store: ParamStore, seed) -> None:
    """Register encoder weights: Glorot kernels/head, zero biases."""
    children = as_seed_sequence(seed).spawn(len(cfg.layers) + 1)
    for i, spec in enumerate(cfg.layers):
        fan = glorot_init(spec.out_channels, spec.in_channels * spec.kernel_length,
                          children[i])
        kernel = fan.reshape(spec.out_channels, spec.in_channels, spec.kernel_length)
        store.add(f"encoder.conv{i}.kernel", kernel)
        store.add(f"encoder.conv{i}.bias", np.zeros(spec.out_channels))
    store.add("encoder.head.weight",
              glorot_init(cfg.n_xs, cfg.flat_dim(), children[-1]))
    store.add("encoder.head.bias", np.zeros(cfg.n_xs))


def _strided_columns(inputs: np.ndarray, kernel_length: int, stride: int) -> np.ndarray:
    # inputs [B, n, a] -> [B, n, frames, kernel_length]
    windows = sliding_window_view(inputs, kernel_length, axis=2)
    return windows[:, :, ::stride, :]


def conv1d_forward(inputs, spec: ConvLayerSpec, kernel, bias):
    """One valid 1-D convolution layer.

    :param inputs: [in_channels, length] or [batch, in_channels, length].
    :param kernel: [out_channels, in_channels, kernel_length].
    :param bias: [out_channels].
    :returns: activated output, [out_channels, frames] (or batched).
    """
    arr = np.asarray(inputs, dtype=np.float64)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != spec.in_channels:
        raise ShapeError(
            f"expected input [batch, {spec.in_channels}, length], got {np.shape(inputs)}"
        )
    conv_output_length(arr.shape[2], spec.kernel_length, spec.stride)
    cols = _strided_columns(arr, spec.kernel_length, spec.stride)
    pre = np.einsum("bnpl,mnl->bmp", cols, kernel, optimize=True)
    pre += np.asarray(bias)[None, :, None]
    out = np.tanh(pre) if spec.activation == "tanh" else pre
    return out[0] if single else out


def _conv1d_backward(inputs, spec: ConvLayerSpec, kernel, d_pre):
    """Gradients of a conv layer given d(loss)/d(pre-activation).

    Returns (d_inputs, d_kernel, d_bias); shapes mirror the forward inputs.
    """
    cols = _strided_columns(inputs, spec.kernel_length, spec.stride)
    d_kernel = np.einsum("bmp,bnpl->mnl", d_pre, cols, optimize=True)
    d_bias = d_pre.sum(axis=(0, 2))
    contrib = np.einsum("bmp,mnl->bnpl", d_pre, kernel, optimize=True)
    d_inputs = np.zeros_like(inputs)
    frames = d_pre.shape[2]
    for r in range(spec.kernel_length):
        d_inputs[:, :, r:r + frames * spec.stride:spec.stride] += contrib[:, :, :, r]
    return d_inputs, d_kernel, d_bias


def _check_windows(windows, cfg: EncoderConfig) -> np.ndarray:
    arr = np.asarray(windows, dtype=np.float64)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1:] != (cfg.n_a, cfg.input_channels):
        raise ShapeError(
            f"expected windows of shape [batch, {cfg.n_a}, {cfg.input_channels}] "
            f"(history length {cfg.n_a}), got {np.shape(windows)}"
        )
    return arr


def encoder_forward(window, cfg: EncoderConfig, params: ParamStore) -> np.ndarray:
    """Encode one window [n_a, channels] to a latent vector [n_xs]."""
    latents, _ = encoder_forward_batch(window, cfg, params)
    return latents[0] if np.asarray(window).ndim == 2 else latents


def encoder_forward_batch(windows, cfg: EncoderConfig, params: ParamStore):
    """Encode a batch of windows.

    :param windows: [batch, n_a, channels] (one window may omit the batch axis).
    :returns: (latents [batch, n_xs], cache for :func:`encoder_backward`).
    """
    arr = _check_windows(windows, cfg)
    x = np.ascontiguousarray(arr.transpose(0, 2, 1))
    layer_inputs = []
    layer_outputs = []
    for i, spec in enumerate(cfg.layers):
        layer_inputs.append(x)
        x = conv1d_forward(x, spec, params.value(f"encoder.conv{i}.kernel"),
                           params.value(f"encoder.conv{i}.bias"))
        layer_outputs.append(x)
    flat = x.reshape(x.shape[0], -1)
    latents = flat @ params.value("encoder.head.weight").T
    latents += params.value("encoder.head.bias")
    cache = {"layer_inputs": layer_inputs, "layer_outputs": layer_outputs, "flat": flat}
    return latents, cache


def encoder_backward(cache, cfg: EncoderConfig, params: ParamStore,
                     upstream) -> np.ndarray:
    """Backpropagate through the encoder, accumulating parameter gradients.

    :param cache: second return value of :func:`encoder_forward_batch`.
    :param upstream: d(loss)/d(latents), [batch, n_xs].
    :returns: d(loss)/d(windows), [batch, n_a, channels].
    """
    if cache is None:
        raise ValueError("encoder_backward needs the cache from encoder_forward_batch")
    up = np.asarray(upstream, dtype=np.float64)
    flat = cache["flat"]
    if up.shape != (flat.shape[0], cfg.n_xs):
        raise ShapeError(
            f"upstream gradient must be [batch, {cfg.n_xs}], got {up.shape}"
        )
    head_w = params.value("encoder.head.weight")
    params.accumulate("encoder.head.weight", up.T @ flat)
    params.accumulate("encoder.head.bias", up.sum(axis=0))
    d = (up @ head_w).reshape(cache["layer_outputs"][-1].shape)
    for i in reversed(range(len(cfg.layers))):
        spec = cfg.layers[i]
        out = cache["layer_outputs"][i]
        d_pre = d * (1.0 - out * out) if spec.activation == "tanh" else d
        d, d_kernel, d_bias = _conv1d_backward(
            cache["layer_inputs"][i], spec,
            params.value(f"encoder.conv{i}.kernel"), d_pre)
        params.accumulate(f"encoder.conv{i}.kernel", d_kernel)
        params.accumulate(f"encoder.conv{i}.bias", d_bias)
    return d.transpose(0, 2, 1)
