"""Recurrent decoder: gated state rollout driven by future current.

The decoder starts from the encoder's latent vector, folds in one future
input sample per step, and emits a voltage prediction after every state
update.  The gating follows the convention used throughout this package:

    z = sigmoid(Wz u + Uz X + bz)           (update gate)
    r = sigmoid(Wr u + Ur X + br)           (reset gate)
    c = tanh(Wc u + Uc (r * X) + bc)        (candidate state)
    X_next = z * c + (1 - z) * X

so the update gate scales the candidate, and zero weights halve the state
each step.  The output head is tanh(Wo X_next + bo), a scalar per step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .numerics import ParamStore, as_seed_sequence, glorot_init, sigmoid

GATES = ("update", "reset", "cand")


@dataclass(frozen=True)
class DecoderConfig:
    """Rollout shape: state width, horizon, input width."""

    n_x: int
    n_b: int
    n_u: int = 1

    def __post_init__(self):
        if self.n_x < 1:
            raise ShapeError(f"state width must be positive, got {self.n_x}")
        if self.n_b < 1:
            raise ShapeError(f"prediction horizon must be positive, got {self.n_b}")
        if self.n_u < 1:
            raise ShapeError(f"input width must be positive, got {self.n_u}")


#: Update-gate bias at init.  A negative value keeps the update gate mostly
#: closed at the start of training, so the seeded state survives the whole
#: rollout horizon and the encoder receives useful gradients from epoch one
#: (the usual forget-gate-bias trick, adapted to this gate convention).
UPDATE_BIAS_INIT = -1.0


def init_decoder_params(cfg: DecoderConfig, store: ParamStore, seed) -> None:
    """Register decoder weights: Glorot matrices, zero/near-closed biases."""
    children = as_seed_sequence(seed).spawn(2 * len(GATES) + 1)
    k = 0
    for gate in GATES:
        store.add(f"decoder.{gate}.w_in", glorot_init(cfg.n_x, cfg.n_u, children[k]))
        store.add(f"decoder.{gate}.w_rec", glorot_init(cfg.n_x, cfg.n_x, children[k + 1]))
        bias = UPDATE_BIAS_INIT if gate == "update" else 0.0
        store.add(f"decoder.{gate}.bias", np.full(cfg.n_x, bias))
        k += 2
    store.add("decoder.out.weight", glorot_init(1, cfg.n_x, children[-1]))
    store.add("decoder.out.bias", np.zeros(1))


def _as_batch(arr, width, what):
    a = np.asarray(arr, dtype=np.float64)
    single = a.ndim == 1
    if single:
        a = a[None]
    if a.ndim != 2 or a.shape[1] != width:
        raise ShapeError(f"{what} must have width {width}, got shape {np.shape(arr)}")
    return a, single


def _gate_pre(name, u, state, params):
    pre = u @ params.value(f"decoder.{name}.w_in").T
    pre += state @ params.value(f"decoder.{name}.w_rec").T
    pre += params.value(f"decoder.{name}.bias")
    return pre


def gru_step(state, inputs, params: ParamStore):
    """Advance the hidden state one step.

    :param state: [n_x] or [batch, n_x].
    :param inputs: [n_u] or [batch, n_u].
    :returns: next state with the same leading shape.
    """
    n_x = params.value("decoder.update.w_rec").shape[0]
    n_u = params.value("decoder.update.w_in").shape[1]
    x, single = _as_batch(state, n_x, "state")
    u, u_single = _as_batch(inputs, n_u, "inputs")
    if single != u_single or x.shape[0] != u.shape[0]:
        raise ShapeError(
            f"state batch {np.shape(state)} does not match inputs {np.shape(inputs)}"
        )
    z = sigmoid(_gate_pre("update", u, x, params))
    r = sigmoid(_gate_pre("reset", u, x, params))
    c = np.tanh(u @ params.value("decoder.cand.w_in").T
                + (r * x) @ params.value("decoder.cand.w_rec").T
                + params.value("decoder.cand.bias"))
    nxt = z * c + (1.0 - z) * x
    return nxt[0] if single else nxt


def output_head(state, params: ParamStore):
    """Map hidden state to the scalar prediction: tanh(Wo X + bo)."""
    n_x = params.value("decoder.out.weight").shape[1]
    x, single = _as_batch(state, n_x, "state")
    y = np.tanh(x @ params.value("decoder.out.weight").T
                + params.value("decoder.out.bias"))[:, 0]
    return float(y[0]) if single else y


def decoder_rollout(x_seed, future_inputs, params: ParamStore,
                    cfg: DecoderConfig, with_cache=False):
    """Roll the decoder forward over the whole horizon.

    Each step advances the state with the next future input, then emits one
    prediction from the new state.

    :param x_seed: initial state, [n_x] or [batch, n_x].
    :param future_inputs: [n_b] or [batch, n_b] (scalar input per step), or
        [..., n_b, n_u] for wider inputs.
    :returns: predictions [n_b] or [batch, n_b]; with ``with_cache=True`` a
        (predictions, cache) pair for :func:`decoder_backward`.
    """
    x0, single = _as_batch(x_seed, cfg.n_x, "seed state")
    u = np.asarray(future_inputs, dtype=np.float64)
    if single and u.ndim in (1, 2) and u.shape[0] == cfg.n_b:
        u = u[None]
    if u.ndim == 2:
        if cfg.n_u != 1:
            raise ShapeError(f"future inputs need a trailing width-{cfg.n_u} axis")
        u = u[:, :, None]
    if u.ndim != 3 or u.shape[1] != cfg.n_b or u.shape[2] != cfg.n_u:
        raise ShapeError(
            f"future inputs must be [batch, {cfg.n_b}, {cfg.n_u}] "
            f"(horizon {cfg.n_b}), got {np.shape(future_inputs)}"
        )
    if u.shape[0] != x0.shape[0]:
        raise ShapeError(
            f"seed batch {x0.shape[0]} does not match inputs batch {u.shape[0]}"
        )

    batch = x0.shape[0]
    states = np.empty((batch, cfg.n_b + 1, cfg.n_x))
    states[:, 0] = x0
    zs = np.empty((batch, cfg.n_b, cfg.n_x))
    rs = np.empty_like(zs)
    cs = np.empty_like(zs)
    ys = np.empty((batch, cfg.n_b))
    w_out = params.value("decoder.out.weight")
    b_out = params.value("decoder.out.bias")
    x = x0
    for t in range(cfg.n_b):
        ut = u[:, t]
        z = sigmoid(_gate_pre("update", ut, x, params))
        r = sigmoid(_gate_pre("reset", ut, x, params))
        c = np.tanh(ut @ params.value("decoder.cand.w_in").T
                    + (r * x) @ params.value("decoder.cand.w_rec").T
                    + params.value("decoder.cand.bias"))
        x = z * c + (1.0 - z) * x
        states[:, t + 1] = x
        zs[:, t] = z
        rs[:, t] = r
        cs[:, t] = c
        ys[:, t] = np.tanh(x @ w_out.T + b_out)[:, 0]
    preds = ys[0] if single else ys
    if not with_cache:
        return preds
    cache = {"u": u, "states": states, "z": zs, "r": rs, "c": cs, "y": ys}
    return preds, cache


def decoder_backward(cache, params: ParamStore, upstream) -> np.ndarray:
    """Backpropagate through the rollout, accumulating parameter gradients.

    :param cache: second return value of ``decoder_rollout(..., with_cache=True)``.
    :param upstream: d(loss)/d(predictions), [batch, n_b].
    :returns: d(loss)/d(seed state), [batch, n_x].
    """
    if cache is None:
        raise ValueError("decoder_backward needs the cache from decoder_rollout")
    u = cache["u"]
    states = cache["states"]
    zs, rs, cs, ys = cache["z"], cache["r"], cache["c"], cache["y"]
    batch, n_b, n_x = zs.shape
    up = np.asarray(upstream, dtype=np.float64)
    if up.ndim == 1:
        up = up[None]
    if up.shape != (batch, n_b):
        raise ShapeError(
            f"upstream gradient must be [batch={batch}, horizon={n_b}], got {up.shape}"
        )

    w_out = params.value("decoder.out.weight")
    u_cand = params.value("decoder.cand.w_rec")
    u_update = params.value("decoder.update.w_rec")
    u_reset = params.value("decoder.reset.w_rec")

    d_w = {gate: np.zeros_like(params.value(f"decoder.{gate}.w_in")) for gate in GATES}
    d_u = {gate: np.zeros_like(params.value(f"decoder.{gate}.w_rec")) for gate in GATES}
    d_b = {gate: np.zeros_like(params.value(f"decoder.{gate}.bias")) for gate in GATES}
    d_w_out = np.zeros_like(w_out)
    d_b_out = np.zeros_like(params.value("decoder.out.bias"))

    d_x = np.zeros((batch, n_x))
    for t in range(n_b - 1, -1, -1):
        x_prev = states[:, t]
        x_new = states[:, t + 1]
        z, r, c, y = zs[:, t], rs[:, t], cs[:, t], ys[:, t]
        ut = u[:, t]

        d_head_pre = up[:, t] * (1.0 - y * y)
        d_w_out += d_head_pre[None, :] @ x_new
        d_b_out += d_head_pre.sum()
        d_xt = d_x + d_head_pre[:, None] * w_out

        d_z = d_xt * (c - x_prev)
        d_c = d_xt * z
        d_prev = d_xt * (1.0 - z)

        d_c_pre = d_c * (1.0 - c * c)
        d_w["cand"] += d_c_pre.T @ ut
        d_u["cand"] += d_c_pre.T @ (r * x_prev)
        d_b["cand"] += d_c_pre.sum(axis=0)
        d_rx = d_c_pre @ u_cand
        d_r = d_rx * x_prev
        d_prev += d_rx * r

        d_z_pre = d_z * z * (1.0 - z)
        d_w["update"] += d_z_pre.T @ ut
        d_u["update"] += d_z_pre.T @ x_prev
        d_b["update"] += d_z_pre.sum(axis=0)
        d_prev += d_z_pre @ u_update

        d_r_pre = d_r * r * (1.0 - r)
        d_w["reset"] += d_r_pre.T @ ut
        d_u["reset"] += d_r_pre.T @ x_prev
        d_b["reset"] += d_r_pre.sum(axis=0)
        d_prev += d_r_pre @ u_reset

        d_x = d_prev

    for gate in GATES:
        params.accumulate(f"decoder.{gate}.w_in", d_w[gate])
        params.accumulate(f"decoder.{gate}.w_rec", d_u[gate])
        params.accumulate(f"decoder.{gate}.bias", d_b[gate])
    params.accumulate("decoder.out.weight", d_w_out)
    params.accumulate("decoder.out.bias", d_b_out)
    return d_x
