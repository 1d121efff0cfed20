"""Low-level numerical building blocks.

Everything in this package runs on float64 numpy arrays.  This module
holds the pieces the model layers share: activation functions, weight
initialization, a named parameter store with gradient buffers, the Adam
update rule, and a central-difference gradient checker.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ShapeError

#: Variance below this is treated as "constant signal" by callers.
VARIANCE_GUARD = 1e-12


def sigmoid(x):
    """Logistic function, numerically stable for large |x|.

    Accepts scalars or arrays.  Uses the positive/negative branch split so
    neither branch ever exponentiates a large positive number.
    """
    arr = np.asarray(x, dtype=np.float64)
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ex = np.exp(arr[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def tanh_act(x):
    """Hyperbolic tangent activation (thin wrapper, kept for a uniform API)."""
    arr = np.asarray(x, dtype=np.float64)
    out = np.tanh(arr)
    if out.ndim == 0:
        return float(out)
    return out


def as_seed_sequence(seed) -> np.random.SeedSequence:
    """Coerce an int (or int sequence) into a SeedSequence; pass one through."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def glorot_init(rows, cols, seed):
    """Glorot/Xavier uniform sample of shape ``(rows, cols)``.

    Entries are drawn i.i.d. from U(-a, a) with ``a = sqrt(6 / (rows + cols))``.
    The same seed always yields the same matrix.  ``seed`` may be anything
    ``numpy.random.default_rng`` accepts (int or SeedSequence).
    """
    if rows < 1 or cols < 1:
        raise ShapeError(f"glorot_init needs positive dimensions, got ({rows}, {cols})")
    limit = np.sqrt(6.0 / (rows + cols))
    rng = np.random.default_rng(seed)
    return rng.uniform(-limit, limit, size=(rows, cols))


class ParamStore:
    """Ordered collection of named float64 parameter arrays with gradient buffers.

    Iteration order is insertion order everywhere (updates, serialization,
    gradient checks), which is what makes training runs reproducible.
    """

    def __init__(self):
        self._values: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> np.ndarray:
        """Register a new parameter. Names must be unique."""
        if name in self._values:
            raise ValueError(f"duplicate parameter name {name!r}")
        arr = np.array(value, dtype=np.float64, order="C")
        self._values[name] = arr
        self._grads[name] = np.zeros_like(arr)
        return arr

    def names(self) -> tuple[str, ...]:
        return tuple(self._values)

    def value(self, name: str) -> np.ndarray:
        return self._values[name]

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __len__(self) -> int:
        return len(self._values)

    def zero_grads(self) -> None:
        for g in self._grads.values():
            g[...] = 0.0

    def accumulate(self, name: str, delta) -> None:
        """Add ``delta`` into the gradient buffer for ``name``."""
        g = self._grads[name]
        d = np.asarray(delta, dtype=np.float64)
        if d.shape != g.shape:
            raise ShapeError(
                f"gradient for {name!r} has shape {d.shape}, parameter has {g.shape}"
            )
        g += d

    def grad_norm(self) -> float:
        """Global L2 norm over all gradient buffers."""
        total = 0.0
        for g in self._grads.values():
            total += float(np.dot(g.ravel(), g.ravel()))
        return float(np.sqrt(total))

    def scale_grads(self, factor: float) -> None:
        for g in self._grads.values():
            g *= factor

    def n_parameters(self) -> int:
        return sum(v.size for v in self._values.values())

    def copy(self) -> "ParamStore":
        dup = ParamStore()
        for name, v in self._values.items():
            dup._values[name] = v.copy()
            dup._grads[name] = self._grads[name].copy()
        return dup


class AdamState:
    """First/second moment accumulators for :func:`adam_step`.

    Created against a specific :class:`ParamStore`; the moments mirror its
    parameter shapes.
    """

    def __init__(self, params: ParamStore, learning_rate=1e-3, beta1=0.9,
                 beta2=0.999, eps=1e-8):
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = {name: np.zeros_like(params.value(name)) for name in params.names()}
        self.v = {name: np.zeros_like(params.value(name)) for name in params.names()}


def adam_step(params: ParamStore, state: AdamState) -> None:
    """Apply one Adam update in place, consuming the current gradients.

    Bias-corrected form: m_hat = m / (1 - beta1^t), v_hat = v / (1 - beta2^t),
    update = lr * m_hat / (sqrt(v_hat) + eps).  Parameters are visited in
    their fixed registration order.
    """
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name in params.names():
        value = params.value(name)
        g = params.grad(name)
        if g.shape != value.shape:
            raise ShapeError(
                f"gradient for {name!r} has shape {g.shape}, parameter has {value.shape}"
            )
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        value -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass
class FiniteDiffProbe:
    """One probed coordinate of a gradient check."""

    name: str
    flat_index: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class FiniteDiffReport:
    """Outcome of :func:`finite_diff_check`."""

    max_rel_error: float
    tol: float
    passed: bool
    worst: FiniteDiffProbe | None
    probes: list[FiniteDiffProbe] = field(repr=False, default_factory=list)


def finite_diff_check(loss_fn, params: ParamStore, analytic_grads=None,
                      probe_count=None, h=1e-5, tol=1e-4, seed=0) -> FiniteDiffReport:
    """Compare analytic gradients against central differences.

    :param loss_fn: callable taking the ``ParamStore`` and returning a float.
        It must not mutate the parameters.
    :param analytic_grads: mapping name -> gradient array.  ``None`` means
        read the store's own gradient buffers.
    :param probe_count: how many coordinates to probe (random without
        replacement, reproducible via ``seed``); ``None`` probes all of them.
    :param h: central-difference step.
    :param tol: relative-error threshold for ``passed``.

    Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
    Parameters are perturbed in place and restored exactly.
    """
    if analytic_grads is None:
        analytic_grads = {name: params.grad(name) for name in params.names()}

    coords = []
    for name in params.names():
        size = params.value(name).size
        coords.extend((name, i) for i in range(size))
    if probe_count is not None and probe_count < len(coords):
        rng = np.random.default_rng(seed)
        picks = rng.choice(len(coords), size=probe_count, replace=False)
        coords = [coords[i] for i in sorted(picks)]

    base = float(loss_fn(params))
    if not np.isfinite(base):
        raise NumericalError(f"loss is not finite at the evaluation point: {base}")

    probes = []
    worst = None
    max_rel = 0.0
    for name, idx in coords:
        flat = params.value(name).ravel()
        old = flat[idx]
        flat[idx] = old + h
        f_plus = float(loss_fn(params))
        flat[idx] = old - h
        f_minus = float(loss_fn(params))
        flat[idx] = old
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericalError(
                f"loss not finite while probing {name}[{idx}]: {f_plus}, {f_minus}"
            )
        numeric = (f_plus - f_minus) / (2.0 * h)
        analytic = float(np.asarray(analytic_grads[name]).ravel()[idx])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        probe = FiniteDiffProbe(name, idx, analytic, numeric, rel)
        probes.append(probe)
        if rel >= max_rel:
            max_rel = rel
            worst = probe
    return FiniteDiffReport(max_rel_error=max_rel, tol=tol, passed=max_rel < tol,
                            worst=worst, probes=probes)
