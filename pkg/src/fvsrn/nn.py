"""Minimal fully-connected network with explicit forward/backward and Adam.

Everything operates on plain numpy arrays in float32 (float64 supported for
gradient checking). The final layer is always linear; output squashing
belongs to the model heads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

ACTIVATION_KINDS = ("relu", "sigmoid", "softplus", "snake", "snake_alt")


def act_eval(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "sigmoid":
        return expit(x)
    if kind == "softplus":
        return np.logaddexp(0.0, x)
    if kind == "snake":
        return x + np.sin(x) ** 2
    if kind == "snake_alt":
        return 0.5 * x + np.sin(x) ** 2
    raise ValueError(f"unknown activation kind {kind!r}")


def act_grad(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return (x > 0).astype(x.dtype)
    if kind == "sigmoid":
        s = expit(x)
        return s * (1.0 - s)
    if kind == "softplus":
        return expit(x)
    if kind == "snake":
        return 1.0 + np.sin(2.0 * x)
    if kind == "snake_alt":
        return 0.5 + np.sin(2.0 * x)
    raise ValueError(f"unknown activation kind {kind!r}")


def nerf_rows(m: int, d_in: int) -> np.ndarray:
    """First m rows of the stacked powers-of-two frequency matrix.

    Block j holds 2*pi*2^j times the d_in x d_in identity; blocks are stacked
    until m rows are emitted, so m need not be a multiple of d_in.
    """
    rows = np.zeros((m, d_in), dtype=np.float32)
    for i in range(m):
        block, axis = divmod(i, d_in)
        rows[i, axis] = 2.0 * np.pi * (2.0**block)
    return rows


@dataclass(frozen=True)
class FourierEncoder:
    """Frozen sinusoidal lifting v -> [v | sin(Bv) | cos(Bv)]."""

    mode: str                     # "nerf" | "random" | "off"
    b_matrix: np.ndarray          # (m, d_in)
    d_in: int
    sigma: float = 1.0
    seed: int = 0

    @property
    def m(self) -> int:
        return self.b_matrix.shape[0]

    @property
    def out_width(self) -> int:
        return self.d_in + 2 * self.m


def fourier_make(mode: str, m: int, d_in: int, sigma: float = 1.0, seed: int = 0) -> FourierEncoder:
    """Build a Fourier encoder; "nerf" requires m to be a multiple of d_in."""
    if m < 0:
        raise ValueError("m must be non-negative")
    if mode == "off" or m == 0:
        return FourierEncoder(mode="off", b_matrix=np.zeros((0, d_in), dtype=np.float32), d_in=d_in)
    if mode == "nerf":
        if m % d_in != 0:
            raise ValueError(f"nerf mode needs m divisible by d_in, got m={m}, d_in={d_in}")
        return FourierEncoder(mode="nerf", b_matrix=nerf_rows(m, d_in), d_in=d_in)
    if mode == "random":
        rng = np.random.default_rng(seed)
        b = rng.normal(0.0, 2.0 * np.pi * sigma, size=(m, d_in)).astype(np.float32)
        return FourierEncoder(mode="random", b_matrix=b, d_in=d_in, sigma=sigma, seed=seed)
    raise ValueError(f"unknown fourier mode {mode!r}")


def fourier_encode(enc: FourierEncoder, v: np.ndarray) -> np.ndarray:
    """Encode a batch (N, d_in) to (N, d_in + 2m); mode "off" passes through."""
    v = np.atleast_2d(np.asarray(v))
    if v.shape[1] != enc.d_in:
        raise ValueError(f"expected {enc.d_in} input components, got {v.shape[1]}")
    if enc.m == 0:
        return v
    phase = v @ enc.b_matrix.T.astype(v.dtype)
    return np.concatenate([v, np.sin(phase), np.cos(phase)], axis=1)


@dataclass
class MlpParams:
    """Weight matrices (out x in) and biases; hidden layers share one activation."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "snake_alt"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must be non-empty and equal length")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i} has inconsistent shapes {w.shape} / {b.shape}")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i} input width does not chain")
        if self.activation not in ACTIVATION_KINDS:
            raise ValueError(f"unknown activation kind {self.activation!r}")

    @property
    def layer_count(self) -> int:
        return len(self.weights)

    @property
    def d_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def d_out(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def hidden_channels(self) -> int:
        return self.weights[0].shape[0]

    @property
    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def astype(self, dtype) -> "MlpParams":
        return MlpParams(
            weights=[w.astype(dtype) for w in self.weights],
            biases=[b.astype(dtype) for b in self.biases],
            activation=self.activation,
        )


def init_params(layer_count: int, hidden: int, d_in: int, d_out: int,
                seed: int = 0, activation: str = "snake_alt",
                dtype=np.float32) -> MlpParams:
    """Xavier-uniform weights, zero biases, seeded."""
    if layer_count < 1:
        raise ValueError("need at least one layer")
    widths = [d_in] + [hidden] * (layer_count - 1) + [d_out]
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for i in range(layer_count):
        fan_in, fan_out = widths[i], widths[i + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return MlpParams(weights=weights, biases=biases, activation=activation)


@dataclass
class MlpCache:
    """Per-layer inputs and pre-activations captured by a forward pass."""

    inputs: list[np.ndarray]     # v_i fed into layer i
    preacts: list[np.ndarray]    # W_i v_i + b_i


def mlp_forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
    """Evaluate the network; the last layer stays linear."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] != params.d_in:
        raise ValueError(f"expected input shape (N, {params.d_in}), got {x.shape}")
    inputs, preacts = [], []
    h = x
    last = params.layer_count - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        s = h @ w.T + b
        preacts.append(s)
        h = act_eval(params.activation, s) if i < last else s
    return h, MlpCache(inputs=inputs, preacts=preacts)


def mlp_eval(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Forward pass without keeping the cache (inference path)."""
    x = np.asarray(x)
    last = params.layer_count - 1
    h = x
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i < last:
            h = act_eval(params.activation, h)
    return h


@dataclass
class GradientBuffer:
    """Gradients shaped like the trainable parameter set (MLP plus grids)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    grids: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def zeros_like_params(cls, params: MlpParams, grid_shapes=()) -> "GradientBuffer":
        return cls(
            weights=[np.zeros_like(w) for w in params.weights],
            biases=[np.zeros_like(b) for b in params.biases],
            grids=[np.zeros(s, dtype=np.float32) for s in grid_shapes],
        )

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases, *self.grids]

    def add_scaled(self, other: "GradientBuffer", scale: float = 1.0) -> None:
        for a, b in zip(self.arrays(), other.arrays()):
            a += scale * b

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def mlp_backward(params: MlpParams, cache: MlpCache,
                 y_bar: np.ndarray) -> tuple[np.ndarray, GradientBuffer]:
    """Reverse pass for the scalar objective sum(y_bar * y).

    Returns input adjoints and a GradientBuffer holding weight/bias gradients
    (grids slot left empty).
    """
    if len(cache.inputs) != params.layer_count:
        raise ValueError("cache does not match the parameter set")
    y_bar = np.asarray(y_bar)
    if y_bar.shape != cache.preacts[-1].shape:
        raise ValueError(f"adjoint shape {y_bar.shape} does not match output {cache.preacts[-1].shape}")
    grads = GradientBuffer.zeros_like_params(params)
    delta = y_bar
    last = params.layer_count - 1
    for i in range(last, -1, -1):
        if i < last:
            delta = delta * act_grad(params.activation, cache.preacts[i])
        grads.weights[i][...] = delta.T @ cache.inputs[i]
        grads.biases[i][...] = delta.sum(axis=0)
        delta = delta @ params.weights[i]
    return delta, grads


@dataclass
class AdamState:
    """First/second moment accumulators, one per parameter array."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_arrays(cls, arrays, beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> "AdamState":
        return cls(
            m=[np.zeros_like(a) for a in arrays],
            v=[np.zeros_like(a) for a in arrays],
            beta1=beta1, beta2=beta2, eps=eps,
        )


def adam_step(arrays: list[np.ndarray], grads: list[np.ndarray],
              state: AdamState, lr: float) -> None:
    """One canonical Adam update, in place, with bias correction."""
    if len(arrays) != len(state.m) or len(grads) != len(arrays):
        raise ValueError("parameter/gradient/state lengths disagree")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient passed to adam_step")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for p, g, m, v in zip(arrays, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
