"""Composition of encoders, latent grid(s), and the MLP, with heads and I/O.

The assembled network input follows a fixed layout:

    [ p (p+d for directional modes) | sin | cos | time features | latent z ]

Density heads squash the single output through a sigmoid; color heads apply
sigmoid to rgb and softplus to the absorption channel.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .grid import (
    KeyframeGrids,
    LatentGrid,
    grid_dequantize,
    grid_init,
    grid_quantize,
    grid_sample,
    grid_sample_backward,
)
from .nn import (
    FourierEncoder,
    GradientBuffer,
    MlpCache,
    MlpParams,
    fourier_make,
    init_params,
    mlp_backward,
    mlp_eval,
    mlp_forward,
    nerf_rows,
)

_CKPT_MAGIC = b"FVSN"
_CKPT_VERSION = 1

DIRECTION_MODES = ("pos", "dirP", "dirF")
TIME_MODES = ("none", "direct", "fourier", "both")


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    head: str = "density"
    layers: int = 4
    hidden: int = 32
    activation: str = "snake_alt"
    fourier_mode: str = "nerf"
    fourier_m: int | None = None      # None -> (hidden - 4) // 2
    fourier_sigma: float = 1.0
    grid_resolution: int = 32         # 0 disables the latent grid
    grid_channels: int = 16
    direction_mode: str = "pos"
    time_mode: str = "none"
    time_fourier_count: int = 4
    keyframe_times: list[int] | None = None
    time_range: list[float] | None = None   # normalization span; default keyframe span
    seed: int = 0

    def __post_init__(self):
        if self.head not in ("density", "color"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.direction_mode not in DIRECTION_MODES:
            raise ValueError(f"unknown direction mode {self.direction_mode!r}")
        if self.time_mode not in TIME_MODES:
            raise ValueError(f"unknown time mode {self.time_mode!r}")
        if self.direction_mode != "pos" and self.head != "color":
            raise ValueError("directional input encodings require the color head")
        if self.fourier_m is not None and self.fourier_m < 0:
            raise ValueError("fourier_m must be non-negative")
        if self.time_mode != "none" and self.keyframe_times is None:
            raise ValueError("time encodings require keyframe_times")
        if self.keyframe_times is not None and self.grid_resolution == 0:
            raise ValueError("temporal models need a latent grid for their keyframes")
        if self.layers < 1 or self.hidden < 1:
            raise ValueError("layers and hidden must be positive")

    @property
    def effective_m(self) -> int:
        if self.fourier_mode == "off":
            return 0
        return self.fourier_m if self.fourier_m is not None else (self.hidden - 4) // 2

    @property
    def spatial_d_in(self) -> int:
        return 6 if self.direction_mode == "dirF" else 3

    @property
    def raw_width(self) -> int:
        return 6 if self.direction_mode in ("dirP", "dirF") else 3

    @property
    def time_width(self) -> int:
        return {"none": 0, "direct": 1,
                "fourier": 2 * self.time_fourier_count,
                "both": 1 + 2 * self.time_fourier_count}[self.time_mode]

    @property
    def is_temporal(self) -> bool:
        return self.keyframe_times is not None

    @property
    def input_width(self) -> int:
        latent = self.grid_channels if self.grid_resolution > 0 else 0
        return self.raw_width + 2 * self.effective_m + self.time_width + latent

    @property
    def output_width(self) -> int:
        return 1 if self.head == "density" else 4


def _make_spatial_encoder(config: ModelConfig) -> FourierEncoder:
    m, d_in = config.effective_m, config.spatial_d_in
    if m == 0 or config.fourier_mode == "off":
        return fourier_make("off", 0, d_in)
    if config.fourier_mode == "nerf":
        # The stacked-identity construction also covers m not divisible by
        # d_in by truncating the last frequency block.
        return FourierEncoder(mode="nerf", b_matrix=nerf_rows(m, d_in), d_in=d_in)
    return fourier_make("random", m, d_in, sigma=config.fourier_sigma,
                        seed=config.seed + 1000)


@dataclass
class FvsrnModel:
    config: ModelConfig
    params: MlpParams
    spatial_encoder: FourierEncoder
    time_encoder: FourierEncoder | None = None
    grid: LatentGrid | None = None
    keyframes: KeyframeGrids | None = None

    @property
    def grids(self) -> list[LatentGrid]:
        if self.keyframes is not None:
            return self.keyframes.grids
        return [self.grid] if self.grid is not None else []

    @property
    def is_temporal(self) -> bool:
        return self.keyframes is not None

    def trainable_arrays(self) -> list[np.ndarray]:
        return [*self.params.weights, *self.params.biases,
                *(g.values for g in self.grids)]

    def grad_buffer(self) -> GradientBuffer:
        return GradientBuffer.zeros_like_params(
            self.params, grid_shapes=[g.values.shape for g in self.grids]
        )


def model_init(config: ModelConfig) -> FvsrnModel:
    params = init_params(config.layers, config.hidden, config.input_width,
                         config.output_width, seed=config.seed,
                         activation=config.activation)
    spatial = _make_spatial_encoder(config)
    time_enc = None
    if config.time_mode in ("fourier", "both"):
        time_enc = FourierEncoder(mode="nerf",
                                  b_matrix=nerf_rows(config.time_fourier_count, 1),
                                  d_in=1)
    grid = None
    keyframes = None
    if config.grid_resolution > 0:
        if config.keyframe_times is not None:
            grids = [grid_init(config.grid_resolution, config.grid_channels,
                               seed=config.seed + 1 + k)
                     for k in range(len(config.keyframe_times))]
            keyframes = KeyframeGrids(times=list(config.keyframe_times), grids=grids)
        else:
            grid = grid_init(config.grid_resolution, config.grid_channels,
                             seed=config.seed + 1)
    return FvsrnModel(config=config, params=params, spatial_encoder=spatial,
                      time_encoder=time_enc, grid=grid, keyframes=keyframes)


def _normalize_times(model: FvsrnModel, t: np.ndarray) -> np.ndarray:
    if model.config.time_range is not None:
        t0, t1 = model.config.time_range
    else:
        t0, t1 = model.keyframes.span
    if t1 == t0:
        return np.zeros_like(t)
    return (np.clip(t, t0, t1) - t0) / (t1 - t0)


def _keyframe_brackets(model: FvsrnModel, t: np.ndarray):
    """Vectorized bracketing: per-sample (lo, hi, w) over the keyframe list."""
    times = np.asarray(model.keyframes.times, dtype=np.float64)
    tc = np.clip(np.asarray(t, dtype=np.float64), times[0], times[-1])
    hi = np.searchsorted(times, tc, side="left")
    hi = np.clip(hi, 0, len(times) - 1)
    lo = np.where((hi > 0) & (times[hi] != tc), hi - 1, hi)
    denom = np.where(hi > lo, times[hi] - times[lo], 1.0)
    w = np.where(hi > lo, (tc - times[lo]) / denom, 0.0)
    return lo, hi, w


def _bracket_pairs(n_keyframes: int):
    """All (lo, hi) bracket pairs a clamped lookup can produce."""
    pairs = [(k, k) for k in range(n_keyframes)]
    pairs += [(k, k + 1) for k in range(n_keyframes - 1)]
    return pairs


def _latent_batch(model: FvsrnModel, p: np.ndarray, t: np.ndarray | None) -> np.ndarray:
    if model.keyframes is not None:
        lo, hi, w = _keyframe_brackets(model, t)
        out = np.zeros((p.shape[0], model.keyframes.channels), dtype=np.float32)
        for klo, khi in _bracket_pairs(len(model.keyframes.times)):
            mask = (lo == klo) & (hi == khi)
            if not mask.any():
                continue
            z = grid_sample(model.keyframes.grids[klo], p[mask])
            if khi != klo:
                wk = w[mask].astype(np.float32)[:, None]
                z = (1.0 - wk) * z + wk * grid_sample(model.keyframes.grids[khi], p[mask])
            out[mask] = z
        return out
    return grid_sample(model.grid, p)


def _time_features(model: FvsrnModel, t: np.ndarray) -> np.ndarray:
    cfg = model.config
    tn = _normalize_times(model, np.asarray(t, dtype=np.float64))[:, None]
    parts = []
    if cfg.time_mode in ("direct", "both"):
        parts.append(tn)
    if cfg.time_mode in ("fourier", "both"):
        phase = tn @ model.time_encoder.b_matrix.T.astype(np.float64)
        parts.extend([np.sin(phase), np.cos(phase)])
    return np.concatenate(parts, axis=1) if parts else np.zeros((len(tn), 0))


def assemble_input(model: FvsrnModel, p: np.ndarray, d: np.ndarray | None = None,
                   t: np.ndarray | float | None = None) -> np.ndarray:
    """Build the network input batch for positions (and direction/time)."""
    cfg = model.config
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    n = p.shape[0]
    if cfg.direction_mode in ("dirP", "dirF"):
        if d is None:
            raise ValueError(f"direction mode {cfg.direction_mode!r} requires view directions")
        d = np.atleast_2d(np.asarray(d, dtype=np.float64))
        if d.shape != p.shape:
            raise ValueError("directions must match positions in shape")
    if cfg.is_temporal:
        if t is None:
            raise ValueError("temporal model requires timesteps")
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    elif t is not None:
        raise ValueError("timestep supplied to a non-temporal model")

    raw = np.concatenate([p, d], axis=1) if cfg.direction_mode in ("dirP", "dirF") else p
    parts = [raw]
    if model.spatial_encoder.m > 0:
        enc_in = raw if cfg.direction_mode == "dirF" else p
        phase = enc_in @ model.spatial_encoder.b_matrix.T.astype(np.float64)
        parts.extend([np.sin(phase), np.cos(phase)])
    if cfg.time_width > 0:
        parts.append(_time_features(model, t))
    if cfg.grid_resolution > 0:
        parts.append(_latent_batch(model, p, t))
    x = np.concatenate(parts, axis=1)
    dtype = model.params.weights[0].dtype
    return np.ascontiguousarray(x, dtype=dtype)


@dataclass
class ModelForwardContext:
    """Everything the backward pass needs to route adjoints."""

    inputs: np.ndarray
    cache: MlpCache
    positions: np.ndarray
    times: np.ndarray | None


def model_forward(model: FvsrnModel, p: np.ndarray, d: np.ndarray | None = None,
                  t=None) -> tuple[np.ndarray, ModelForwardContext]:
    """Raw (pre-head) outputs plus the context for model_backward."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    x = assemble_input(model, p, d, t)
    raw, cache = mlp_forward(model.params, x)
    times = None
    if model.config.is_temporal:
        times = np.broadcast_to(np.asarray(t, dtype=np.float64), (p.shape[0],))
    return raw, ModelForwardContext(inputs=x, cache=cache, positions=p, times=times)


def model_backward(model: FvsrnModel, ctx: ModelForwardContext,
                   raw_bar: np.ndarray, grads: GradientBuffer | None = None) -> GradientBuffer:
    """Accumulate gradients of sum(raw_bar * raw) into a GradientBuffer."""
    x_bar, mlp_grads = mlp_backward(model.params, ctx.cache, raw_bar)
    if grads is None:
        grads = model.grad_buffer()
    for acc, g in zip(grads.weights, mlp_grads.weights):
        acc += g
    for acc, g in zip(grads.biases, mlp_grads.biases):
        acc += g
    if model.config.grid_resolution > 0:
        f = model.config.grid_channels
        z_bar = x_bar[:, -f:].astype(np.float32)
        if model.keyframes is not None:
            lo, hi, w = _keyframe_brackets(model, ctx.times)
            for klo, khi in _bracket_pairs(len(model.keyframes.times)):
                mask = (lo == klo) & (hi == khi)
                if not mask.any():
                    continue
                pm = ctx.positions[mask]
                zb = z_bar[mask]
                if khi == klo:
                    grid_sample_backward(model.keyframes.grids[klo], pm, zb, grads.grids[klo])
                else:
                    wk = w[mask].astype(np.float32)[:, None]
                    grid_sample_backward(model.keyframes.grids[klo], pm, (1.0 - wk) * zb,
                                         grads.grids[klo])
                    grid_sample_backward(model.keyframes.grids[khi], pm, wk * zb,
                                         grads.grids[khi])
        else:
            grid_sample_backward(model.grid, ctx.positions, z_bar, grads.grids[0])
    return grads


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def apply_density_head(raw: np.ndarray) -> np.ndarray:
    return expit(raw[:, 0])


def density_head_backward(raw: np.ndarray, y_bar: np.ndarray) -> np.ndarray:
    s = expit(raw[:, 0])
    out = np.zeros_like(raw)
    out[:, 0] = y_bar * s * (1.0 - s)
    return out


def apply_color_head(raw: np.ndarray) -> np.ndarray:
    out = np.empty_like(raw)
    out[:, :3] = expit(raw[:, :3])
    out[:, 3] = softplus(raw[:, 3])
    return out


def color_head_backward(raw: np.ndarray, y_bar: np.ndarray) -> np.ndarray:
    out = np.empty_like(raw)
    s = expit(raw[:, :3])
    out[:, :3] = y_bar[:, :3] * s * (1.0 - s)
    out[:, 3] = y_bar[:, 3] * expit(raw[:, 3])
    return out


def eval_density(model: FvsrnModel, p: np.ndarray, t=None) -> np.ndarray:
    """Densities in [0,1] for a batch of positions (density head only)."""
    if model.config.head != "density":
        raise ValueError("eval_density requires a density-head model")
    x = assemble_input(model, p, None, t)
    return apply_density_head(mlp_eval(model.params, x))


def eval_color(model: FvsrnModel, p: np.ndarray, d: np.ndarray | None = None,
               t=None) -> np.ndarray:
    """(rgb, sigma) batch with rgb in [0,1] and sigma >= 0 (color head only)."""
    if model.config.head != "color":
        raise ValueError("eval_color requires a color-head model")
    x = assemble_input(model, p, d, t)
    return apply_color_head(mlp_eval(model.params, x))


def decode_volume(model: FvsrnModel, resolution: int, t: float | None = None,
                  chunk: int = 1 << 16):
    """Densely evaluate a density-head model on a vertex lattice."""
    from .volume import ScalarVolume

    if model.config.head != "density":
        raise ValueError("decode_volume requires a density-head model")
    axis = np.linspace(0.0, 1.0, resolution)
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    pts = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    out = np.empty(len(pts), dtype=np.float32)
    for lo in range(0, len(pts), chunk):
        out[lo : lo + chunk] = eval_density(model, pts[lo : lo + chunk], t)
    return ScalarVolume(values=out.reshape((resolution,) * 3))


_PRECISION_BYTES = {"f16": 2, "f32": 4, "u8": 1}


def memory_footprint(model: FvsrnModel, weight_precision: str = "f16",
                     grid_precision: str = "f32") -> dict[str, int]:
    """Byte breakdown {network, grid, total} at the given storage precisions."""
    if weight_precision not in ("f16", "f32"):
        raise ValueError(f"weight precision must be f16 or f32, got {weight_precision!r}")
    if grid_precision not in ("u8", "f32"):
        raise ValueError(f"grid precision must be u8 or f32, got {grid_precision!r}")
    network = model.params.param_count * _PRECISION_BYTES[weight_precision]
    grid = 0
    for g in model.grids:
        entries = g.resolution**3 * g.channels
        if grid_precision == "u8":
            grid += entries + 8 * g.channels  # codes + per-channel min/max table
        else:
            grid += entries * 4
    return {"network": network, "grid": grid, "total": network + grid}


def _config_to_json(config: ModelConfig) -> dict:
    return dataclasses.asdict(config)


def _config_from_json(data: dict) -> ModelConfig:
    return ModelConfig(**data)


def checkpoint_save(model: FvsrnModel, path, weight_precision: str = "f32",
                    grid_precision: str = "f32") -> None:
    """Serialize config + parameters; see checkpoint_load for the inverse."""
    if weight_precision not in ("f16", "f32"):
        raise ValueError(f"bad weight precision {weight_precision!r}")
    if grid_precision not in ("u8", "f32"):
        raise ValueError(f"bad grid precision {grid_precision!r}")
    wd = "<f2" if weight_precision == "f16" else "<f4"
    sections = []
    blobs = []

    def add(name: str, arr: np.ndarray, dtype: str):
        data = np.ascontiguousarray(arr, dtype=dtype).tobytes()
        sections.append({"name": name, "shape": list(arr.shape), "dtype": dtype,
                         "offset": sum(len(b) for b in blobs), "bytes": len(data)})
        blobs.append(data)

    for i, (w, b) in enumerate(zip(model.params.weights, model.params.biases)):
        add(f"w{i}", w, wd)
        add(f"b{i}", b, wd)
    for gi, g in enumerate(model.grids):
        if grid_precision == "u8":
            q = grid_quantize(g)
            add(f"grid{gi}_codes", q.codes, "u1")
            add(f"grid{gi}_mins", q.mins, "<f4")
            add(f"grid{gi}_maxs", q.maxs, "<f4")
        else:
            add(f"grid{gi}", g.values, "<f4")

    header = {
        "config": _config_to_json(model.config),
        "weight_precision": weight_precision,
        "grid_precision": grid_precision,
        "sections": sections,
        "payload_bytes": sum(len(b) for b in blobs),
    }
    header_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<II", _CKPT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        for b in blobs:
            f.write(b)


def checkpoint_load(path) -> FvsrnModel:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != _CKPT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic in {path}")
    version, header_len = struct.unpack_from("<II", raw, 4)
    if version != _CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if len(raw) < 12 + header_len:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable checkpoint header: {e}") from e
    payload = raw[12 + header_len :]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(
            f"payload length {len(payload)} does not match header "
            f"({header['payload_bytes']})"
        )
    by_name = {}
    for sec in header["sections"]:
        end = sec["offset"] + sec["bytes"]
        if end > len(payload):
            raise CheckpointError(f"section {sec['name']} overruns the payload")
        arr = np.frombuffer(payload[sec["offset"] : end], dtype=sec["dtype"])
        by_name[sec["name"]] = arr.reshape(sec["shape"])

    config = _config_from_json(header["config"])
    model = model_init(config)
    try:
        for i in range(model.params.layer_count):
            model.params.weights[i] = by_name[f"w{i}"].astype(np.float32)
            model.params.biases[i] = by_name[f"b{i}"].astype(np.float32)
        grids = []
        for gi in range(len(model.grids)):
            if header["grid_precision"] == "u8":
                from .grid import QuantizedLatentGrid

                q = QuantizedLatentGrid(
                    codes=by_name[f"grid{gi}_codes"].astype(np.uint8),
                    mins=by_name[f"grid{gi}_mins"].astype(np.float32),
                    maxs=by_name[f"grid{gi}_maxs"].astype(np.float32),
                )
                grids.append(grid_dequantize(q))
            else:
                grids.append(LatentGrid(values=by_name[f"grid{gi}"].astype(np.float32)))
    except KeyError as e:
        raise CheckpointError(f"checkpoint header inconsistent with payload: missing {e}") from e
    if model.keyframes is not None:
        model.keyframes = KeyframeGrids(times=list(config.keyframe_times), grids=grids)
    elif grids:
        model.grid = grids[0]
    return model
