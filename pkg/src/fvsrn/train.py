"""World-space, screen-space, and temporal trainers plus the evaluation harness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imaging import Camera, metric_psnr, metric_ssim
from .model import (
    FvsrnModel,
    apply_color_head,
    apply_density_head,
    color_head_backward,
    density_head_backward,
    model_backward,
    model_forward,
)
from .nn import AdamState, adam_step
from .render import ModelSource, RenderSettings, VolumeSource, camera_rays, \
    raymarch_backward, raymarch_forward, render_image
from .transfer import TransferFunction, tf_eval
from .volume import ScalarVolume, sample_volume


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, message: str):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass
class WorldTrainConfig:
    sample_count: int = 64**3
    batch_size: int = 16384
    epochs: int = 200
    lr: float = 0.01
    seed: int = 0
    adaptive: bool = False
    resample_interval: int = 50
    error_grid_resolution: int = 32
    samples_per_voxel: int = 8

    def __post_init__(self):
        if min(self.sample_count, self.batch_size, self.epochs + 1, self.resample_interval) < 1:
            raise ValueError("counts must be positive")
        if self.batch_size > self.sample_count:
            raise ValueError("batch size cannot exceed the sample count")


@dataclass
class ScreenTrainConfig:
    views: int = 96
    resolution: int = 256
    stepsize: float = 0.02
    epochs: int = 100
    lr: float = 0.01
    seed: int = 0
    reference_stepsize_voxels: float = 0.1
    camera_radius: float = 2.2

    def __post_init__(self):
        if self.views < 1 or self.stepsize <= 0:
            raise ValueError("need at least one view and a positive stepsize")


@dataclass
class TemporalTrainConfig:
    keyframe_times: list[int] = field(default_factory=lambda: [1, 11, 21])
    train_times: list[int] = field(default_factory=lambda: [1, 6, 11, 16, 21])
    world: WorldTrainConfig = field(default_factory=WorldTrainConfig)

    def __post_init__(self):
        if not self.train_times:
            raise ValueError("train_times must be non-empty")
        lo, hi = min(self.train_times), max(self.train_times)
        # A single keyframe clamps every lookup to itself, so it trivially
        # covers any span (the Lu-style variant relies on this).
        if len(self.keyframe_times) > 1 and (
            lo < self.keyframe_times[0] or hi > self.keyframe_times[-1]
        ):
            raise ValueError("keyframes must cover the training timestep span")


@dataclass
class ErrorGrid:
    """Coarse per-voxel mean absolute prediction error."""

    values: np.ndarray  # (r, r, r)

    @property
    def resolution(self) -> int:
        return self.values.shape[0]


@dataclass
class WorldTarget:
    """Ground truth for world-space training: densities, or TF-mapped colors."""

    volume: ScalarVolume
    tf: TransferFunction | None = None

    def reference(self, p: np.ndarray) -> np.ndarray:
        dens = sample_volume(self.volume, p)
        if self.tf is None:
            return dens.astype(np.float32)
        rgb, sigma = tf_eval(self.tf, dens)
        return np.concatenate([rgb, sigma[:, None]], axis=1)


def _model_predict(model: FvsrnModel, p: np.ndarray, t=None):
    raw, ctx = model_forward(model, p, None, t)
    if model.config.head == "density":
        return apply_density_head(raw), raw, ctx
    return apply_color_head(raw), raw, ctx


def sample_world_dataset(target: WorldTarget, count: int,
                         sampler: ErrorGrid | str = "uniform",
                         seed: int = 0):
    """Draw (positions, reference values); importance sampling follows an
    ErrorGrid's per-voxel mass, uniform inside each chosen voxel."""
    rng = np.random.default_rng(seed)
    if isinstance(sampler, ErrorGrid) and float(sampler.values.sum()) > 0.0:
        r = sampler.resolution
        mass = sampler.values.reshape(-1).astype(np.float64)
        probs = mass / mass.sum()
        voxels = rng.choice(r**3, size=count, p=probs)
        corner = np.stack(np.unravel_index(voxels, (r, r, r)), axis=1)
        p = (corner + rng.uniform(0.0, 1.0, size=(count, 3))) / r
    else:
        p = rng.uniform(0.0, 1.0, size=(count, 3))
    return p, target.reference(p)


def build_error_grid(model: FvsrnModel, target: WorldTarget, resolution: int,
                     samples_per_voxel: int = 8, seed: int = 0,
                     t: float | None = None) -> ErrorGrid:
    """Mean absolute prediction error per voxel of an r^3 lattice."""
    rng = np.random.default_rng(seed)
    r = resolution
    corners = np.stack(np.meshgrid(*(np.arange(r),) * 3, indexing="ij"), axis=-1)
    corners = corners.reshape(-1, 3)
    err = np.zeros(r**3, dtype=np.float64)
    chunk = max(1, (1 << 18) // samples_per_voxel)
    for lo in range(0, r**3, chunk):
        c = corners[lo : lo + chunk]
        jitter = rng.uniform(0.0, 1.0, size=(len(c), samples_per_voxel, 3))
        p = ((c[:, None, :] + jitter) / r).reshape(-1, 3)
        pred, _, _ = _model_predict(model, p, t)
        ref = target.reference(p)
        diff = np.abs(np.atleast_2d(pred.T).T - np.atleast_2d(ref.T).T)
        per_sample = diff.reshape(len(c), samples_per_voxel, -1).mean(axis=(1, 2))
        err[lo : lo + chunk] = per_sample
    return ErrorGrid(values=err.reshape(r, r, r).astype(np.float32))


def _l1_and_adjoint(pred: np.ndarray, ref: np.ndarray):
    diff = pred - ref
    loss = float(np.mean(np.abs(diff)))
    adj = np.sign(diff) / diff.size
    return loss, adj.astype(np.float32)


def train_world(model: FvsrnModel, target: WorldTarget, cfg: WorldTrainConfig,
                progress=None):
    """L1 world-space training of network and grid jointly with Adam.

    Returns (model, per-epoch loss trace). With cfg.adaptive, the dataset is
    regenerated every resample_interval epochs proportionally to a coarse
    prediction-error grid; the total sample count never changes.
    """
    if (model.config.head == "color") != (target.tf is not None):
        raise ValueError("model head does not match the training target")
    rng = np.random.default_rng(cfg.seed)
    positions, values = sample_world_dataset(target, cfg.sample_count, "uniform", cfg.seed)
    arrays = model.trainable_arrays()
    state = AdamState.for_arrays(arrays)
    trace = []
    for epoch in range(cfg.epochs):
        if (cfg.adaptive and epoch > 0 and epoch % cfg.resample_interval == 0):
            egrid = build_error_grid(model, target, cfg.error_grid_resolution,
                                     cfg.samples_per_voxel, seed=cfg.seed + epoch)
            positions, values = sample_world_dataset(
                target, cfg.sample_count, egrid, seed=cfg.seed + epoch
            )
        perm = rng.permutation(cfg.sample_count)
        total = 0.0
        for lo in range(0, cfg.sample_count, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            p, ref = positions[idx], values[idx]
            pred, raw, ctx = _model_predict(model, p)
            loss, adj = _l1_and_adjoint(pred, ref)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, "non-finite loss")
            if model.config.head == "density":
                raw_bar = density_head_backward(raw, adj)
            else:
                raw_bar = color_head_backward(raw, adj)
            grads = model_backward(model, ctx, raw_bar)
            adam_step(arrays, grads.arrays(), state, cfg.lr)
            total += loss * len(idx)
        trace.append(total / cfg.sample_count)
        if progress is not None:
            progress(epoch, trace[-1])
    return model, trace


def fibonacci_cameras(n: int, width: int, height: int, radius: float = 2.2,
                      fov_y: float = np.pi / 4,
                      center=(0.5, 0.5, 0.5)) -> list[Camera]:
    """Deterministic orbit: n viewpoints on a Fibonacci sphere around center."""
    center = np.asarray(center, dtype=np.float64)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    cams = []
    for i in range(n):
        y = 1.0 - 2.0 * (i + 0.5) / n
        r = np.sqrt(max(0.0, 1.0 - y * y))
        phi = golden * i
        d = np.array([r * np.cos(phi), y, r * np.sin(phi)])
        up = np.array([0.0, 1.0, 0.0]) if abs(d[1]) < 0.95 else np.array([1.0, 0.0, 0.0])
        cams.append(Camera(eye=center + radius * d, target=center, up=up,
                           fov_y=fov_y, width=width, height=height))
    return cams


def train_screen(model: FvsrnModel, volume: ScalarVolume, tf: TransferFunction,
                 cfg: ScreenTrainConfig, progress=None):
    """Image-space training: L1 against pre-rendered reference views."""
    if model.config.head != "color":
        raise ValueError("screen-space training requires a color-head model")
    cams = fibonacci_cameras(cfg.views, cfg.resolution, cfg.resolution,
                             radius=cfg.camera_radius)
    ref_settings = RenderSettings.for_voxels(
        volume.resolution, cfg.reference_stepsize_voxels
    )
    references = []
    for cam in cams:
        o, d = camera_rays(cam)
        pix, _ = raymarch_forward(VolumeSource(volume, tf), o, d, ref_settings)
        references.append((o, d, pix))

    settings = RenderSettings(stepsize=cfg.stepsize)
    arrays = model.trainable_arrays()
    state = AdamState.for_arrays(arrays)
    source = ModelSource(model)
    trace = []
    for epoch in range(cfg.epochs):
        total = 0.0
        for o, d, ref in references:
            pix, states = raymarch_forward(source, o, d, settings, want_states=True)
            loss, adj = _l1_and_adjoint(pix, ref)
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, "non-finite loss")
            grads = raymarch_backward(model, o, d, settings, adj,
                                      terminal_states=states)
            adam_step(arrays, grads.arrays(), state, cfg.lr)
            total += loss
        trace.append(total / len(references))
        if progress is not None:
            progress(epoch, trace[-1])
    return model, trace


def train_temporal(model: FvsrnModel, volume_provider, cfg: TemporalTrainConfig,
                   progress=None):
    """World-space training over (position, timestep) pairs.

    volume_provider maps a timestep index to its ScalarVolume; values are
    cached for the training timesteps. All keyframe grids and the network
    train jointly; latent vectors interpolate linearly between keyframes.
    """
    if not model.is_temporal:
        raise ValueError("train_temporal requires a temporal model")
    if list(model.keyframes.times) != list(cfg.keyframe_times):
        raise ValueError("model keyframes do not match the training config")
    wc = cfg.world
    volumes = {t: volume_provider(t) for t in cfg.train_times}
    rng = np.random.default_rng(wc.seed)
    lo_t, hi_t = model.keyframes.span

    def draw(count, seed):
        r = np.random.default_rng(seed)
        p = r.uniform(0.0, 1.0, size=(count, 3))
        t = r.choice(cfg.train_times, size=count)
        if len(cfg.keyframe_times) > 1:
            assert t.min() >= lo_t and t.max() <= hi_t
        v = np.empty(count, dtype=np.float32)
        for tt in np.unique(t):
            mask = t == tt
            v[mask] = sample_volume(volumes[int(tt)], p[mask])
        return p, t.astype(np.float64), v

    positions, times, values = draw(wc.sample_count, wc.seed)
    arrays = model.trainable_arrays()
    state = AdamState.for_arrays(arrays)
    trace = []
    for epoch in range(wc.epochs):
        perm = rng.permutation(wc.sample_count)
        total = 0.0
        for lo in range(0, wc.sample_count, wc.batch_size):
            idx = perm[lo : lo + wc.batch_size]
            pred, raw, ctx = _model_predict(model, positions[idx], times[idx])
            loss, adj = _l1_and_adjoint(pred, values[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, "non-finite loss")
            raw_bar = density_head_backward(raw, adj)
            grads = model_backward(model, ctx, raw_bar)
            adam_step(arrays, grads.arrays(), state, wc.lr)
            total += loss * len(idx)
        trace.append(total / wc.sample_count)
        if progress is not None:
            progress(epoch, trace[-1])
    return model, trace


def evaluate_views(model: FvsrnModel, volume: ScalarVolume,
                   tf: TransferFunction, n_views: int = 64,
                   resolution: int = 512, stepsize_voxels: float = 1.0,
                   t: float | None = None, use_fused: bool = True) -> list[dict]:
    """Render a deterministic orbit from model and ground truth; PSNR/SSIM.

    Returns one row per view plus a trailing "mean" row.
    """
    cams = fibonacci_cameras(n_views, resolution, resolution)
    settings = RenderSettings.for_voxels(volume.resolution, stepsize_voxels)
    ref_source = VolumeSource(volume, tf)
    model_tf = tf if model.config.head == "density" else None
    model_source = ModelSource(model, tf=model_tf, t=t, use_fused=use_fused)
    rows = []
    for i, cam in enumerate(cams):
        ref = render_image(ref_source, cam, settings)
        img = render_image(model_source, cam, settings)
        rows.append({"view": i, "psnr": metric_psnr(img, ref),
                     "ssim": metric_ssim(img, ref)})
    rows.append({
        "view": "mean",
        "psnr": float(np.mean([r["psnr"] for r in rows])),
        "ssim": float(np.mean([r["ssim"] for r in rows])),
    })
    return rows


def metrics_csv(rows: list[dict]) -> str:
    lines = ["view,psnr,ssim"]
    for r in rows:
        lines.append(f"{r['view']},{r['psnr']:.4f},{r['ssim']:.6f}")
    return "\n".join(lines) + "\n"


def loss_csv(trace: list[float]) -> str:
    lines = ["epoch,loss"]
    for i, v in enumerate(trace):
        lines.append(f"{i},{v:.8f}")
    return "\n".join(lines) + "\n"
