"""Emission-absorption raycasting over the unit cube, forward and backward.

The forward pass composites front to back with opacity
alpha = 1 - exp(-sigma * ds) (clamped below 1 so the blend stays invertible).
The backward pass walks rays in reverse, recovering each pre-step state by
analytic inversion of the blend, so its memory use is independent of the
step count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .imaging import Camera, Image
from .model import (
    FvsrnModel,
    apply_color_head,
    color_head_backward,
    eval_color,
    eval_density,
    model_backward,
    model_forward,
)
from .nn import GradientBuffer
from .transfer import TransferFunction, tf_eval
from .volume import ScalarVolume, sample_volume

EPS_BLEND = 1e-5


@dataclass
class RayState:
    """Per-ray front-to-back accumulator: premultiplied rgb and opacity.

    Opacity stays strictly below 1 (the forward clamp), which keeps every
    blend step invertible.
    """

    color: np.ndarray    # (N, 3)
    alpha: np.ndarray    # (N,)

    def copy(self) -> "RayState":
        return RayState(color=self.color.copy(), alpha=self.alpha.copy())


@dataclass(frozen=True)
class RenderSettings:
    stepsize: float = 1.0 / 64.0          # world units inside the unit cube
    max_steps: int = 4096
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    early_term_alpha: float = 0.999
    eps_blend: float = EPS_BLEND
    use_fused: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.stepsize <= 0:
            raise ValueError("stepsize must be positive")
        if not (0.0 <= self.early_term_alpha <= 1.0):
            raise ValueError("early termination threshold must lie in [0,1]")

    @classmethod
    def for_voxels(cls, volume_resolution: int, stepsize_voxels: float = 1.0,
                   **kwargs) -> "RenderSettings":
        """Stepsize given in voxels of a volume with the given resolution."""
        return cls(stepsize=stepsize_voxels / volume_resolution, **kwargs)


def camera_rays(camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel rays (origins, unit directions), row-major from the top-left.

    Pixel centers; the center pixel of an odd-resolution image looks exactly
    along normalize(target - eye).
    """
    forward = camera.target - camera.eye
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, camera.up)
    right = right / np.linalg.norm(right)
    up = np.cross(right, forward)

    h, w = camera.height, camera.width
    half_h = np.tan(camera.fov_y / 2.0)
    half_w = half_h * w / h
    xs = ((np.arange(w) + 0.5) / w * 2.0 - 1.0) * half_w
    ys = (1.0 - (np.arange(h) + 0.5) / h * 2.0) * half_h
    gx, gy = np.meshgrid(xs, ys)
    dirs = forward[None, None] + gx[..., None] * right[None, None] + gy[..., None] * up[None, None]
    dirs = dirs.reshape(-1, 3)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(camera.eye, dirs.shape).copy()
    return origins, dirs


def ray_box_intersect(origins: np.ndarray, dirs: np.ndarray):
    """Entry/exit distances of rays against the unit cube (slab method)."""
    d = np.where(np.abs(dirs) < 1e-12, 1e-12, dirs)
    t_lo = (0.0 - origins) / d
    t_hi = (1.0 - origins) / d
    tmin = np.minimum(t_lo, t_hi).max(axis=1)
    tmax = np.maximum(t_lo, t_hi).min(axis=1)
    tmin = np.maximum(tmin, 0.0)
    valid = tmax > tmin
    return tmin, tmax, valid


def composite_step(c_acc: np.ndarray, a_acc: np.ndarray, rgb: np.ndarray,
                   sigma: np.ndarray, ds, eps_blend: float = EPS_BLEND):
    """One front-to-back blend step; returns (c', a')."""
    alpha = np.minimum(1.0 - eps_blend, -np.expm1(-sigma * ds))
    alpha = np.maximum(alpha, 0.0)
    trans = (1.0 - a_acc) * alpha
    c_new = c_acc + trans[..., None] * rgb
    a_new = a_acc + trans
    return c_new, a_new


def composite_invert(c_acc: np.ndarray, a_acc: np.ndarray, rgb: np.ndarray,
                     sigma: np.ndarray, ds, eps_blend: float = EPS_BLEND):
    """Recover the pre-step state; exact inverse of composite_step."""
    alpha = np.minimum(1.0 - eps_blend, -np.expm1(-sigma * ds))
    alpha = np.maximum(alpha, 0.0)
    if np.any(alpha >= 1.0 - eps_blend / 2 + eps_blend):
        raise FloatingPointError("blend inversion unstable: alpha too close to 1")
    a_prev = (a_acc - alpha) / (1.0 - alpha)
    c_prev = c_acc - ((1.0 - a_prev) * alpha)[..., None] * rgb
    return c_prev, a_prev


class VolumeSource:
    """Ground-truth sampling: trilinear density through a transfer function."""

    def __init__(self, volume: ScalarVolume, tf: TransferFunction):
        self.volume = volume
        self.tf = tf

    def sample(self, p: np.ndarray, d: np.ndarray):
        dens = sample_volume(self.volume, p)
        return tf_eval(self.tf, dens)


class ModelSource:
    """Sampling from a compressed model, optionally through the fused path."""

    def __init__(self, model: FvsrnModel, tf: TransferFunction | None = None,
                 t: float | None = None, use_fused: bool = False):
        if model.config.head == "density" and tf is None:
            raise ValueError("density-head models need a transfer function to render")
        if model.config.head == "color" and tf is not None:
            raise ValueError("color-head models do not take a transfer function")
        if t is not None and not model.is_temporal:
            raise ValueError("timestep supplied to a non-temporal model")
        if t is None and model.is_temporal:
            raise ValueError("temporal model requires a timestep to render")
        self.model = model
        self.tf = tf
        self.t = t
        self.use_fused = use_fused
        self._plan = None
        if use_fused:
            from .fused import plan_for_model, warmup

            self._plan = plan_for_model(model)
            warmup(self._plan, model)

    def _raw_eval(self, p: np.ndarray, d: np.ndarray):
        model = self.model
        needs_dir = model.config.direction_mode in ("dirP", "dirF")
        dd = d if needs_dir else None
        if self.use_fused:
            from .fused import fused_eval
            from .model import assemble_input

            x = assemble_input(model, p, dd, self.t)
            return fused_eval(self._plan, model, x)
        if model.config.head == "density":
            return eval_density(model, p, self.t)
        return eval_color(model, p, dd, self.t)

    def sample(self, p: np.ndarray, d: np.ndarray):
        out = self._raw_eval(p, d)
        if self.model.config.head == "density":
            return tf_eval(self.tf, out)
        return out[:, :3], out[:, 3]


def _march_geometry(origins, dirs, settings: RenderSettings):
    """Per-ray step count and uniform step length covering [entry, exit]."""
    tmin, tmax, valid = ray_box_intersect(origins, dirs)
    length = np.where(valid, tmax - tmin, 0.0)
    n_steps = np.zeros(len(origins), dtype=np.int64)
    n_steps[valid] = np.minimum(
        np.ceil(length[valid] / settings.stepsize).astype(np.int64),
        settings.max_steps,
    )
    n_steps[valid] = np.maximum(n_steps[valid], 1)
    ds = np.where(n_steps > 0, length / np.maximum(n_steps, 1), 0.0)
    return tmin, ds, n_steps


def raymarch_forward(source, origins: np.ndarray, dirs: np.ndarray,
                     settings: RenderSettings, want_states: bool = False):
    """March rays through the unit cube and composite over the background.

    Returns (pixels (N,4), states) where pixels hold premultiplied rgb plus
    accumulated opacity; states is the terminal (C, A) pair when requested
    (early termination is disabled in that case so backward can retrace).
    """
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    n = len(origins)
    tmin, ds, n_steps = _march_geometry(origins, dirs, settings)
    c_acc = np.zeros((n, 3), dtype=np.float64)
    a_acc = np.zeros(n, dtype=np.float64)
    terminated = np.zeros(n, dtype=bool)
    max_n = int(n_steps.max()) if n else 0
    for k in range(max_n):
        active = (k < n_steps) & ~terminated
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        t_k = tmin[idx] + (k + 0.5) * ds[idx]
        p = origins[idx] + t_k[:, None] * dirs[idx]
        rgb, sigma = source.sample(p, dirs[idx])
        c_acc[idx], a_acc[idx] = composite_step(
            c_acc[idx], a_acc[idx], rgb.astype(np.float64),
            sigma.astype(np.float64), ds[idx], settings.eps_blend,
        )
        if not want_states:
            terminated[idx] |= a_acc[idx] > settings.early_term_alpha
    bg = np.asarray(settings.background, dtype=np.float64)
    pixels = np.empty((n, 4), dtype=np.float32)
    pixels[:, :3] = c_acc + (1.0 - a_acc)[:, None] * bg
    pixels[:, 3] = a_acc
    states = RayState(color=c_acc, alpha=a_acc) if want_states else None
    return pixels, states


def raymarch_backward(model: FvsrnModel, origins: np.ndarray, dirs: np.ndarray,
                      settings: RenderSettings, image_adjoint: np.ndarray,
                      terminal_states=None, t: float | None = None,
                      grads: GradientBuffer | None = None) -> GradientBuffer:
    """Adjoint of raymarch_forward for a color-head model source.

    Walks each ray in reverse step order, re-evaluating the model and
    inverting the blend to recover intermediate states, so the per-ray
    memory footprint does not depend on the number of steps.
    """
    if model.config.head != "color":
        raise ValueError("raymarch_backward trains color-head models only")
    image_adjoint = np.asarray(image_adjoint, dtype=np.float64)
    if not np.all(np.isfinite(image_adjoint)):
        raise ValueError("non-finite image adjoint")
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    if terminal_states is None:
        _, terminal_states = raymarch_forward(
            ModelSource(model, t=t), origins, dirs, settings, want_states=True
        )
    c_acc = terminal_states.color.astype(np.float64).copy()
    a_acc = terminal_states.alpha.astype(np.float64).copy()
    tmin, ds, n_steps = _march_geometry(origins, dirs, settings)

    bg = np.asarray(settings.background, dtype=np.float64)
    c_bar = image_adjoint[:, :3].copy()
    a_bar = image_adjoint[:, 3] - image_adjoint[:, :3] @ bg

    if grads is None:
        grads = model.grad_buffer()
    needs_dir = model.config.direction_mode in ("dirP", "dirF")
    max_n = int(n_steps.max()) if len(origins) else 0
    for k in range(max_n - 1, -1, -1):
        idx = np.nonzero(k < n_steps)[0]
        if len(idx) == 0:
            continue
        t_k = tmin[idx] + (k + 0.5) * ds[idx]
        p = origins[idx] + t_k[:, None] * dirs[idx]
        d_in = dirs[idx] if needs_dir else None
        raw, ctx = model_forward(model, p, d_in, t)
        out = apply_color_head(raw)
        rgb = out[:, :3].astype(np.float64)
        sigma = out[:, 3].astype(np.float64)
        dsk = ds[idx]

        alpha_raw = -np.expm1(-sigma * dsk)
        clamped = alpha_raw > 1.0 - settings.eps_blend
        alpha = np.where(clamped, 1.0 - settings.eps_blend, np.maximum(alpha_raw, 0.0))

        a_prev = (a_acc[idx] - alpha) / (1.0 - alpha)
        c_prev = c_acc[idx] - ((1.0 - a_prev) * alpha)[:, None] * rgb

        one_m_aprev = 1.0 - a_prev
        alpha_bar = a_bar[idx] * one_m_aprev + np.sum(c_bar[idx] * rgb, axis=1) * one_m_aprev
        rgb_bar = c_bar[idx] * (alpha * one_m_aprev)[:, None]
        sigma_bar = np.where(clamped, 0.0, alpha_bar * dsk * np.exp(-sigma * dsk))

        head_bar = np.concatenate([rgb_bar, sigma_bar[:, None]], axis=1)
        raw_bar = color_head_backward(raw, head_bar.astype(raw.dtype))
        model_backward(model, ctx, raw_bar, grads)

        a_bar[idx] = a_bar[idx] * (1.0 - alpha) - np.sum(c_bar[idx] * rgb, axis=1) * alpha
        c_acc[idx] = c_prev
        a_acc[idx] = a_prev
    return grads


def render_rays(source, origins, dirs, settings: RenderSettings) -> np.ndarray:
    pixels, _ = raymarch_forward(source, origins, dirs, settings)
    return pixels


def render_image(source, camera: Camera, settings: RenderSettings | None = None) -> Image:
    """Render a full frame; row blocks may run on a thread pool, assembled
    deterministically by index."""
    settings = settings or RenderSettings()
    origins, dirs = camera_rays(camera)
    n = len(origins)
    if settings.threads <= 1 or n < 4096:
        pixels = render_rays(source, origins, dirs, settings)
    else:
        chunks = np.array_split(np.arange(n), settings.threads * 4)
        pixels = np.empty((n, 4), dtype=np.float32)
        with ThreadPoolExecutor(max_workers=settings.threads) as pool:
            futures = [
                (c, pool.submit(render_rays, source, origins[c], dirs[c], settings))
                for c in chunks if len(c)
            ]
            for c, fut in futures:
                pixels[c] = fut.result()
    return Image(data=pixels.reshape(camera.height, camera.width, 4))
