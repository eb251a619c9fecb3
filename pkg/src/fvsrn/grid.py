"""Trainable volumetric latent feature grids.

A grid stores an F-vector at each of R^3 vertices spanning [0,1]^3
(vertex i at i/(R-1)); lookups interpolate trilinearly in space and,
for keyframe sequences, linearly in time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

GRID_INIT_STD = 0.1


@dataclass
class LatentGrid:
    """values shaped (R, R, R, F), float32, trainable."""

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 4 or v.shape[0] != v.shape[1] or v.shape[1] != v.shape[2]:
            raise ValueError(f"grid values must be (R,R,R,F), got {v.shape}")
        if v.shape[0] < 2 or v.shape[3] < 1:
            raise ValueError("need R >= 2 and F >= 1")

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[3]


def grid_init(resolution: int, channels: int, seed: int = 0) -> LatentGrid:
    """N(0, 0.1^2) initialization, seeded."""
    rng = np.random.default_rng(seed)
    v = rng.normal(0.0, GRID_INIT_STD, size=(resolution,) * 3 + (channels,))
    return LatentGrid(values=v.astype(np.float32))


def _cell_coords(resolution: int, p: np.ndarray):
    pts = np.atleast_2d(np.asarray(p, dtype=np.float64))
    if pts.shape[1] != 3:
        raise ValueError(f"positions must have 3 components, got {np.shape(p)}")
    coords = np.clip(pts, 0.0, 1.0) * (resolution - 1)
    i0 = np.minimum(coords.astype(np.int64), resolution - 2)
    return i0, coords - i0


_CORNER_OFFSETS = [(dx, dy, dz) for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)]


@njit(cache=True, parallel=True, fastmath=True)
def _gather_kernel(values, i0, frac, out):
    n, f = out.shape
    for k in prange(n):
        x0, y0, z0 = i0[k, 0], i0[k, 1], i0[k, 2]
        fx, fy, fz = frac[k, 0], frac[k, 1], frac[k, 2]
        gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
        w000 = gx * gy * gz
        w001 = gx * gy * fz
        w010 = gx * fy * gz
        w011 = gx * fy * fz
        w100 = fx * gy * gz
        w101 = fx * gy * fz
        w110 = fx * fy * gz
        w111 = fx * fy * fz
        for c in range(f):
            out[k, c] = (
                w000 * values[x0, y0, z0, c]
                + w001 * values[x0, y0, z0 + 1, c]
                + w010 * values[x0, y0 + 1, z0, c]
                + w011 * values[x0, y0 + 1, z0 + 1, c]
                + w100 * values[x0 + 1, y0, z0, c]
                + w101 * values[x0 + 1, y0, z0 + 1, c]
                + w110 * values[x0 + 1, y0 + 1, z0, c]
                + w111 * values[x0 + 1, y0 + 1, z0 + 1, c]
            )


@njit(cache=True)
def _scatter_kernel(grad, i0, frac, z_bar):
    # Sequential on purpose: scatter-adds stay deterministic.
    n, f = z_bar.shape
    for k in range(n):
        x0, y0, z0 = i0[k, 0], i0[k, 1], i0[k, 2]
        fx, fy, fz = frac[k, 0], frac[k, 1], frac[k, 2]
        gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
        w000 = gx * gy * gz
        w001 = gx * gy * fz
        w010 = gx * fy * gz
        w011 = gx * fy * fz
        w100 = fx * gy * gz
        w101 = fx * gy * fz
        w110 = fx * fy * gz
        w111 = fx * fy * fz
        for c in range(f):
            zb = z_bar[k, c]
            grad[x0, y0, z0, c] += w000 * zb
            grad[x0, y0, z0 + 1, c] += w001 * zb
            grad[x0, y0 + 1, z0, c] += w010 * zb
            grad[x0, y0 + 1, z0 + 1, c] += w011 * zb
            grad[x0 + 1, y0, z0, c] += w100 * zb
            grad[x0 + 1, y0, z0 + 1, c] += w101 * zb
            grad[x0 + 1, y0 + 1, z0, c] += w110 * zb
            grad[x0 + 1, y0 + 1, z0 + 1, c] += w111 * zb


def grid_sample(grid: LatentGrid, p: np.ndarray) -> np.ndarray:
    """Trilinear lookup at positions (N,3) or (3,); returns (N,F) or (F,)."""
    single = np.asarray(p).ndim == 1
    i0, frac = _cell_coords(grid.resolution, p)
    out = np.empty((i0.shape[0], grid.channels), dtype=grid.values.dtype)
    _gather_kernel(grid.values, i0, frac.astype(grid.values.dtype), out)
    return out[0] if single else out


def grid_sample_backward(grid: LatentGrid, p: np.ndarray, z_bar: np.ndarray,
                         grad: np.ndarray) -> None:
    """Scatter-add trilinear-weighted adjoints into a gradient array.

    grad must be shaped like grid.values. Positions receive no gradient.
    Accumulation is sequential, so results are deterministic.
    """
    if grad.shape != grid.values.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match grid {grid.values.shape}")
    z_bar = np.atleast_2d(np.asarray(z_bar, dtype=grad.dtype))
    i0, frac = _cell_coords(grid.resolution, p)
    if z_bar.shape != (i0.shape[0], grid.channels):
        raise ValueError(f"adjoint shape {z_bar.shape} does not match (N,{grid.channels})")
    _scatter_kernel(grad, i0, frac.astype(grad.dtype), z_bar)


@dataclass(frozen=True)
class QuantizedLatentGrid:
    """8-bit codes plus per-channel (min, max) dequantization range."""

    codes: np.ndarray      # (R, R, R, F) uint8
    mins: np.ndarray       # (F,) float32
    maxs: np.ndarray       # (F,) float32

    @property
    def resolution(self) -> int:
        return self.codes.shape[0]

    @property
    def channels(self) -> int:
        return self.codes.shape[3]


def grid_quantize(grid: LatentGrid) -> QuantizedLatentGrid:
    """Per-channel min/max mapping to [0,255], round half away from zero."""
    v = grid.values
    mins = v.min(axis=(0, 1, 2))
    maxs = v.max(axis=(0, 1, 2))
    span = maxs - mins
    safe = np.where(span > 0, span, 1.0)
    normalized = (v - mins) / safe
    codes = np.floor(normalized * 255.0 + 0.5).clip(0, 255).astype(np.uint8)
    codes = np.where(span > 0, codes, 0).astype(np.uint8)
    return QuantizedLatentGrid(codes=codes, mins=mins.astype(np.float32), maxs=maxs.astype(np.float32))


def grid_dequantize(q: QuantizedLatentGrid) -> LatentGrid:
    v = q.mins + q.codes.astype(np.float32) / 255.0 * (q.maxs - q.mins)
    return LatentGrid(values=v.astype(np.float32))


@dataclass
class KeyframeGrids:
    """Latent grids stored at selected timestep indices, shared (R, F)."""

    times: list[int]
    grids: list[LatentGrid]

    def __post_init__(self):
        if not self.grids:
            raise ValueError("need at least one keyframe")
        if len(self.times) != len(self.grids):
            raise ValueError("times and grids must pair up")
        if any(t1 <= t0 for t0, t1 in zip(self.times, self.times[1:])):
            raise ValueError("keyframe times must be strictly increasing")
        r, f = self.grids[0].resolution, self.grids[0].channels
        if any(g.resolution != r or g.channels != f for g in self.grids):
            raise ValueError("all keyframe grids must share (R, F)")

    @property
    def resolution(self) -> int:
        return self.grids[0].resolution

    @property
    def channels(self) -> int:
        return self.grids[0].channels

    @property
    def span(self) -> tuple[int, int]:
        return self.times[0], self.times[-1]


def keyframe_bracket(kfg: KeyframeGrids, t: float) -> tuple[int, int, float]:
    """Indices of the bracketing keyframes and the blend weight for the upper one."""
    times = kfg.times
    tc = min(max(float(t), times[0]), times[-1])
    hi = int(np.searchsorted(times, tc, side="left"))
    if hi == 0:
        return 0, 0, 0.0
    lo = hi - 1
    if hi >= len(times):
        return len(times) - 1, len(times) - 1, 0.0
    if times[hi] == tc:
        return hi, hi, 0.0
    w = (tc - times[lo]) / (times[hi] - times[lo])
    return lo, hi, float(w)


def keyframe_sample(kfg: KeyframeGrids, p: np.ndarray, t: float) -> np.ndarray:
    """Sample at position p and continuous timestep t (clamped to the span)."""
    if not np.isfinite(t):
        raise ValueError("timestep must be finite")
    lo, hi, w = keyframe_bracket(kfg, t)
    z = grid_sample(kfg.grids[lo], p)
    if hi != lo and w > 0.0:
        z = (1.0 - w) * z + w * grid_sample(kfg.grids[hi], p)
    return z
