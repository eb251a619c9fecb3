"""Scalar volume data model: .vraw I/O, synthetic fields, trilinear sampling.

Volumes live on the unit cube [0,1]^3 regardless of voxel counts; grid
vertices sit at i/(N-1) along each axis. Values are normalized densities
in [0,1].
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

_VRAW_MAGIC = b"FVSV"
_VRAW_VERSION = 1
_HEADER = struct.Struct("<4sIIIIB3x")  # magic, version, X, Y, Z, dtype, pad


class VolumeFormatError(ValueError):
    """Raised for malformed .vraw files; carries the offending byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


@dataclass(frozen=True)
class ScalarVolume:
    """Dense 3D scalar field, values indexed [x, y, z] and normalized to [0,1].

    ``f32_range`` records the (min, max) affine map applied when a float
    payload was normalized at load time; None for data that was already
    in [0,1].
    """

    values: np.ndarray
    f32_range: tuple[float, float] | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 3 or min(v.shape) < 1:
            raise ValueError(f"volume must be 3D with positive dims, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("volume contains non-finite values")
        if v.min() < -1e-6 or v.max() > 1 + 1e-6:
            raise ValueError("volume values must lie in [0,1]")
        object.__setattr__(self, "values", v)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def resolution(self) -> int:
        return max(self.values.shape)


def volume_read(path) -> ScalarVolume:
    """Read a .vraw file (see module docs for the layout)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise VolumeFormatError("truncated header", len(raw))
    magic, version, x, y, z, dtype_code = _HEADER.unpack_from(raw, 0)
    if magic != _VRAW_MAGIC:
        raise VolumeFormatError(f"bad magic {magic!r}", 0)
    if version != _VRAW_VERSION:
        raise VolumeFormatError(f"unsupported version {version}", 4)
    if x < 1 or y < 1 or z < 1:
        raise VolumeFormatError(f"zero dimension in {(x, y, z)}", 8)
    if dtype_code not in (0, 1):
        raise VolumeFormatError(f"unknown dtype code {dtype_code}", 20)
    count = x * y * z
    itemsize = 1 if dtype_code == 0 else 4
    need = _HEADER.size + count * itemsize
    if len(raw) < need:
        raise VolumeFormatError(
            f"truncated payload: expected {need} bytes, got {len(raw)}", len(raw)
        )
    payload = raw[_HEADER.size : need]
    if dtype_code == 0:
        flat = np.frombuffer(payload, dtype=np.uint8).astype(np.float32) / 255.0
        rng = None
    else:
        flat = np.frombuffer(payload, dtype="<f4").astype(np.float32)
        if not np.all(np.isfinite(flat)):
            raise VolumeFormatError("non-finite float payload", _HEADER.size)
        lo, hi = float(flat.min()), float(flat.max())
        if 0.0 <= lo and hi <= 1.0:
            rng = None  # already normalized; keep the payload bit-exact
        elif hi > lo:
            flat = (flat - lo) / (hi - lo)
            rng = (lo, hi)
        else:
            flat = np.zeros_like(flat)
            rng = (lo, hi)
    values = flat.reshape((x, y, z), order="F")  # x-fastest on disk
    return ScalarVolume(values=values, f32_range=rng)


def volume_write(vol: ScalarVolume, path, dtype: str = "f32") -> None:
    """Write a volume as .vraw; dtype is "u8" or "f32"."""
    if dtype not in ("u8", "f32"):
        raise ValueError(f"dtype must be 'u8' or 'f32', got {dtype!r}")
    x, y, z = vol.dims
    flat = vol.values.ravel(order="F")
    if dtype == "u8":
        payload = np.floor(flat * 255.0 + 0.5).clip(0, 255).astype(np.uint8).tobytes()
        code = 0
    else:
        payload = flat.astype("<f4").tobytes()
        code = 1
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_VRAW_MAGIC, _VRAW_VERSION, x, y, z, code))
        f.write(payload)


def _unit_lattice(res: int) -> np.ndarray:
    """(res,res,res,3) array of vertex positions in [0,1]^3."""
    axis = np.linspace(0.0, 1.0, res, dtype=np.float32)
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    return np.stack([gx, gy, gz], axis=-1)


def _smoothstep(s: np.ndarray) -> np.ndarray:
    return s * s * (3.0 - 2.0 * s)


def _default_blobs(params: dict, rng: np.random.Generator):
    n = int(params.get("n_blobs", 4))
    sigma = float(params.get("sigma", 0.06))
    speed = float(params.get("speed", 0.35))
    pulse = float(params.get("pulse", 0.0))
    centers = params.get("centers")
    velocities = params.get("velocities")
    if centers is None:
        centers = rng.uniform(0.30, 0.50, size=(n, 3))
    centers = np.asarray(centers, dtype=np.float64)
    if velocities is None:
        d = rng.uniform(0.2, 1.0, size=(len(centers), 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        velocities = d * speed
    velocities = np.asarray(velocities, dtype=np.float64)
    # Optional per-blob amplitude modulation: each blob waxes and wanes on
    # its own cycle, so the sequence is more than a rigid translation.
    pulses = None
    if pulse > 0.0:
        freqs = rng.uniform(0.8, 1.6, size=len(centers))
        phases = rng.uniform(0.0, 1.0, size=len(centers))
        pulses = (pulse, freqs, phases)
    return centers, velocities, sigma, pulses


def synth_field(kind: str, resolution: int, params: dict | None = None,
                t: float = 0.0, seed: int = 0) -> ScalarVolume:
    """Generate a deterministic synthetic test volume.

    Kinds: "sphere" (smooth ball indicator), "gaussians" (clipped sum of
    isotropic Gaussians), "marschner_lobb" (classic high-frequency resampling
    test signal), "moving_blobs" (Gaussian blobs translating with time t).
    """
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    params = dict(params or {})
    rng = np.random.default_rng(seed)
    p = _unit_lattice(resolution)

    if kind == "sphere":
        center = np.asarray(params.get("center", (0.5, 0.5, 0.5)), dtype=np.float64)
        radius = float(params.get("radius", 0.25))
        falloff = float(params.get("falloff", 0.05))
        d = np.linalg.norm(p - center, axis=-1)
        v = _smoothstep(np.clip((radius - d) / falloff, 0.0, 1.0))
    elif kind == "gaussians":
        comps = params.get("components")
        if comps is None:
            n = int(params.get("n_components", 6))
            comps = [
                (rng.uniform(0.2, 0.8, size=3), rng.uniform(0.05, 0.15), rng.uniform(0.4, 1.0))
                for _ in range(n)
            ]
        v = np.zeros(p.shape[:3], dtype=np.float64)
        for center, sigma, amp in comps:
            d2 = np.sum((p - np.asarray(center, dtype=np.float64)) ** 2, axis=-1)
            v += float(amp) * np.exp(-d2 / (2.0 * float(sigma) ** 2))
        v = np.clip(v, 0.0, 1.0)
    elif kind == "marschner_lobb":
        f_m = float(params.get("f_m", 6.0))
        alpha = float(params.get("alpha", 0.25))
        q = 2.0 * p - 1.0
        r = np.sqrt(q[..., 0] ** 2 + q[..., 1] ** 2)
        rho = np.cos(2.0 * np.pi * f_m * np.cos(np.pi * r / 2.0))
        v = (1.0 - np.sin(np.pi * q[..., 2] / 2.0) + alpha * (1.0 + rho)) / (2.0 * (1.0 + alpha))
    elif kind == "moving_blobs":
        centers, velocities, sigma, pulses = _default_blobs(params, rng)
        v = np.zeros(p.shape[:3], dtype=np.float64)
        for i, (c, vel) in enumerate(zip(centers, velocities)):
            amp = 1.0
            if pulses is not None:
                depth, freqs, phases = pulses
                wave = 0.5 + 0.5 * np.sin(2.0 * np.pi * (freqs[i] * t + phases[i]))
                amp = 1.0 - depth * wave
            d2 = np.sum((p - (c + vel * t)) ** 2, axis=-1)
            v += amp * np.exp(-d2 / (2.0 * sigma**2))
        v = np.clip(v, 0.0, 1.0)
    else:
        raise ValueError(f"unknown synthetic field kind {kind!r}")
    return ScalarVolume(values=np.clip(v, 0.0, 1.0).astype(np.float32))


def sample_volume(vol: ScalarVolume, p: np.ndarray) -> np.ndarray:
    """Trilinearly interpolate the volume at positions p in [0,1]^3.

    p has shape (3,) or (N,3); out-of-range coordinates clamp to the
    boundary. Exact at grid vertices.
    """
    return _trilinear(vol.values, p)


def _trilinear(values: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Shared trilinear gather over a (X,Y,Z) or (X,Y,Z,C) vertex array."""
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    pts = np.atleast_2d(p)
    if pts.shape[1] != 3:
        raise ValueError(f"positions must have 3 components, got shape {p.shape}")
    dims = np.asarray(values.shape[:3])
    coords = np.clip(pts, 0.0, 1.0) * (dims - 1)
    i0 = np.minimum(coords.astype(np.int64), dims - 2)
    i0 = np.maximum(i0, 0)
    f = (coords - i0).astype(values.dtype)
    x0, y0, z0 = i0[:, 0], i0[:, 1], i0[:, 2]
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    if values.ndim == 4:
        fx, fy, fz = fx[:, None], fy[:, None], fz[:, None]

    c000 = values[x0, y0, z0]
    c100 = values[x0 + 1, y0, z0]
    c010 = values[x0, y0 + 1, z0]
    c110 = values[x0 + 1, y0 + 1, z0]
    c001 = values[x0, y0, z0 + 1]
    c101 = values[x0 + 1, y0, z0 + 1]
    c011 = values[x0, y0 + 1, z0 + 1]
    c111 = values[x0 + 1, y0 + 1, z0 + 1]

    c00 = c000 * (1 - fx) + c100 * fx
    c10 = c010 * (1 - fx) + c110 * fx
    c01 = c001 * (1 - fx) + c101 * fx
    c11 = c011 * (1 - fx) + c111 * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    out = c0 * (1 - fz) + c1 * fz
    return out[0] if single else out


def lowpass_downsample(vol: ScalarVolume, target_res: int) -> ScalarVolume:
    """Gaussian low-pass then resample to a cubic target_res grid.

    The filter width scales with the per-axis subsampling factor, giving the
    classic equal-memory baseline for compressed representations.
    """
    if target_res < 2:
        raise ValueError("target_res must be >= 2")
    if target_res > max(vol.dims):
        raise ValueError(f"target_res {target_res} exceeds volume resolution {max(vol.dims)}")
    factors = np.asarray(vol.dims, dtype=np.float64) / target_res
    sigmas = np.maximum(factors / 2.0, 0.0)
    filtered = gaussian_filter(vol.values.astype(np.float64), sigma=sigmas, mode="nearest")
    pts = _unit_lattice(target_res).reshape(-1, 3)
    out = _trilinear(filtered, pts).reshape((target_res,) * 3)
    return ScalarVolume(values=np.clip(out, 0.0, 1.0).astype(np.float32))


def equivalent_lowpass_res(grid_r: int, grid_f: int) -> int:
    """Cubic resolution of a plain density grid matching a latent grid's memory."""
    return int(round(np.cbrt(float(grid_r) ** 3 * grid_f)))
