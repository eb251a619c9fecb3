"""Cameras, float images, file formats, and image quality metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage
from scipy.ndimage import correlate1d

PSNR_CAP_DB = 99.0


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: eye/target/up in world space, vertical FOV in radians."""

    eye: np.ndarray
    target: np.ndarray
    up: np.ndarray
    fov_y: float
    width: int
    height: int

    def __post_init__(self):
        eye = np.asarray(self.eye, dtype=np.float64)
        target = np.asarray(self.target, dtype=np.float64)
        up = np.asarray(self.up, dtype=np.float64)
        if eye.shape != (3,) or target.shape != (3,) or up.shape != (3,):
            raise ValueError("eye, target, up must be 3-vectors")
        forward = target - eye
        if np.linalg.norm(forward) < 1e-12:
            raise ValueError("eye and target coincide")
        if np.linalg.norm(np.cross(forward, up)) < 1e-12:
            raise ValueError("up is parallel to the view direction")
        if not (0.0 < self.fov_y < np.pi):
            raise ValueError("fov_y must be in (0, pi)")
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        object.__setattr__(self, "eye", eye)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "up", up)


@dataclass(frozen=True)
class Image:
    """Float image, data shaped (height, width, 4): premultiplied rgb + opacity."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float32)
        if d.ndim != 3 or d.shape[2] != 4:
            raise ValueError(f"image data must be (H, W, 4), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("image contains non-finite values")
        object.__setattr__(self, "data", d)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


def write_png(img: Image, path) -> None:
    """Write as 8-bit RGBA PNG."""
    u8 = np.floor(np.clip(img.data, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    PILImage.fromarray(u8, mode="RGBA").save(path, format="PNG")


def png_bytes(img: Image) -> bytes:
    import io

    u8 = np.floor(np.clip(img.data, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(u8, mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()


def read_png(path) -> Image:
    arr = np.asarray(PILImage.open(path).convert("RGBA"), dtype=np.float32) / 255.0
    return Image(data=arr)


def write_pfm(img: Image, path) -> None:
    """Write the rgb channels as a float32 PFM (color 'PF', little-endian)."""
    rgb = img.data[:, :, :3].astype("<f4")
    with open(path, "wb") as f:
        f.write(b"PF\n")
        f.write(f"{img.width} {img.height}\n".encode())
        f.write(b"-1.0\n")  # negative scale marks little-endian
        f.write(rgb[::-1].tobytes())  # PFM rows run bottom-to-top


def read_pfm(path) -> np.ndarray:
    """Read a color PFM; returns (H, W, 3) float32."""
    with open(path, "rb") as f:
        if f.readline().strip() != b"PF":
            raise ValueError("not a color PFM file")
        w, h = map(int, f.readline().split())
        scale = float(f.readline())
        data = np.frombuffer(f.read(w * h * 3 * 4), dtype="<f4" if scale < 0 else ">f4")
    return data.reshape(h, w, 3)[::-1].astype(np.float32)


def _as_array(a) -> np.ndarray:
    if isinstance(a, Image):
        return a.data
    if hasattr(a, "values"):  # ScalarVolume
        return a.values
    return np.asarray(a)


def metric_psnr(a, b) -> float:
    """PSNR in dB with peak 1, capped at 99 dB for identical inputs."""
    x = _as_array(a).astype(np.float64)
    y = _as_array(b).astype(np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse <= 10 ** (-PSNR_CAP_DB / 10.0):
        return PSNR_CAP_DB
    return float(10.0 * np.log10(1.0 / mse))


def _luminance(data: np.ndarray) -> np.ndarray:
    if data.ndim == 3:
        return (
            0.2126 * data[:, :, 0] + 0.7152 * data[:, :, 1] + 0.0722 * data[:, :, 2]
        ).astype(np.float64)
    return data.astype(np.float64)


_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def _gaussian_kernel_1d(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(r**2) / (2.0 * sigma**2))
    return k / k.sum()


def _window_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = correlate1d(img, kernel, axis=0, mode="constant")
    out = correlate1d(out, kernel, axis=1, mode="constant")
    pad = (len(kernel) - 1) // 2
    return out[pad:-pad, pad:-pad]  # keep only fully supported windows


def metric_ssim(a, b) -> float:
    """Mean local SSIM over luminance, 11x11 Gaussian window (sigma 1.5)."""
    x = _as_array(a)
    y = _as_array(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    gx = _luminance(x)
    gy = _luminance(y)
    if min(gx.shape) < _SSIM_WINDOW:
        raise ValueError(f"image smaller than the {_SSIM_WINDOW}x{_SSIM_WINDOW} SSIM window")
    kernel = _gaussian_kernel_1d(_SSIM_WINDOW, _SSIM_SIGMA)
    mu_x = _window_mean(gx, kernel)
    mu_y = _window_mean(gy, kernel)
    xx = _window_mean(gx * gx, kernel) - mu_x**2
    yy = _window_mean(gy * gy, kernel) - mu_y**2
    xy = _window_mean(gx * gy, kernel) - mu_x * mu_y
    c1 = (_SSIM_K1 * 1.0) ** 2
    c2 = (_SSIM_K2 * 1.0) ** 2
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * xy + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
    )
    return float(ssim_map.mean())
