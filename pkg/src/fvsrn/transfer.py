"""Piecewise-linear transfer functions mapping density to color and absorption."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TransferFunction:
    """Control points (x, rgb, sigma) with x strictly increasing from 0 to 1.

    sigma is absorption per unit length; rgb components lie in [0,1].
    """

    xs: np.ndarray        # (n,)
    rgbs: np.ndarray      # (n, 3)
    sigmas: np.ndarray    # (n,)

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=np.float32)
        rgbs = np.asarray(self.rgbs, dtype=np.float32)
        sigmas = np.asarray(self.sigmas, dtype=np.float32)
        if xs.ndim != 1 or len(xs) < 2:
            raise ValueError("need at least two control points")
        if rgbs.shape != (len(xs), 3) or sigmas.shape != (len(xs),):
            raise ValueError("control point arrays have inconsistent shapes")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(rgbs)) and np.all(np.isfinite(sigmas))):
            raise ValueError("control points contain non-finite values")
        if np.any(np.diff(xs) <= 0):
            raise ValueError("control point x values must be strictly increasing")
        if xs[0] != 0.0 or xs[-1] != 1.0:
            raise ValueError("control points must start at x=0 and end at x=1")
        if rgbs.min() < 0 or rgbs.max() > 1:
            raise ValueError("rgb components must lie in [0,1]")
        if sigmas.min() < 0:
            raise ValueError("absorption must be non-negative")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "rgbs", rgbs)
        object.__setattr__(self, "sigmas", sigmas)

    @classmethod
    def from_points(cls, points) -> "TransferFunction":
        """Build from a list of (x, (r,g,b), sigma) tuples."""
        xs = [p[0] for p in points]
        rgbs = [p[1] for p in points]
        sigmas = [p[2] for p in points]
        return cls(xs=np.array(xs), rgbs=np.array(rgbs), sigmas=np.array(sigmas))

    @property
    def max_sigma(self) -> float:
        return float(self.sigmas.max())


def tf_eval(tf: TransferFunction, density: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the transfer function at densities (clamped to [0,1]).

    Returns (rgb, sigma) with rgb shaped (..., 3) and sigma shaped like density.
    """
    d = np.clip(np.asarray(density, dtype=np.float32), 0.0, 1.0)
    rgb = np.stack([np.interp(d, tf.xs, tf.rgbs[:, c]) for c in range(3)], axis=-1)
    sigma = np.interp(d, tf.xs, tf.sigmas)
    return rgb.astype(np.float32), sigma.astype(np.float32)


def tf_save(tf: TransferFunction, path) -> None:
    points = [
        {"x": float(x), "rgb": [float(c) for c in rgb], "sigma": float(s)}
        for x, rgb, s in zip(tf.xs, tf.rgbs, tf.sigmas)
    ]
    with open(path, "w") as f:
        json.dump(points, f, indent=2)


def tf_load(path) -> TransferFunction:
    with open(path) as f:
        points = json.load(f)
    return tf_from_json(points)


def tf_from_json(points) -> TransferFunction:
    return TransferFunction.from_points([(p["x"], p["rgb"], p["sigma"]) for p in points])


_BLACK = (0.0, 0.0, 0.0)

TF_PRESETS: dict[str, TransferFunction] = {
    "grayscale": TransferFunction.from_points(
        [(0.0, _BLACK, 0.0), (1.0, (1.0, 1.0, 1.0), 10.0)]
    ),
    "warm": TransferFunction.from_points(
        [
            (0.0, _BLACK, 0.0),
            (0.33, (0.8, 0.1, 0.05), 3.0),
            (0.66, (1.0, 0.8, 0.1), 6.0),
            (1.0, (1.0, 1.0, 1.0), 10.0),
        ]
    ),
    # Two narrow peaks (purple, yellow) separated by fully transparent gaps;
    # the stress case for color-head training.
    "two_peaks": TransferFunction.from_points(
        [
            (0.0, _BLACK, 0.0),
            (0.3, (0.6, 0.1, 0.9), 25.0),
            (0.45, _BLACK, 0.0),
            (0.6, (1.0, 0.9, 0.1), 25.0),
            (0.75, _BLACK, 0.0),
            (1.0, _BLACK, 0.0),
        ]
    ),
}
