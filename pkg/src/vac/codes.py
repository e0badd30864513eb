"""View and style latent codes and their periodic encoding.

A view code is a pair of rotation angles (azimuth about the vertical axis,
elevation about the horizontal axis), both wrapped into [-pi, pi).  Because
views are periodic every 2*pi, networks never consume raw angles: they get
the smooth 4-vector (cos az, sin az, cos el, sin el) instead, which is
injective on the wrapped domain and trivially periodic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateEncoding, NonFinite

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle in radians into [-pi, pi)."""
    a = float(a)
    if not math.isfinite(a):
        raise NonFinite(f"angle is not finite: {a!r}")
    w = math.remainder(a, TWO_PI)
    if w >= math.pi:  # remainder returns (-pi, pi]; fold the single boundary case
        w -= TWO_PI
    return w


@dataclass(frozen=True)
class ViewCode:
    """Rigid pose of the model: azimuth and elevation in radians, wrapped."""

    azimuth: float
    elevation: float

    def __post_init__(self):
        object.__setattr__(self, "azimuth", wrap_angle(self.azimuth))
        object.__setattr__(self, "elevation", wrap_angle(self.elevation))

    def as_array(self) -> np.ndarray:
        return np.array([self.azimuth, self.elevation], dtype=np.float64)


@dataclass(frozen=True)
class StyleCode:
    """Appearance latent; standard-normal samples of fixed dimension."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise NonFinite("style code contains non-finite values")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class EncodedView:
    """Periodic view encoding (cos az, sin az, cos el, sin el)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if v.shape != (4,):
            raise ValueError(f"encoded view must have 4 entries, got {v.shape}")
        object.__setattr__(self, "values", v)


def encode_view(view: ViewCode) -> EncodedView:
    """Map a view code to its smooth periodic 4-vector encoding."""
    return EncodedView(
        np.array(
            [
                math.cos(view.azimuth),
                math.sin(view.azimuth),
                math.cos(view.elevation),
                math.sin(view.elevation),
            ]
        )
    )


def decode_view(enc: EncodedView) -> ViewCode:
    """Invert :func:`encode_view` via atan2 on each (cos, sin) pair.

    Raises :class:`DegenerateEncoding` when a pair's norm is too small to
    determine an angle.
    """
    v = enc.values
    for i in (0, 2):
        if math.hypot(v[i], v[i + 1]) <= 1e-3:
            raise DegenerateEncoding(f"pair {i // 2} has near-zero norm")
    return ViewCode(math.atan2(v[1], v[0]), math.atan2(v[3], v[2]))


def angular_distance(a: float, b: float) -> float:
    """Shortest distance between two angles on the circle, in [0, pi]."""
    if not (math.isfinite(a) and math.isfinite(b)):
        raise NonFinite("angular_distance requires finite inputs")
    d = abs(math.remainder(a - b, TWO_PI))
    return min(d, TWO_PI - d)


def broadcast_code(code: np.ndarray, height: int, width: int) -> np.ndarray:
    """Tile a k-vector into a (k, height, width) stack of constant planes."""
    c = np.asarray(code, dtype=np.float32).reshape(-1)
    if c.size < 1:
        raise ValueError("code must have at least one entry")
    return np.broadcast_to(c[:, None, None], (c.size, height, width)).copy()
