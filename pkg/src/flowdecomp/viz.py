"""Display-only renderings: flow color wheel and error-map grayscale."""

from __future__ import annotations

import numpy as np
import torch

from .loss import ErrorMap
from .warp import FlowField


def _make_color_wheel() -> np.ndarray:
    """The standard 55-entry Middlebury flow color wheel."""
    ry, yg, gc, cb, bm, mr = 15, 6, 4, 11, 13, 6
    ncols = ry + yg + gc + cb + bm + mr
    wheel = np.zeros((ncols, 3))
    col = 0
    wheel[0:ry, 0] = 255
    wheel[0:ry, 1] = np.floor(255 * np.arange(ry) / ry)
    col += ry
    wheel[col : col + yg, 0] = 255 - np.floor(255 * np.arange(yg) / yg)
    wheel[col : col + yg, 1] = 255
    col += yg
    wheel[col : col + gc, 1] = 255
    wheel[col : col + gc, 2] = np.floor(255 * np.arange(gc) / gc)
    col += gc
    wheel[col : col + cb, 1] = 255 - np.floor(255 * np.arange(cb) / cb)
    wheel[col : col + cb, 2] = 255
    col += cb
    wheel[col : col + bm, 2] = 255
    wheel[col : col + bm, 0] = np.floor(255 * np.arange(bm) / bm)
    col += bm
    wheel[col : col + mr, 2] = 255 - np.floor(255 * np.arange(mr) / mr)
    wheel[col : col + mr, 0] = 255
    return wheel


_WHEEL = _make_color_wheel()


def flow_to_color(flow: FlowField, max_magnitude: float = None) -> np.ndarray:
    """(H, W, 3) uint8 rendering; invalid pixels are black."""
    u = flow.values[0].detach().numpy()
    v = flow.values[1].detach().numpy()
    valid = flow.valid.numpy()
    mag = np.sqrt(u * u + v * v)
    max_mag = max_magnitude or max(float(mag[valid].max()) if valid.any() else 0.0, 1e-9)
    u = u / max_mag
    v = v / max_mag
    mag = np.minimum(np.sqrt(u * u + v * v), 1.0)
    angle = np.arctan2(-v, -u) / np.pi
    ncols = _WHEEL.shape[0]
    fk = (angle + 1.0) / 2.0 * (ncols - 1)
    k0 = np.floor(fk).astype(int) % ncols
    k1 = (k0 + 1) % ncols
    f = fk - np.floor(fk)
    out = np.zeros(u.shape + (3,), dtype=np.uint8)
    for c in range(3):
        col0 = _WHEEL[k0, c] / 255.0
        col1 = _WHEEL[k1, c] / 255.0
        col = (1 - f) * col0 + f * col1
        col = 1 - mag * (1 - col)
        out[:, :, c] = np.floor(255.0 * col * valid).astype(np.uint8)
    return out


def error_to_gray(err: ErrorMap, scale: float = None) -> np.ndarray:
    """(H, W) uint8 rendering of an error map; invalid pixels are black."""
    vals = err.values.detach().numpy()
    valid = err.valid.numpy()
    top = scale or max(float(vals[valid].max()) if valid.any() else 0.0, 1e-9)
    normed = np.clip(vals / top, 0.0, 1.0)
    return np.floor(255.0 * normed * valid).astype(np.uint8)
