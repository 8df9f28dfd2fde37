"""Flow-to-color rendering with the standard optical-flow color wheel."""

from __future__ import annotations

import numpy as np

__all__ = ["flow_to_color"]


def _make_colorwheel() -> np.ndarray:
    """55-entry RY/YG/GC/CB/BM/MR wheel, RGB rows in [0, 255]."""
    ry, yg, gc, cb, bm, mr = 15, 6, 4, 11, 13, 6
    ncols = ry + yg + gc + cb + bm + mr
    wheel = np.zeros((ncols, 3))
    col = 0
    wheel[col:col + ry, 0] = 255
    wheel[col:col + ry, 1] = np.floor(255 * np.arange(ry) / ry)
    col += ry
    wheel[col:col + yg, 0] = 255 - np.floor(255 * np.arange(yg) / yg)
    wheel[col:col + yg, 1] = 255
    col += yg
    wheel[col:col + gc, 1] = 255
    wheel[col:col + gc, 2] = np.floor(255 * np.arange(gc) / gc)
    col += gc
    wheel[col:col + cb, 1] = 255 - np.floor(255 * np.arange(cb) / cb)
    wheel[col:col + cb, 2] = 255
    col += cb
    wheel[col:col + bm, 2] = 255
    wheel[col:col + bm, 0] = np.floor(255 * np.arange(bm) / bm)
    col += bm
    wheel[col:col + mr, 2] = 255 - np.floor(255 * np.arange(mr) / mr)
    wheel[col:col + mr, 0] = 255
    return wheel


_WHEEL = _make_colorwheel()


def flow_to_color(flow: np.ndarray, max_radius: float | None = None) -> np.ndarray:
    """Render a (H, W, 2) flow as a float [0, 1] RGB image.

    Hue encodes direction, saturation magnitude; magnitudes are normalised
    by `max_radius` (default: the field's own maximum).
    """
    u = flow[..., 0].astype(np.float64)
    v = flow[..., 1].astype(np.float64)
    rad = np.sqrt(u * u + v * v)
    if max_radius is None:
        max_radius = max(float(rad.max()), 1e-6)
    u = u / max_radius
    v = v / max_radius
    rad = np.minimum(rad / max_radius, 1.0)

    ncols = _WHEEL.shape[0]
    angle = np.arctan2(-v, -u) / np.pi  # [-1, 1]
    fk = (angle + 1) / 2 * (ncols - 1)
    k0 = np.floor(fk).astype(int) % ncols
    k1 = (k0 + 1) % ncols
    f = fk - np.floor(fk)

    img = np.zeros(flow.shape[:2] + (3,), dtype=np.float64)
    for c in range(3):
        col0 = _WHEEL[k0, c] / 255.0
        col1 = _WHEEL[k1, c] / 255.0
        col = (1 - f) * col0 + f * col1
        img[..., c] = 1 - rad * (1 - col)
    return img.astype(np.float32)
