"""Shared synthetic-image helpers for the test suite."""

from __future__ import annotations

import numpy as np


def bar_image(
    width: int, size_y: int = 96, size_x: int = 160, contrast: float = 1.0
) -> np.ndarray:
    """Horizontal canvas with one vertical bright bar of exact pixel width.

    The bar is centered on a pixel center for odd widths and on a pixel
    boundary for even widths, so it always covers exactly ``width`` columns.
    """
    img = np.zeros((size_y, size_x), dtype=float)
    center = size_x / 2.0 + (0.5 if width % 2 else 0.0)
    xs = np.arange(size_x) + 0.5
    cols = np.abs(xs - center) < width / 2.0
    assert int(cols.sum()) == width
    img[:, cols] = contrast
    return img


def disk_mask(size, cx: float, cy: float, radius: float) -> np.ndarray:
    """Filled disk; ``size`` is a square side or an (height, width) pair."""
    h, w = (size, size) if isinstance(size, int) else size
    yy, xx = np.mgrid[:h, :w]
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= radius**2


def annulus_mask(
    size: int, cx: float, cy: float, radius: float, half_width: float
) -> np.ndarray:
    """Ring of pixels whose center distance from (cx, cy) is radius +- half_width."""
    yy, xx = np.mgrid[:size, :size]
    dist = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
    return np.abs(dist - radius) <= half_width
