"""Image loading, resizing, and pointwise preprocessing.

Images are plain numpy arrays: shape (H, W) for grayscale fields and masks,
(H, W, 3) for color, with samples normalized to float [0, 1] at load time.
Masks are boolean arrays.  All arithmetic is double precision.
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np
from PIL import Image

__all__ = [
    "load_image",
    "load_mask",
    "save_image",
    "save_mask",
    "save_gray16",
    "atomic_write_text",
    "ResizeTransform",
    "resize_preserve_aspect",
    "resize_bilinear",
    "green_channel",
    "invert",
    "clahe",
    "apply_mask",
]


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Load an 8- or 16-bit PNG/TIFF/JPEG, normalized to float [0, 1].

    Grayscale files yield shape (H, W); color files (H, W, 3), alpha
    discarded.  16-bit samples are scaled by 65535, 8-bit by 255.
    """
    try:
        img = Image.open(path)
        img.load()
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ValueError(f"cannot decode image file {path}: {exc}") from exc
    if img.width < 1 or img.height < 1:
        raise ValueError(f"zero-dimension image: {path}")
    mode = img.mode
    if mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(img, dtype=np.float64) / 65535.0
    elif mode == "F":
        arr = np.asarray(img, dtype=np.float64)
    else:
        if mode not in ("L", "RGB"):
            img = img.convert("RGB" if ("A" in mode or mode == "P") else "L")
            if img.mode not in ("L", "RGB"):
                img = img.convert("RGB")
        arr = np.asarray(img, dtype=np.float64) / 255.0
    if arr.ndim == 3 and arr.shape[2] > 3:
        arr = arr[:, :, :3]
    return np.clip(arr, 0.0, 1.0)


def load_mask(path: str | os.PathLike) -> np.ndarray:
    """Load a binary mask: nonzero pixels are foreground."""
    arr = load_image(path)
    if arr.ndim == 3:
        arr = arr.max(axis=2)
    return arr > 0.0


def _atomic_save(path: str | os.PathLike, data: np.ndarray) -> None:
    """Encode to a temp file in the target directory, then rename into place.

    The rename is atomic on POSIX, so concurrent runs writing the same output
    never leave a half-encoded file behind.
    """
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    suffix = os.path.splitext(path)[1] or ".png"
    fmt = Image.registered_extensions().get(suffix.lower(), "PNG")
    fd, tmp = tempfile.mkstemp(suffix=suffix, dir=directory)
    try:
        with os.fdopen(fd, "wb") as handle:
            Image.fromarray(data).save(handle, format=fmt)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def save_image(path: str | os.PathLike, arr: np.ndarray) -> None:
    """Write a [0, 1] field or color image as 8-bit PNG/TIFF."""
    arr = np.clip(np.asarray(arr, dtype=float), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    _atomic_save(path, data)


def save_mask(path: str | os.PathLike, mask: np.ndarray) -> None:
    """Write a boolean mask as 8-bit {0, 255} PNG/TIFF."""
    data = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    _atomic_save(path, data)


def save_gray16(path: str | os.PathLike, field: np.ndarray) -> None:
    """Write a [0, 1] scalar field as 16-bit grayscale PNG/TIFF."""
    field = np.clip(np.asarray(field, dtype=float), 0.0, 1.0)
    data = np.round(field * 65535.0).astype(np.uint16)
    _atomic_save(path, data)


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write a text file via temp-file-plus-rename in the target directory."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(suffix=".txt", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


@dataclass(frozen=True)
class ResizeTransform:
    """Record of an aspect-preserving resize, sufficient to map results back.

    scale is target_long_side / source_long_side; pad_left and pad_top locate
    the resized content inside the square output canvas.
    """

    scale: float
    pad_left: int
    pad_top: int
    content_width: int
    content_height: int
    source_width: int
    source_height: int

    @property
    def identity(self) -> bool:
        return (
            self.scale == 1.0
            and self.pad_left == 0
            and self.pad_top == 0
            and (self.content_width, self.content_height)
            == (self.source_width, self.source_height)
        )

    def invert_mask(self, mask: np.ndarray) -> np.ndarray:
        """Map a mask at output resolution back onto the source grid."""
        mask = np.asarray(mask, dtype=bool)
        content = mask[
            self.pad_top : self.pad_top + self.content_height,
            self.pad_left : self.pad_left + self.content_width,
        ]
        if (self.source_height, self.source_width) == content.shape:
            return content.copy()
        back = resize_bilinear(
            content.astype(float), self.source_height, self.source_width
        )
        return back > 0.5


def resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample to (out_h, out_w), pixel centers aligned."""
    arr = np.asarray(arr, dtype=float)
    in_h, in_w = arr.shape[:2]
    if (in_h, in_w) == (out_h, out_w):
        return arr.copy()
    ys = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    fy = ys - y0
    fx = xs - x0
    y0c = np.clip(y0.astype(int), 0, in_h - 1)
    y1c = np.clip(y0.astype(int) + 1, 0, in_h - 1)
    x0c = np.clip(x0.astype(int), 0, in_w - 1)
    x1c = np.clip(x0.astype(int) + 1, 0, in_w - 1)
    if arr.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    top = (1.0 - fx) * arr[np.ix_(y0c, x0c)] + fx * arr[np.ix_(y0c, x1c)]
    bot = (1.0 - fx) * arr[np.ix_(y1c, x0c)] + fx * arr[np.ix_(y1c, x1c)]
    return (1.0 - fy) * top + fy * bot


def resize_preserve_aspect(
    img: np.ndarray, target: int
) -> tuple[np.ndarray, ResizeTransform]:
    """Scale the longest side to ``target`` and zero-pad to target x target.

    The content is centered on the canvas; the returned transform records
    scale and padding for inverse mapping of output masks.
    """
    if target < 1:
        raise ValueError(f"target must be >= 1, got {target!r}")
    img = np.asarray(img, dtype=float)
    h, w = img.shape[:2]
    scale = target / max(h, w)
    if h >= w:
        content_h = target
        content_w = max(1, round(w * scale))
    else:
        content_w = target
        content_h = max(1, round(h * scale))
    content = resize_bilinear(img, content_h, content_w)
    pad_top = (target - content_h) // 2
    pad_left = (target - content_w) // 2
    shape = (target, target) + img.shape[2:]
    canvas = np.zeros(shape, dtype=float)
    canvas[pad_top : pad_top + content_h, pad_left : pad_left + content_w] = content
    tf = ResizeTransform(
        scale=scale,
        pad_left=pad_left,
        pad_top=pad_top,
        content_width=content_w,
        content_height=content_h,
        source_width=w,
        source_height=h,
    )
    return canvas, tf


def green_channel(img: np.ndarray) -> np.ndarray:
    """Channel index 1 of an RGB image as a scalar field."""
    img = np.asarray(img, dtype=float)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected a 3-channel image, got shape {img.shape}")
    return img[:, :, 1].copy()


def invert(field: np.ndarray) -> np.ndarray:
    """Pointwise 1 - f; turns dark vessels into bright ridges."""
    return 1.0 - np.asarray(field, dtype=float)


def apply_mask(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero all pixels outside the mask, leave the rest untouched."""
    img = np.asarray(img, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if img.shape[:2] != mask.shape:
        raise ValueError(
            f"mask shape {mask.shape} does not match image shape {img.shape[:2]}"
        )
    if img.ndim == 3:
        return np.where(mask[:, :, None], img, 0.0)
    return np.where(mask, img, 0.0)


def clahe(
    field: np.ndarray,
    tiles: int = 8,
    clip: float = 2.0,
    nbins: int = 256,
) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization of a [0, 1] field.

    The field is divided into a tiles x tiles grid.  Each tile's histogram
    (``nbins`` bins) is clipped at ``clip`` times the uniform bin height with
    the excess redistributed uniformly, then turned into an empirical-CDF
    value mapping; per-pixel output bilinearly blends the mappings of the
    four surrounding tiles.  A tile whose histogram is concentrated in a
    single bin maps identically (a constant field passes through unchanged).
    clip = inf gives plain adaptive equalization.
    """
    field = np.asarray(field, dtype=float)
    if field.ndim != 2:
        raise ValueError(f"expected a 2-D scalar field, got shape {field.shape}")
    if tiles < 1:
        raise ValueError(f"tiles must be >= 1, got {tiles!r}")
    if not clip > 0:
        raise ValueError(f"clip must be positive, got {clip!r}")
    h, w = field.shape
    if h < tiles or w < tiles:
        raise ValueError(
            f"field of shape {field.shape} is smaller than a {tiles}x{tiles} tile grid"
        )
    bins = np.minimum((field * nbins).astype(int), nbins - 1)
    np.clip(bins, 0, nbins - 1, out=bins)
    row_edges = np.round(np.linspace(0, h, tiles + 1)).astype(int)
    col_edges = np.round(np.linspace(0, w, tiles + 1)).astype(int)

    luts = np.empty((tiles, tiles, nbins), dtype=float)
    degenerate = np.zeros((tiles, tiles), dtype=bool)
    for i in range(tiles):
        for j in range(tiles):
            tile = bins[row_edges[i] : row_edges[i + 1], col_edges[j] : col_edges[j + 1]]
            hist = np.bincount(tile.ravel(), minlength=nbins).astype(float)
            n = hist.sum()
            if np.count_nonzero(hist) <= 1:
                degenerate[i, j] = True
                luts[i, j] = (np.arange(nbins) + 0.5) / nbins
                continue
            if math.isfinite(clip):
                limit = clip * n / nbins
                # Uniform redistribution of clipped excess; repeat while the
                # refill pushes bins back over the limit.
                for _ in range(32):
                    excess = hist - limit
                    np.clip(excess, 0.0, None, out=excess)
                    total = excess.sum()
                    if total <= n * 1e-12:
                        break
                    np.minimum(hist, limit, out=hist)
                    hist += total / nbins
            luts[i, j] = np.cumsum(hist) / n

    centers_r = (row_edges[:-1] + row_edges[1:] - 1) / 2.0
    centers_c = (col_edges[:-1] + col_edges[1:] - 1) / 2.0

    def _axis_weights(coords: np.ndarray, centers: np.ndarray):
        lo = np.searchsorted(centers, coords, side="right") - 1
        lo = np.clip(lo, 0, len(centers) - 1)
        hi = np.clip(lo + 1, 0, len(centers) - 1)
        span = centers[hi] - centers[lo]
        frac = np.where(span > 0, (coords - centers[lo]) / np.where(span > 0, span, 1.0), 0.0)
        frac = np.clip(frac, 0.0, 1.0)
        return lo, hi, frac

    ri, rj, rf = _axis_weights(np.arange(h, dtype=float), centers_r)
    ci, cj, cf = _axis_weights(np.arange(w, dtype=float), centers_c)

    out = np.zeros((h, w), dtype=float)
    for tile_r, weight_r in ((ri, 1.0 - rf), (rj, rf)):
        for tile_c, weight_c in ((ci, 1.0 - cf), (cj, cf)):
            tr = np.broadcast_to(tile_r[:, None], (h, w))
            tc = np.broadcast_to(tile_c[None, :], (h, w))
            mapped = luts[tr, tc, bins]
            mapped = np.where(degenerate[tr, tc], field, mapped)
            out += weight_r[:, None] * weight_c[None, :] * mapped
    return np.clip(out, 0.0, 1.0)
