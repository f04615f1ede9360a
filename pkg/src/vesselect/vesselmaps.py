"""Per-width vessel maps and their fusion.

Two single-scale enhancement maps are built from each emphasized field and a
target thickness w: the redness map from the inverted CLAHE green channel and
the structural map from an external vessel-probability field.  Both evaluate
the vesselness response at sigma = C(alpha) * w and apply a gamma correction;
the combined map multiplies them under a third gamma, and maps from several
widths fuse by pointwise maximum.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .frangi import FrangiParams, frangi_response
from .scalespace import width_to_scale

__all__ = [
    "GammaParams",
    "gamma_correct",
    "redness_map",
    "structural_map",
    "combined_map",
    "fuse_over_widths",
    "width_map",
    "build_fused_map",
]

MAP_MODES = ("combined", "redness", "structural")


@dataclass(frozen=True)
class GammaParams:
    """Gamma exponents of the redness, structural, and combined corrections."""

    gamma_r: float = 0.7
    gamma_s: float = 0.1
    gamma_c: float = 0.9

    def __post_init__(self) -> None:
        for name in ("gamma_r", "gamma_s", "gamma_c"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)!r}")


def gamma_correct(field: np.ndarray, gamma: float) -> np.ndarray:
    """Pointwise x**gamma on [0, 1] with the 0**0 = 0 convention.

    Defining 0**0 as 0 keeps zero-response background at zero even for
    gamma = 0, where the correction degenerates to a support indicator.
    """
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma!r}")
    field = np.asarray(field, dtype=float)
    if gamma == 0.0:
        return (field > 0.0).astype(float)
    if gamma == 1.0:
        return field.copy()
    return np.power(field, gamma)


def redness_map(
    i_g: np.ndarray,
    width: float,
    alpha: float,
    gamma_r: float,
    params: FrangiParams = FrangiParams(),
) -> np.ndarray:
    """Gamma-corrected vesselness of the inverted CLAHE green channel at
    the scale matched to ``width``."""
    sigma = width_to_scale(width, alpha)
    return gamma_correct(frangi_response(i_g, sigma, params), gamma_r)


def structural_map(
    p_n: np.ndarray,
    width: float,
    alpha: float,
    gamma_s: float,
    params: FrangiParams = FrangiParams(),
) -> np.ndarray:
    """Gamma-corrected vesselness of a vessel-probability field at the
    scale matched to ``width``."""
    sigma = width_to_scale(width, alpha)
    return gamma_correct(frangi_response(p_n, sigma, params), gamma_s)


def combined_map(v_r: np.ndarray, v_s: np.ndarray, gamma_c: float) -> np.ndarray:
    """Product of the two maps under gamma; either factor at zero vetoes."""
    v_r = np.asarray(v_r, dtype=float)
    v_s = np.asarray(v_s, dtype=float)
    if v_r.shape != v_s.shape:
        raise ValueError(f"map shapes differ: {v_r.shape} vs {v_s.shape}")
    return gamma_correct(v_r * v_s, gamma_c)


def fuse_over_widths(maps: Iterable[np.ndarray]) -> np.ndarray:
    """Pointwise maximum across per-width maps."""
    maps = list(maps)
    if not maps:
        raise ValueError("cannot fuse an empty collection of maps")
    out = np.asarray(maps[0], dtype=float).copy()
    for m in maps[1:]:
        m = np.asarray(m, dtype=float)
        if m.shape != out.shape:
            raise ValueError(f"map shapes differ: {m.shape} vs {out.shape}")
        np.maximum(out, m, out=out)
    return out


def width_map(
    i_g: np.ndarray,
    p_n: np.ndarray,
    width: float,
    gammas: GammaParams,
    params: FrangiParams = FrangiParams(),
    mode: str = "combined",
    parts: dict[str, np.ndarray] | None = None,
) -> np.ndarray:
    """Single-width enhancement map in the requested mode.

    mode selects the combined product, the redness map alone, or the
    structural map alone (the latter two support ablation runs).  When
    ``parts`` is given, the intermediate maps that were computed are stored
    into it under "structural" / "redness" / "combined".
    """
    if mode not in MAP_MODES:
        raise ValueError(f"mode must be one of {MAP_MODES}, got {mode!r}")
    if mode == "redness":
        v_r = redness_map(i_g, width, params.alpha, gammas.gamma_r, params)
        if parts is not None:
            parts["redness"] = v_r
        return v_r
    if mode == "structural":
        v_s = structural_map(p_n, width, params.alpha, gammas.gamma_s, params)
        if parts is not None:
            parts["structural"] = v_s
        return v_s
    v_r = redness_map(i_g, width, params.alpha, gammas.gamma_r, params)
    v_s = structural_map(p_n, width, params.alpha, gammas.gamma_s, params)
    v_c = combined_map(v_r, v_s, gammas.gamma_c)
    if parts is not None:
        parts["redness"] = v_r
        parts["structural"] = v_s
        parts["combined"] = v_c
    return v_c


def build_fused_map(
    i_g: np.ndarray,
    p_n: np.ndarray,
    widths: Sequence[int],
    gammas: GammaParams,
    params: FrangiParams = FrangiParams(),
    mode: str = "combined",
    jobs: int = 1,
    collect: dict[int, dict[str, np.ndarray]] | None = None,
) -> np.ndarray:
    """Fused enhancement map over a width set.

    Per-width maps are independent; with jobs > 1 they are computed in a
    thread pool.  When ``collect`` is given, the per-width intermediate
    maps are stored into it keyed by width (debug dumps).
    """
    widths = list(widths)
    if not widths:
        raise ValueError("width set must be non-empty")

    def one(width: int) -> np.ndarray:
        parts: dict[str, np.ndarray] | None = {} if collect is not None else None
        fused = width_map(i_g, p_n, width, gammas, params, mode, parts)
        if collect is not None:
            collect[width] = parts
        return fused

    if jobs > 1 and len(widths) > 1:
        with ThreadPoolExecutor(max_workers=min(jobs, len(widths))) as pool:
            maps = list(pool.map(one, widths))
    else:
        maps = [one(w) for w in widths]
    return fuse_over_widths(maps)
