"""Binarization and mask cleanup: Otsu threshold, morphology, component
size filtering, thick-trace removal, and the end-to-end extraction pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np
from scipy.ndimage import binary_dilation, binary_erosion, binary_fill_holes

from . import raster
from .frangi import FrangiParams
from .vesselmaps import GammaParams, build_fused_map

if TYPE_CHECKING:
    from .config import ExtractionConfig

__all__ = [
    "PipelineError",
    "otsu_binarize",
    "morph_cleanup",
    "ComponentSet",
    "connected_components",
    "size_filter",
    "remove_thick_traces",
    "ExtractionResult",
    "extract_vessels",
]

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

# Flood-fill neighbor offsets, 8-connectivity.
_NEIGHBORS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


class PipelineError(RuntimeError):
    """Extraction stage failure, tagged with the stage that raised it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


def otsu_binarize(
    f: np.ndarray, mask: np.ndarray | None = None, nbins: int = 256
) -> tuple[np.ndarray, float | None]:
    """Global Otsu threshold on a 256-bin histogram over masked pixels.

    Returns (binary mask, threshold).  The threshold is the lower edge of the
    first foreground bin; pixels at or above it (inside the mask) are
    foreground.  A constant field has no valid threshold: the result is an
    all-background mask with threshold None as the degenerate-input signal.
    """
    f = np.asarray(f, dtype=float)
    if f.ndim != 2:
        raise ValueError(f"expected a 2-D scalar field, got shape {f.shape}")
    if mask is None:
        region = np.ones(f.shape, dtype=bool)
    else:
        region = np.asarray(mask, dtype=bool)
        if region.shape != f.shape:
            raise ValueError(
                f"mask shape {region.shape} does not match field shape {f.shape}"
            )
    values = f[region]
    bins = np.minimum((values * nbins).astype(int), nbins - 1)
    np.clip(bins, 0, nbins - 1, out=bins)
    hist = np.bincount(bins, minlength=nbins).astype(float)
    if np.count_nonzero(hist) <= 1:
        return np.zeros(f.shape, dtype=bool), None

    total = hist.sum()
    omega = np.cumsum(hist) / total                  # class-0 mass per split
    mu = np.cumsum(hist * np.arange(nbins)) / total  # first moment per split
    mu_total = mu[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (mu_total * omega - mu) ** 2 / (omega * (1.0 - omega))
    between[~np.isfinite(between)] = -1.0
    # Split index k: bins <= k are background.  Ignore splits with an empty
    # class on either side.
    k = int(np.argmax(between[:-1]))
    threshold = (k + 1) / nbins
    out = np.zeros(f.shape, dtype=bool)
    binned = np.minimum((f * nbins).astype(int), nbins - 1)
    out[region] = binned[region] > k
    return out, threshold


def morph_cleanup(m: np.ndarray) -> np.ndarray:
    """Opening with a 3x3 cross, then fill of enclosed background holes.

    The erosion treats pixels beyond the frame as foreground so vessels that
    touch the border are not eaten from outside.
    """
    m = np.asarray(m, dtype=bool)
    eroded = binary_erosion(m, structure=_CROSS, border_value=1)
    opened = binary_dilation(eroded, structure=_CROSS, border_value=0)
    return binary_fill_holes(opened)


@dataclass
class ComponentSet:
    """8-connected foreground components: label image plus size statistics.

    labels holds 1-based component ids, 0 is background.  median_size is
    None when the mask is empty.
    """

    labels: np.ndarray
    sizes: np.ndarray
    median_size: float | None

    @property
    def count(self) -> int:
        return len(self.sizes)


def connected_components(m: np.ndarray) -> ComponentSet:
    """Label 8-connected components with an explicit-stack flood fill.

    The worklist lives on the heap, so component size is bounded by memory
    rather than recursion depth.
    """
    m = np.asarray(m, dtype=bool)
    h, w = m.shape
    labels = np.zeros((h, w), dtype=np.int32)
    sizes: list[int] = []
    fg = m  # local alias for the hot loop
    for sy, sx in np.argwhere(m):
        if labels[sy, sx]:
            continue
        label = len(sizes) + 1
        stack = [(int(sy), int(sx))]
        labels[sy, sx] = label
        count = 0
        while stack:
            y, x = stack.pop()
            count += 1
            for dy, dx in _NEIGHBORS:
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and fg[ny, nx] and not labels[ny, nx]:
                    labels[ny, nx] = label
                    stack.append((ny, nx))
        sizes.append(count)
    size_arr = np.asarray(sizes, dtype=np.int64)
    median = float(np.median(size_arr)) if sizes else None
    return ComponentSet(labels=labels, sizes=size_arr, median_size=median)


def size_filter(cs: ComponentSet, t: float, strict: bool = False) -> np.ndarray:
    """Keep components whose median-relative size score reaches t.

    Score per component: d_k = (N_k - M) / max_k |N_k - M| with M the median
    component size.  Components with d_k >= t survive (> t when strict).
    When every component has the same size the score is undefined and all
    components are kept.
    """
    if cs.count == 0:
        raise ValueError("size_filter requires at least one component")
    sizes = cs.sizes.astype(float)
    deviation = sizes - cs.median_size
    denom = np.abs(deviation).max()
    if denom == 0.0:
        keep = np.ones(cs.count, dtype=bool)
    else:
        d = deviation / denom
        keep = d > t if strict else d >= t
    keep_lut = np.concatenate(([False], keep))
    return keep_lut[cs.labels]


def remove_thick_traces(v_w: np.ndarray, v_u: np.ndarray) -> np.ndarray:
    """Clear pixels of v_w that the thicker-set extraction v_u also claims."""
    v_w = np.asarray(v_w, dtype=bool)
    v_u = np.asarray(v_u, dtype=bool)
    if v_w.shape != v_u.shape:
        raise ValueError(f"mask shapes differ: {v_w.shape} vs {v_u.shape}")
    return v_w & ~v_u


@dataclass
class ExtractionResult:
    """Output of the extraction pipeline.

    mask is the final binary vessel image at processing resolution;
    transform maps it back to the source grid.  threshold is the Otsu cut
    (None when the fused map was constant and the mask is empty).  stages
    collects intermediate fields by step letter when requested.
    """

    mask: np.ndarray
    transform: raster.ResizeTransform
    threshold: float | None
    stages: dict[str, object] = field(default_factory=dict)


def _reconcile_aux(
    aux: np.ndarray, name: str, source_shape: tuple[int, int], target: int
) -> np.ndarray:
    """Bring a probability map or mask to the processed frame size."""
    if aux.shape[:2] == (target, target):
        return aux
    if aux.shape[:2] == source_shape:
        out, _ = raster.resize_preserve_aspect(aux.astype(float), target)
        return out
    raise ValueError(
        f"{name} shape {aux.shape[:2]} matches neither the source image "
        f"{source_shape} nor the processed frame ({target}, {target})"
    )


def extract_vessels(
    image: np.ndarray,
    p_n: np.ndarray,
    cfg: "ExtractionConfig",
    region_mask: np.ndarray | None = None,
    keep_stages: bool = False,
    jobs: int = 1,
) -> ExtractionResult:
    """Extract vessels of the configured thicknesses from one image.

    Pipeline: aspect-preserving resize, inverted CLAHE green channel,
    per-width enhancement maps fused by maximum, Otsu binarization (histogram
    restricted to the region mask when given), opening plus hole fill,
    component size filtering, and optional removal of traces claimed by a
    thicker guard width set.
    """
    cfg.validate()
    stages: dict[str, object] = {}

    # Stage C: geometry and the emphasized green channel.
    try:
        image = np.asarray(image, dtype=float)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError(f"expected an RGB image, got shape {image.shape}")
        source_shape = image.shape[:2]
        target = cfg.resize_target
        img, tf = raster.resize_preserve_aspect(image, target)
        p_n = np.asarray(p_n, dtype=float)
        prob = _reconcile_aux(p_n, "probability map", source_shape, target)
        region = None
        if region_mask is not None:
            region_f = _reconcile_aux(
                np.asarray(region_mask, dtype=float), "region mask", source_shape, target
            )
            region = region_f > 0.5
            img = raster.apply_mask(img, region)
            prob = raster.apply_mask(prob, region)
        i_g = raster.invert(
            raster.clahe(raster.green_channel(img), cfg.clahe_tiles, cfg.clahe_clip)
        )
    except Exception as exc:
        raise PipelineError("C (preprocess)", str(exc)) from exc
    if keep_stages:
        stages["C"] = i_g

    # Stages D-G: per-width maps and fusion.
    try:
        params = FrangiParams(beta=cfg.beta, c_factor=cfg.c_factor, alpha=cfg.alpha)
        gammas = GammaParams(cfg.gamma_r, cfg.gamma_s, cfg.gamma_c)
        collect: dict[int, dict[str, np.ndarray]] | None = {} if keep_stages else None
        fused = build_fused_map(
            i_g, prob, cfg.widths, gammas, params, cfg.map_mode, jobs, collect
        )
    except Exception as exc:
        raise PipelineError("D-G (vessel maps)", str(exc)) from exc
    if keep_stages:
        assert collect is not None
        stages["D"] = {w: parts["structural"] for w, parts in collect.items() if "structural" in parts}
        stages["E"] = {w: parts["redness"] for w, parts in collect.items() if "redness" in parts}
        stages["F"] = {w: parts["combined"] for w, parts in collect.items() if "combined" in parts}
        stages["G"] = fused

    # Stage H: binarization.
    try:
        binary, threshold = otsu_binarize(fused, region)
    except Exception as exc:
        raise PipelineError("H (binarization)", str(exc)) from exc
    if keep_stages:
        stages["H"] = binary
    if threshold is None:
        # Constant fused map, e.g. an empty probability map: empty output.
        return ExtractionResult(
            mask=np.zeros(binary.shape, dtype=bool),
            transform=tf,
            threshold=None,
            stages=stages,
        )

    # Stage I: morphology and component selection.
    try:
        cleaned = morph_cleanup(binary)
        comps = connected_components(cleaned)
        if comps.count == 0:
            mask = cleaned
        else:
            mask = size_filter(comps, cfg.t, cfg.strict_size_rule)
    except Exception as exc:
        raise PipelineError("I (component filtering)", str(exc)) from exc

    # Optional guard pass: drop traces that a thicker width set reproduces.
    if cfg.guard_widths:
        guard_cfg = replace(cfg, widths=tuple(cfg.guard_widths), guard_widths=())
        guard = extract_vessels(
            image, p_n, guard_cfg, region_mask, keep_stages=False, jobs=jobs
        )
        mask = remove_thick_traces(mask, guard.mask)
        if keep_stages:
            stages["I_guard"] = guard.mask

    if keep_stages:
        stages["I"] = mask
    return ExtractionResult(mask=mask, transform=tf, threshold=threshold, stages=stages)
