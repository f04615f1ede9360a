"""Synthetic vessel phantoms for verification.

A phantom is a color image of tubes with known centerlines and pixel
widths, plus the matching ideal probability map (tube indicator smoothed by
a 1-px Gaussian, peak 1) and one ground-truth mask per tube width.  Pixels
covered by overlapping tubes belong to the earliest tube in the list, so
the per-width masks are disjoint and their union is the all-vessel mask.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.spatial import cKDTree

from .raster import save_gray16, save_image, save_mask

__all__ = [
    "TubeSpec",
    "PhantomSpec",
    "PhantomResult",
    "centerline_points",
    "render_phantom",
    "save_phantom_outputs",
]

_SHAPES = ("line", "sine", "arc")

# RGB palettes: vessels are red-dominant and darker than the surround in
# the green channel, matching the tissue appearance the pipeline expects.
_SCLERAL_BG = (0.93, 0.94, 0.90)
_SCLERAL_TUBE = (0.55, 0.16, 0.18)
_RETINAL_BG = (0.52, 0.27, 0.14)
_RETINAL_TUBE = (0.30, 0.10, 0.07)


@dataclass(frozen=True)
class TubeSpec:
    """One tube: a centerline shape swept to a fixed pixel width.

    line: start -> end.  sine: start -> end baseline displaced by
    amplitude * sin along its normal, `periods` full waves.  arc: circle
    piece at center/radius between theta_start and theta_end (degrees).
    """

    shape: str
    width: int
    contrast: float = 1.0
    start: tuple[float, float] | None = None
    end: tuple[float, float] | None = None
    amplitude: float = 0.0
    periods: float = 1.0
    center: tuple[float, float] | None = None
    radius: float = 0.0
    theta_start: float = 0.0
    theta_end: float = 180.0
    # Distractors: a tube absent from the probability map imitates a
    # pigment streak the network rejected; one absent from the image
    # imitates a network false positive.  Only tubes present in BOTH
    # channels count as vessels in the ground truth.
    in_image: bool = True
    in_probability: bool = True

    @property
    def is_vessel(self) -> bool:
        return self.in_image and self.in_probability

    def __post_init__(self) -> None:
        if self.shape not in _SHAPES:
            raise ValueError(f"unknown tube shape {self.shape!r}; use one of {_SHAPES}")
        if not (self.in_image or self.in_probability):
            raise ValueError("tube must appear in the image, the probability map, or both")
        if not (isinstance(self.width, int) and self.width >= 1):
            raise ValueError(f"tube width must be an integer >= 1, got {self.width!r}")
        if not 0.0 < self.contrast <= 1.0:
            raise ValueError(f"contrast must be in (0, 1], got {self.contrast}")
        if self.shape in ("line", "sine"):
            if self.start is None or self.end is None:
                raise ValueError(f"{self.shape} tube needs start and end")
            if tuple(self.start) == tuple(self.end):
                raise ValueError("tube start and end coincide")
        if self.shape == "arc":
            if self.center is None or self.radius <= 0:
                raise ValueError("arc tube needs center and positive radius")
            if self.theta_start == self.theta_end:
                raise ValueError("arc spans zero angle")


@dataclass(frozen=True)
class PhantomSpec:
    """Canvas, appearance mode, noise level, and the tube list."""

    size: int = 512
    kind: str = "scleral"
    noise: float = 0.0
    seed: int = 0
    tubes: tuple[TubeSpec, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.size < 16:
            raise ValueError(f"canvas size must be >= 16, got {self.size}")
        if self.kind not in ("scleral", "retinal"):
            raise ValueError(f"kind must be scleral or retinal, got {self.kind!r}")
        if self.noise < 0:
            raise ValueError(f"noise must be >= 0, got {self.noise}")
        if not self.tubes:
            raise ValueError("phantom needs at least one tube")
        if not any(t.is_vessel for t in self.tubes):
            raise ValueError(
                "phantom needs at least one tube present in both the image "
                "and the probability map"
            )

    @classmethod
    def parse_json(cls, text: str) -> "PhantomSpec":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(f"phantom spec is not valid JSON: {exc}") from exc
        if not isinstance(raw, Mapping):
            raise ValueError("phantom spec must be a JSON object")
        tubes_raw = raw.get("tubes")
        if not isinstance(tubes_raw, list) or not tubes_raw:
            raise ValueError("phantom spec needs a non-empty 'tubes' list")
        tubes = []
        for i, entry in enumerate(tubes_raw):
            if not isinstance(entry, Mapping):
                raise ValueError(f"tube {i} must be a JSON object")
            kwargs = dict(entry)
            for key in ("start", "end", "center"):
                if key in kwargs and kwargs[key] is not None:
                    pair = kwargs[key]
                    if not (isinstance(pair, list) and len(pair) == 2):
                        raise ValueError(f"tube {i}: {key} must be [x, y]")
                    kwargs[key] = (float(pair[0]), float(pair[1]))
            try:
                tubes.append(TubeSpec(**kwargs))
            except TypeError as exc:
                raise ValueError(f"tube {i}: {exc}") from exc
        return cls(
            size=int(raw.get("size", 512)),
            kind=str(raw.get("kind", "scleral")),
            noise=float(raw.get("noise", 0.0)),
            seed=int(raw.get("seed", 0)),
            tubes=tuple(tubes),
        )

    def to_json(self) -> str:
        tubes = []
        for t in self.tubes:
            entry: dict = {"shape": t.shape, "width": t.width, "contrast": t.contrast}
            if t.shape in ("line", "sine"):
                entry["start"] = list(t.start)
                entry["end"] = list(t.end)
            if t.shape == "sine":
                entry["amplitude"] = t.amplitude
                entry["periods"] = t.periods
            if t.shape == "arc":
                entry["center"] = list(t.center)
                entry["radius"] = t.radius
                entry["theta_start"] = t.theta_start
                entry["theta_end"] = t.theta_end
            if not t.in_image:
                entry["in_image"] = False
            if not t.in_probability:
                entry["in_probability"] = False
            tubes.append(entry)
        return json.dumps(
            {
                "size": self.size,
                "kind": self.kind,
                "noise": self.noise,
                "seed": self.seed,
                "tubes": tubes,
            },
            indent=2,
        )


def centerline_points(tube: TubeSpec, spacing: float = 0.25) -> np.ndarray:
    """Dense (x, y) samples along the tube centerline.

    Even widths get a half-pixel shift so the swept band covers exactly
    `width` pixel rows/columns on axis-aligned runs.
    """
    if tube.shape == "line":
        x0, y0 = tube.start
        x1, y1 = tube.end
        length = float(np.hypot(x1 - x0, y1 - y0))
        n = max(2, int(np.ceil(length / spacing)) + 1)
        ts = np.linspace(0.0, 1.0, n)
        pts = np.stack([x0 + ts * (x1 - x0), y0 + ts * (y1 - y0)], axis=1)
    elif tube.shape == "sine":
        x0, y0 = tube.start
        x1, y1 = tube.end
        dx, dy = x1 - x0, y1 - y0
        length = float(np.hypot(dx, dy))
        ux, uy = dx / length, dy / length
        nx, ny = -uy, ux
        n = max(2, int(np.ceil((length + 8 * abs(tube.amplitude)) / spacing)) + 1)
        ts = np.linspace(0.0, 1.0, n)
        wave = tube.amplitude * np.sin(2.0 * np.pi * tube.periods * ts)
        pts = np.stack(
            [x0 + ts * dx + wave * nx, y0 + ts * dy + wave * ny], axis=1
        )
    else:
        cx, cy = tube.center
        th0 = np.deg2rad(tube.theta_start)
        th1 = np.deg2rad(tube.theta_end)
        span = abs(th1 - th0) * tube.radius
        n = max(2, int(np.ceil(span / spacing)) + 1)
        ths = np.linspace(th0, th1, n)
        pts = np.stack(
            [cx + tube.radius * np.cos(ths), cy + tube.radius * np.sin(ths)], axis=1
        )
    if tube.width % 2 == 0:
        pts = pts + 0.5
    return pts


@dataclass
class PhantomResult:
    """Rendered phantom: color image, probability map, per-width truth."""

    image: np.ndarray
    probability: np.ndarray
    truth_by_width: dict[int, np.ndarray]
    all_vessels: np.ndarray
    spec: PhantomSpec


def render_phantom(spec: PhantomSpec) -> PhantomResult:
    size = spec.size
    yy, xx = np.mgrid[:size, :size]
    pixel_centers = np.stack([xx.ravel(), yy.ravel()], axis=1).astype(float)

    coverage: list[np.ndarray] = []
    for tube in spec.tubes:
        tree = cKDTree(centerline_points(tube))
        dist, _ = tree.query(pixel_centers, k=1)
        coverage.append((dist < tube.width / 2.0).reshape(size, size))

    def first_owner(eligible: list[bool]) -> np.ndarray:
        owner = np.full((size, size), -1, dtype=np.int32)
        for i, ok in enumerate(eligible):
            if ok:
                owner[(owner < 0) & coverage[i]] = i
        return owner

    owner_image = first_owner([t.in_image for t in spec.tubes])
    owner_vessel = first_owner([t.is_vessel for t in spec.tubes])

    all_vessels = owner_vessel >= 0
    truth_by_width: dict[int, np.ndarray] = {}
    for i, tube in enumerate(spec.tubes):
        if not tube.is_vessel:
            continue
        mask = owner_vessel == i
        if tube.width in truth_by_width:
            truth_by_width[tube.width] |= mask
        else:
            truth_by_width[tube.width] = mask

    bg, fg = (
        (_SCLERAL_BG, _SCLERAL_TUBE)
        if spec.kind == "scleral"
        else (_RETINAL_BG, _RETINAL_TUBE)
    )
    image = np.empty((size, size, 3), dtype=np.float64)
    for ch in range(3):
        image[:, :, ch] = bg[ch]
    for i, tube in enumerate(spec.tubes):
        mask = owner_image == i
        for ch in range(3):
            layer = image[:, :, ch]
            layer[mask] = bg[ch] + tube.contrast * (fg[ch] - bg[ch])

    prob_support = np.zeros((size, size), dtype=bool)
    for i, tube in enumerate(spec.tubes):
        if tube.in_probability:
            prob_support |= coverage[i]
    probability = gaussian_filter(prob_support.astype(np.float64), sigma=1.0)
    peak = probability.max()
    if peak > 0:
        probability /= peak

    if spec.noise > 0:
        rng = np.random.default_rng(spec.seed)
        image = image + rng.normal(0.0, spec.noise, image.shape)
    image = np.clip(image, 0.0, 1.0)

    return PhantomResult(
        image=image,
        probability=probability,
        truth_by_width=truth_by_width,
        all_vessels=all_vessels,
        spec=spec,
    )


def save_phantom_outputs(result: PhantomResult, out_dir: str) -> dict[str, str]:
    """Write image, probability map, and truth masks; returns name -> path."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    img_path = os.path.join(out_dir, "phantom.png")
    save_image(img_path, result.image)
    paths["image"] = img_path
    prob_path = os.path.join(out_dir, "probability.png")
    save_gray16(prob_path, result.probability)
    paths["probability"] = prob_path
    all_path = os.path.join(out_dir, "truth_all.png")
    save_mask(all_path, result.all_vessels)
    paths["truth_all"] = all_path
    for width in sorted(result.truth_by_width):
        p = os.path.join(out_dir, f"truth_w{width}.png")
        save_mask(p, result.truth_by_width[width])
        paths[f"truth_w{width}"] = p
    return paths
