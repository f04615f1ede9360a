"""Skeleton-based vessel tortuosity analysis.

A binary vessel mask is thinned to unit width (Zhang-Suen), branch points
are removed so every remaining pixel has at most two neighbors, and the
resulting sub-vessels are traced into ordered polylines.  Seven tortuosity
indices are computed per segment from a smoothed copy of the polyline and
aggregated per image by arc-length-weighted mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .raster import atomic_write_text

__all__ = [
    "skeletonize",
    "remove_branch_points",
    "VesselSegment",
    "trace_segments",
    "curvature_profile",
    "index_arc_chord",
    "index_total_curvature",
    "index_tcal",
    "index_total_sq_curvature",
    "index_sq_curvature_arc",
    "index_inflection_metric",
    "index_eti",
    "index_suite",
    "inflection_count",
    "TortuosityReport",
    "aggregate_image",
    "analyze_mask",
    "write_report",
    "INDEX_IDS",
    "INDEX_FORMULAS",
]

INDEX_IDS = (
    "arc_chord",
    "total_curvature",
    "tcal",
    "total_sq_curvature",
    "sq_curvature_arc",
    "inflection_count_metric",
    "eti",
)

# Formula lines for report headers; eti is a reconstruction, flagged as such.
INDEX_FORMULAS = {
    "arc_chord": "arc_length / chord_length - 1 (dimensionless)",
    "total_curvature": "sum |kappa| ds (radians)",
    "tcal": "sum |kappa| ds / arc_length (1/px)",
    "total_sq_curvature": "sum kappa^2 ds (1/px)",
    "sq_curvature_arc": "sum kappa^2 ds / arc_length (1/px^2)",
    "inflection_count_metric": "kappa sign changes * (arc/chord - 1) (dimensionless)",
    "eti": "ETI (reconstructed): 1 - sqrt(1 - l_min/l_max) of the point cloud "
    "second moments (dimensionless)",
}

# Axial neighbors first: the tracer prefers the 4-connected continuation, so
# a tight cycle is walked through its corner pixels instead of cutting across
# a diagonal and orphaning them.
_OFFSETS = ((-1, 0), (0, -1), (0, 1), (1, 0), (-1, -1), (-1, 1), (1, -1), (1, 1))


def _thinning_pass(img: np.ndarray, step: int) -> bool:
    """One Zhang-Suen subiteration on a zero-padded uint8 image, in place."""
    p2 = img[:-2, 1:-1]
    p3 = img[:-2, 2:]
    p4 = img[1:-1, 2:]
    p5 = img[2:, 2:]
    p6 = img[2:, 1:-1]
    p7 = img[2:, :-2]
    p8 = img[1:-1, :-2]
    p9 = img[:-2, :-2]
    center = img[1:-1, 1:-1]
    ring = (p2, p3, p4, p5, p6, p7, p8, p9)
    neighbors = np.zeros(center.shape, dtype=np.int8)
    for r in ring:
        neighbors += r
    transitions = np.zeros(center.shape, dtype=np.int8)
    for a, b in zip(ring, ring[1:] + ring[:1]):
        transitions += ((a == 0) & (b == 1)).astype(np.int8)
    if step == 0:
        gate = (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
    else:
        gate = (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
    remove = (
        (center == 1)
        & (neighbors >= 2)
        & (neighbors <= 6)
        & (transitions == 1)
        & gate
    )
    if not remove.any():
        return False
    center[remove] = 0
    return True


def _yokoi8(img: np.ndarray, y: int, x: int) -> int:
    """Yokoi connectivity number for 8-connected foreground at (y, x)."""
    n = (
        int(img[y, x + 1]),
        int(img[y - 1, x + 1]),
        int(img[y - 1, x]),
        int(img[y - 1, x - 1]),
        int(img[y, x - 1]),
        int(img[y + 1, x - 1]),
        int(img[y + 1, x]),
        int(img[y + 1, x + 1]),
    )
    b = tuple(1 - v for v in n)
    c = 0
    for k in (0, 2, 4, 6):
        c += b[k] - b[k] * b[(k + 1) % 8] * b[(k + 2) % 8]
    return c


def _prune_square_blocks(img: np.ndarray) -> None:
    """Remove one pixel from every remaining 2x2 block, in place (padded).

    Prefers pixels whose removal provably keeps local connectivity (Yokoi
    number 1); falls back to the scan-order first pixel so the unit-width
    guarantee always holds.
    """
    while True:
        blocks = (
            img[1:-1, 1:-1] & img[1:-1, 2:] & img[2:, 1:-1] & img[2:, 2:]
        )
        ys, xs = np.nonzero(blocks)
        if len(ys) == 0:
            return
        for y, x in zip(ys, xs):
            cand = ((y + 1, x + 1), (y + 1, x + 2), (y + 2, x + 1), (y + 2, x + 2))
            if not all(img[cy, cx] for cy, cx in cand):
                continue
            pick = None
            for cy, cx in cand:
                if _yokoi8(img, cy, cx) == 1:
                    pick = (cy, cx)
                    break
            if pick is None:
                pick = cand[0]
            img[pick] = 0


def skeletonize(mask: np.ndarray) -> np.ndarray:
    """Thin a binary mask to a unit-width skeleton (Zhang & Suen, 1984).

    Two-subiteration thinning until stable, followed by a cleanup pass that
    dissolves any residual 2x2 foreground block, so the result never
    contains one.  A component is never lost: a blob with no stable interior
    pixel (an isolated 2x2 block, say) would be consumed entirely by the
    thinning rules, so one pixel of any vanished component is restored.
    """
    mask = np.asarray(mask, dtype=bool)
    img = np.pad(mask.astype(np.uint8), 1)
    changed = True
    while changed:
        changed = _thinning_pass(img, 0)
        changed = _thinning_pass(img, 1) or changed
    _prune_square_blocks(img)
    skel = img[1:-1, 1:-1].astype(bool)
    labels, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    if count:
        survivors = set(np.unique(labels[skel]).tolist())
        for comp in range(1, count + 1):
            if comp not in survivors:
                y, x = np.argwhere(labels == comp)[0]
                skel[y, x] = True
    return skel


def _neighbor_counts(skel: np.ndarray) -> np.ndarray:
    padded = np.pad(skel.astype(np.int8), 1)
    counts = np.zeros(skel.shape, dtype=np.int8)
    h, w = skel.shape
    for dy, dx in _OFFSETS:
        counts += padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
    return counts


def remove_branch_points(skel: np.ndarray) -> np.ndarray:
    """Delete every skeleton pixel with more than two foreground 8-neighbors.

    A single simultaneous pass suffices: deletions only lower the remaining
    degrees, so the output has maximum degree 2 everywhere.
    """
    skel = np.asarray(skel, dtype=bool)
    return skel & ~(_neighbor_counts(skel) > 2)


@dataclass
class VesselSegment:
    """One traced sub-vessel.

    points holds (x, y) pixel coordinates in trace order, consecutive points
    8-adjacent.  arc_length sums 1 per axial and sqrt(2) per diagonal step.
    curvatures is filled by curvature_profile.
    """

    points: np.ndarray
    arc_length: float
    curvatures: np.ndarray | None = None


def trace_segments(skel: np.ndarray, min_len: int = 10) -> list[VesselSegment]:
    """Trace a max-degree-2 skeleton into ordered polylines.

    Open paths are walked endpoint to endpoint; pure cycles are cut at
    their topmost-leftmost pixel.  Segments with fewer than min_len pixels
    are discarded.
    """
    skel = np.asarray(skel, dtype=bool)
    h, w = skel.shape
    counts = _neighbor_counts(skel)
    visited = np.zeros_like(skel)

    def walk(sy: int, sx: int) -> list[tuple[int, int]]:
        path = [(sy, sx)]
        visited[sy, sx] = True
        y, x = sy, sx
        while True:
            nxt = None
            for dy, dx in _OFFSETS:
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and skel[ny, nx] and not visited[ny, nx]:
                    nxt = (ny, nx)
                    break
            if nxt is None:
                break
            visited[nxt] = True
            path.append(nxt)
            y, x = nxt
        return path

    paths: list[list[tuple[int, int]]] = []
    coords = np.argwhere(skel)
    # Open paths first, from their endpoints (degree <= 1), in scan order.
    for sy, sx in coords:
        if counts[sy, sx] <= 1 and not visited[sy, sx]:
            paths.append(walk(int(sy), int(sx)))
    # What remains unvisited are pure cycles; cut at the topmost-leftmost
    # pixel (scan order finds exactly that pixel first).
    for sy, sx in coords:
        if not visited[sy, sx]:
            paths.append(walk(int(sy), int(sx)))

    segments = []
    for path in paths:
        if len(path) < max(min_len, 2):
            continue
        pts = np.array([(x, y) for y, x in path], dtype=float)
        steps = np.abs(np.diff(pts, axis=0))
        lengths = np.where(steps.sum(axis=1) == 2.0, np.sqrt(2.0), 1.0)
        segments.append(VesselSegment(points=pts, arc_length=float(lengths.sum())))
    return segments


def _centered_moving_average(vals: np.ndarray, window: int) -> np.ndarray:
    """Moving average with a symmetric window that shrinks at the ends.

    The window stays centered (k points each side, k limited near the
    boundary), so segment endpoints are preserved exactly.
    """
    vals = np.asarray(vals, dtype=float)
    n = len(vals)
    half = window // 2
    idx = np.arange(n)
    k = np.minimum(np.minimum(idx, n - 1 - idx), half)
    cs = np.concatenate(([0.0], np.cumsum(vals)))
    lo = idx - k
    hi = idx + k
    return (cs[hi + 1] - cs[lo]) / (hi - lo + 1)


def _segment_geometry(
    seg: VesselSegment, smooth_window: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, float, float]:
    xs = _centered_moving_average(seg.points[:, 0], smooth_window)
    ys = _centered_moving_average(seg.points[:, 1], smooth_window)
    ds = np.hypot(np.diff(xs), np.diff(ys))
    s = np.concatenate(([0.0], np.cumsum(np.maximum(ds, 1e-12))))
    arc = float(s[-1])
    chord = float(np.hypot(xs[-1] - xs[0], ys[-1] - ys[0]))
    return xs, ys, s, arc, chord


def _stride_diff(v: np.ndarray, s: np.ndarray, h: int) -> np.ndarray:
    """Central difference dv/ds with half-step h samples; len shrinks by 2h."""
    return (v[2 * h :] - v[: -2 * h]) / (s[2 * h :] - s[: -2 * h])


def _signed_curvature(
    xs: np.ndarray, ys: np.ndarray, s: np.ndarray, smooth_window: int
) -> tuple[np.ndarray, np.ndarray]:
    """Signed curvature at the interior samples where it is defined.

    Central differences use a half-step of smooth_window // 2 samples so the
    derivative scale matches the smoothing scale; unit-step differences on a
    pixel chain are dominated by leftover staircase wiggle.  Returns
    (kappa, sample_indices); sample i covers s[i].
    """
    h = max(1, smooth_window // 2)
    if len(xs) < 4 * h + 3:
        h = 1
    x1 = _stride_diff(xs, s, h)
    y1 = _stride_diff(ys, s, h)
    s1 = s[h:-h]
    x2 = _stride_diff(x1, s1, h)
    y2 = _stride_diff(y1, s1, h)
    x1c = x1[h:-h]
    y1c = y1[h:-h]
    denom = np.power(x1c * x1c + y1c * y1c, 1.5)
    safe = np.where(denom > 0.0, denom, 1.0)
    kappa = np.where(denom > 0.0, (x1c * y2 - y1c * x2) / safe, 0.0)
    idx = np.arange(2 * h, len(xs) - 2 * h)
    return kappa, idx


def _kappa_over_arc(
    seg: VesselSegment, smooth_window: int
) -> tuple[np.ndarray, np.ndarray]:
    """(|kappa| extended to every sample, arc positions s)."""
    xs, ys, s, _, _ = _segment_geometry(seg, smooth_window)
    kappa, idx = _signed_curvature(xs, ys, s, smooth_window)
    full = np.empty(len(s))
    full[idx[0] : idx[-1] + 1] = np.abs(kappa)
    full[: idx[0]] = abs(kappa[0])
    full[idx[-1] + 1 :] = abs(kappa[-1])
    return full, s


def curvature_profile(seg: VesselSegment, smooth_window: int = 5) -> np.ndarray:
    """Unsigned curvature at interior samples of the smoothed polyline.

    kappa = |x'y'' - y'x''| / (x'^2 + y'^2)^(3/2), derivatives taken via
    central differences against arc length.  Requires >= 5 points.
    """
    if len(seg.points) < 5:
        raise ValueError(
            f"curvature needs at least 5 points, segment has {len(seg.points)}"
        )
    xs, ys, s, _, _ = _segment_geometry(seg, smooth_window)
    kappa, _ = _signed_curvature(xs, ys, s, smooth_window)
    kappa = np.abs(kappa)
    seg.curvatures = kappa
    return kappa


def index_arc_chord(seg: VesselSegment, smooth_window: int = 5) -> float:
    """Arc length over chord length, minus one."""
    _, _, _, arc, chord = _segment_geometry(seg, smooth_window)
    if chord <= 0.0:
        return 0.0
    return max(arc / chord - 1.0, 0.0)


def _curvature_sums(seg: VesselSegment, smooth_window: int) -> tuple[float, float, float]:
    """(sum |k| ds, sum k^2 ds, smoothed arc length)."""
    if len(seg.points) < 5:
        raise ValueError(
            f"curvature sums need at least 5 points, segment has {len(seg.points)}"
        )
    kappa, s = _kappa_over_arc(seg, smooth_window)
    total = float(np.trapezoid(kappa, s))
    total_sq = float(np.trapezoid(kappa * kappa, s))
    return total, total_sq, float(s[-1])


def index_total_curvature(seg: VesselSegment, smooth_window: int = 5) -> float:
    total, _, _ = _curvature_sums(seg, smooth_window)
    return total


def index_tcal(seg: VesselSegment, smooth_window: int = 5) -> float:
    """Total curvature normalized by arc length, 1/px."""
    total, _, arc = _curvature_sums(seg, smooth_window)
    if arc <= 0.0:
        raise ValueError("tcal undefined for a zero-length segment")
    return total / arc


def index_total_sq_curvature(seg: VesselSegment, smooth_window: int = 5) -> float:
    _, total_sq, _ = _curvature_sums(seg, smooth_window)
    return total_sq


def index_sq_curvature_arc(seg: VesselSegment, smooth_window: int = 5) -> float:
    _, total_sq, arc = _curvature_sums(seg, smooth_window)
    if arc <= 0.0:
        raise ValueError("undefined for a zero-length segment")
    return total_sq / arc


def inflection_count(seg: VesselSegment, smooth_window: int = 5) -> int:
    """Number of sign changes of the signed curvature along the segment.

    Counted on the smoothed curvature profile between lobes of sustained
    sign (at least 2 * smooth_window samples above a 10%-of-peak deadband),
    so pixel-level sign jitter in near-straight stretches is not counted.
    """
    if len(seg.points) < 5:
        return 0
    xs, ys, s, _, _ = _segment_geometry(seg, smooth_window)
    kappa, _ = _signed_curvature(xs, ys, s, smooth_window)
    smoothed = _centered_moving_average(kappa, max(smooth_window, 9))
    if len(smoothed) == 0:
        return 0
    theta = max(1e-12, 0.1 * float(np.max(np.abs(smoothed))))
    signs = np.where(smoothed > theta, 1, np.where(smoothed < -theta, -1, 0))
    min_run = 2 * smooth_window
    lobes: list[int] = []
    current, run = 0, 0
    for value in signs:
        if value == 0:
            continue
        if value == current:
            run += 1
        else:
            if current != 0 and run >= min_run:
                if not lobes or lobes[-1] != current:
                    lobes.append(current)
            current, run = int(value), 1
    if current != 0 and run >= min_run and (not lobes or lobes[-1] != current):
        lobes.append(current)
    return max(0, len(lobes) - 1)


def index_inflection_metric(seg: VesselSegment, smooth_window: int = 5) -> float:
    """Curvature sign changes weighted by the arc-chord index."""
    return inflection_count(seg, smooth_window) * index_arc_chord(seg, smooth_window)


def index_eti(seg: VesselSegment, smooth_window: int = 5) -> float:
    """Flatness deviation of the segment point cloud, in [0, 1].

    One minus the eccentricity of the second-moment ellipse: with
    eigenvalues l_min <= l_max of the point covariance, the value is
    1 - sqrt(1 - l_min/l_max).  Collinear clouds give 0; the value grows as
    the cloud departs from a straight line.  Moments are taken over the
    smoothed polyline, arc-length weighted: raw pixel chains carry an
    orientation-dependent density (the staircase effect), which would make
    the moment ratio depend on how the segment is rotated.
    """
    pts = seg.points
    if len(pts) < 2:
        return 0.0
    xs = _centered_moving_average(pts[:, 0], smooth_window)
    ys = _centered_moving_average(pts[:, 1], smooth_window)
    smoothed = np.stack([xs, ys], axis=1)
    gaps = np.hypot(*np.diff(smoothed, axis=0).T)
    weights = np.zeros(len(smoothed))
    weights[:-1] += gaps / 2.0
    weights[1:] += gaps / 2.0
    total = weights.sum()
    if total <= 0.0:
        return 0.0
    weights /= total
    mean = weights @ smoothed
    centered = smoothed - mean
    cov = (centered * weights[:, None]).T @ centered
    evals = np.linalg.eigvalsh(cov)
    l_min, l_max = float(evals[0]), float(evals[1])
    if l_max <= 0.0:
        return 0.0
    ratio = min(max(l_min / l_max, 0.0), 1.0)
    return 1.0 - np.sqrt(1.0 - ratio)


def index_suite(seg: VesselSegment, smooth_window: int = 5) -> dict[str, float]:
    """All implemented indices for one segment, keyed by index id.

    Segments too short for curvature estimation (under 5 points) report 0
    for the curvature-based indices rather than failing the suite.
    """
    values: dict[str, float] = {}
    values["arc_chord"] = index_arc_chord(seg, smooth_window)
    if len(seg.points) >= 5:
        total, total_sq, arc = _curvature_sums(seg, smooth_window)
        values["total_curvature"] = total
        values["tcal"] = total / arc if arc > 0 else 0.0
        values["total_sq_curvature"] = total_sq
        values["sq_curvature_arc"] = total_sq / arc if arc > 0 else 0.0
        values["inflection_count_metric"] = index_inflection_metric(seg, smooth_window)
    else:
        for key in (
            "total_curvature",
            "tcal",
            "total_sq_curvature",
            "sq_curvature_arc",
            "inflection_count_metric",
        ):
            values[key] = 0.0
    values["eti"] = index_eti(seg, smooth_window)
    return values


@dataclass
class TortuosityReport:
    """Per-segment index values and their per-image aggregate.

    The aggregate is the arc-length-weighted mean of segment values; an
    image without usable segments has segment_count 0 and an empty
    aggregate.
    """

    segments: list[VesselSegment] = field(default_factory=list)
    per_segment: list[dict[str, float]] = field(default_factory=list)
    aggregate: dict[str, float] = field(default_factory=dict)
    total_length: float = 0.0

    @property
    def segment_count(self) -> int:
        return len(self.per_segment)


def aggregate_image(
    per_segment: Sequence[dict[str, float]], lengths: Sequence[float]
) -> dict[str, float]:
    """Arc-length-weighted mean of per-segment index values."""
    if not per_segment:
        raise ValueError("no segments to aggregate")
    if len(per_segment) != len(lengths):
        raise ValueError("value rows and lengths differ in count")
    weights = np.asarray(lengths, dtype=float)
    total = weights.sum()
    if total <= 0.0:
        raise ValueError("total arc length must be positive")
    out: dict[str, float] = {}
    for key in per_segment[0]:
        vals = np.array([row[key] for row in per_segment], dtype=float)
        out[key] = float((vals * weights).sum() / total)
    return out


def analyze_mask(
    mask: np.ndarray, min_len: int = 10, smooth_window: int = 5
) -> TortuosityReport:
    """Full tortuosity pass over a binary vessel mask.

    Skeletonize, remove branch points, trace sub-vessels, compute the index
    suite per segment, and aggregate.  An empty mask yields an empty report
    rather than an error.
    """
    skel = remove_branch_points(skeletonize(mask))
    segments = trace_segments(skel, min_len)
    report = TortuosityReport(segments=segments)
    if not segments:
        return report
    for seg in segments:
        report.per_segment.append(index_suite(seg, smooth_window))
    lengths = [seg.arc_length for seg in segments]
    report.aggregate = aggregate_image(report.per_segment, lengths)
    report.total_length = float(sum(lengths))
    return report


def write_report(path: str, report: TortuosityReport, image_id: str = "") -> None:
    """Write one image's tortuosity report as commented, comma-delimited text."""
    lines = ["# tortuosity report" + (f" for {image_id}" if image_id else "")]
    lines.append("# aggregate row: arc-length-weighted mean across segments")
    for key in INDEX_IDS:
        lines.append(f"# {key}: {INDEX_FORMULAS[key]}")
    lines.append("# columns: segment,points,arc_length_px," + ",".join(INDEX_IDS))
    for i, (seg, row) in enumerate(zip(report.segments, report.per_segment)):
        vals = ",".join(f"{row[key]:.9g}" for key in INDEX_IDS)
        lines.append(f"{i},{len(seg.points)},{seg.arc_length:.9g},{vals}")
    if report.per_segment:
        vals = ",".join(f"{report.aggregate[key]:.9g}" for key in INDEX_IDS)
        lines.append(
            f"aggregate,{report.segment_count},{report.total_length:.9g},{vals}"
        )
    else:
        lines.append("aggregate,0,0" + "," * len(INDEX_IDS))
    atomic_write_text(path, "\n".join(lines) + "\n")
