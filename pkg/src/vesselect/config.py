"""Extraction configuration: validated parameter set, shipped presets, and a
flat key = value file format that round-trips exactly.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, fields, replace
from typing import Sequence

from .vesselmaps import MAP_MODES

__all__ = [
    "ExtractionConfig",
    "PRESETS",
    "parse_widths",
    "format_widths",
    "parse_config",
    "read_config",
    "serialize_config",
    "write_config",
]


@dataclass(frozen=True)
class ExtractionConfig:
    """Every knob of the vessel extraction pipeline.

    widths is the target thickness set in pixels at the processed (resized)
    scale; guard_widths, when non-empty, names a strictly thicker set whose
    extraction result is subtracted from the output.
    """

    kind: str = "scleral"
    widths: tuple[int, ...] = (4, 5, 6, 7, 8)
    guard_widths: tuple[int, ...] = ()
    alpha: float = 0.9
    beta: float = 0.5
    c_factor: float = 0.5
    gamma_r: float = 0.7
    gamma_s: float = 0.1
    gamma_c: float = 0.9
    t: float = 0.3
    strict_size_rule: bool = False
    map_mode: str = "combined"
    clahe_tiles: int = 8
    clahe_clip: float = 2.0
    resize_target: int = 512
    min_segment_length: int = 10
    smooth_window: int = 5

    def validate(self) -> None:
        if self.kind not in ("scleral", "retinal"):
            raise ValueError(f"kind must be 'scleral' or 'retinal', got {self.kind!r}")
        if not self.widths:
            raise ValueError("widths must be non-empty")
        if any(w < 1 for w in self.widths):
            raise ValueError(f"widths must be >= 1 px, got {self.widths}")
        if list(self.widths) != sorted(set(self.widths)):
            raise ValueError(f"widths must be strictly increasing, got {self.widths}")
        if self.guard_widths:
            if list(self.guard_widths) != sorted(set(self.guard_widths)):
                raise ValueError(
                    f"guard_widths must be strictly increasing, got {self.guard_widths}"
                )
            if min(self.guard_widths) <= max(self.widths):
                raise ValueError(
                    "guard_widths must strictly exceed max(widths): "
                    f"{self.guard_widths} vs {self.widths}"
                )
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha!r}")
        if self.beta <= 0 or self.c_factor <= 0:
            raise ValueError("beta and c_factor must be positive")
        for name in ("gamma_r", "gamma_s", "gamma_c"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 < self.t <= 1.0:
            raise ValueError(f"t must lie in (0, 1], got {self.t!r}")
        if self.map_mode not in MAP_MODES:
            raise ValueError(f"map_mode must be one of {MAP_MODES}, got {self.map_mode!r}")
        if self.clahe_tiles < 1:
            raise ValueError("clahe_tiles must be >= 1")
        if not self.clahe_clip > 0:
            raise ValueError("clahe_clip must be positive")
        if self.resize_target < 1:
            raise ValueError("resize_target must be >= 1")
        if self.min_segment_length < 1:
            raise ValueError("min_segment_length must be >= 1")
        if self.smooth_window < 1 or self.smooth_window % 2 == 0:
            raise ValueError("smooth_window must be an odd positive integer")


# Published per-dataset parameter sets: two public benchmarks plus the
# high-resolution fundus and DSLR external-eye settings.
PRESETS: dict[str, ExtractionConfig] = {
    "drive": ExtractionConfig(
        kind="retinal",
        widths=(7, 8, 9, 10, 11, 12),
        gamma_r=0.4,
        gamma_s=0.7,
        gamma_c=0.8,
        t=0.05,
    ),
    "sbvpi": ExtractionConfig(
        kind="scleral",
        widths=(4, 5, 6, 7, 8),
        gamma_r=0.7,
        gamma_s=0.1,
        gamma_c=0.9,
        t=0.3,
    ),
    "fundus_highres": ExtractionConfig(
        kind="retinal",
        widths=(7, 8, 9, 10, 11, 12),
        gamma_r=0.9,
        gamma_s=0.4,
        gamma_c=0.5,
        t=0.05,
    ),
    "external_eye": ExtractionConfig(
        kind="scleral",
        widths=(4, 5, 6, 7, 8),
        gamma_r=0.7,
        gamma_s=0.7,
        gamma_c=0.7,
        t=0.2,
    ),
}


def parse_widths(text: str) -> tuple[int, ...]:
    """Parse a width set: '4-8' or '4,5,6,7,8' (or both mixed)."""
    out: list[int] = []
    text = text.strip()
    if not text:
        return ()
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo_s, hi_s = part.split("-", 1)
            lo, hi = int(lo_s), int(hi_s)
            if hi < lo:
                raise ValueError(f"bad width range {part!r}")
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(part))
    return tuple(out)


def format_widths(widths: Sequence[int]) -> str:
    """Render a width tuple compactly, collapsing runs into ranges."""
    widths = list(widths)
    if not widths:
        return ""
    runs: list[str] = []
    start = prev = widths[0]
    for w in widths[1:] + [None]:
        if w is not None and w == prev + 1:
            prev = w
            continue
        runs.append(str(start) if start == prev else f"{start}-{prev}")
        if w is not None:
            start = prev = w
    return ",".join(runs)


_BOOL_KEYS = {"strict_size_rule"}
_INT_KEYS = {"clahe_tiles", "resize_target", "min_segment_length", "smooth_window"}
_FLOAT_KEYS = {
    "alpha",
    "beta",
    "c_factor",
    "gamma_r",
    "gamma_s",
    "gamma_c",
    "t",
    "clahe_clip",
}
_WIDTH_KEYS = {"widths", "guard_widths"}
_STR_KEYS = {"kind", "map_mode"}
_ALL_KEYS = _BOOL_KEYS | _INT_KEYS | _FLOAT_KEYS | _WIDTH_KEYS | _STR_KEYS


def parse_config(text: str, base: ExtractionConfig | None = None) -> ExtractionConfig:
    """Parse flat ``key = value`` lines into a config.

    Blank lines and '#' comments are ignored.  Unknown keys are an error;
    keys not present keep the value from ``base`` (library defaults when
    base is None).
    """
    cfg = base if base is not None else ExtractionConfig()
    updates: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _ALL_KEYS:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        if key in _WIDTH_KEYS:
            updates[key] = parse_widths(value)
        elif key in _BOOL_KEYS:
            if value.lower() not in ("true", "false"):
                raise ValueError(f"config line {lineno}: {key} must be true or false")
            updates[key] = value.lower() == "true"
        elif key in _INT_KEYS:
            updates[key] = int(value)
        elif key in _FLOAT_KEYS:
            updates[key] = float(value)
        else:
            updates[key] = value
    cfg = replace(cfg, **updates)
    cfg.validate()
    return cfg


def serialize_config(cfg: ExtractionConfig) -> str:
    """Render a config as the flat key = value format, all keys explicit."""
    lines = ["# vessel extraction configuration"]
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in _WIDTH_KEYS:
            rendered = format_widths(value)
        elif isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, float):
            rendered = repr(value) if math.isfinite(value) else str(value)
        else:
            rendered = str(value)
        lines.append(f"{f.name} = {rendered}")
    return "\n".join(lines) + "\n"


def read_config(path: str | os.PathLike, base: ExtractionConfig | None = None) -> ExtractionConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), base)


def write_config(path: str | os.PathLike, cfg: ExtractionConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_config(cfg))
