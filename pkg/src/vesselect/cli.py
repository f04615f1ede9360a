"""Command-line interface: extraction, evaluation, tortuosity, group
comparison, and synthetic phantom generation.

Subcommands
-----------
extract     one image -> thickness-selective vessel mask (+ stage dumps)
eval        predicted masks vs ground truth -> Acc/DSC/MCC table
tortuosity  vessel masks -> per-image tortuosity reports (+ subject means)
compare     per-image index values by group -> Mann-Whitney / Spearman report
synth       phantom description (JSON) -> image, probability map, truths

All outputs are plain PNG images or comma-delimited text with ``#`` header
comments, written atomically (temp file + rename).
"""

from __future__ import annotations

import argparse
import os
import statistics
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import metrics, raster
from .config import (
    PRESETS,
    ExtractionConfig,
    parse_widths,
    read_config,
)
from .maskops import PipelineError, extract_vessels
from .phantom import PhantomSpec, render_phantom, save_phantom_outputs
from .tortuosity import (
    INDEX_IDS,
    analyze_mask,
    remove_branch_points,
    skeletonize,
    write_report,
)
from .vesselmaps import MAP_MODES

__all__ = ["main"]

_IMAGE_EXTS = (".png", ".tif", ".tiff", ".jpg", ".jpeg", ".bmp")


class CliError(Exception):
    """User-facing command failure; message printed to stderr, exit 1."""


def _require_file(path: str, what: str) -> str:
    if not os.path.isfile(path):
        raise CliError(f"{what} not found: {path}")
    return path


def _scan_images(directory: str, what: str) -> dict[str, str]:
    """Map file stem -> path for every image file in a directory."""
    if not os.path.isdir(directory):
        raise CliError(f"{what} directory not found: {directory}")
    out: dict[str, str] = {}
    for name in sorted(os.listdir(directory)):
        stem, ext = os.path.splitext(name)
        if ext.lower() not in _IMAGE_EXTS:
            continue
        if stem in out:
            raise CliError(f"duplicate stem {stem!r} in {directory}")
        out[stem] = os.path.join(directory, name)
    if not out:
        raise CliError(f"no image files in {what} directory: {directory}")
    return out


def _emit(text: str, out_path: str | None) -> None:
    """Write a report to --out (atomically) or print it to stdout."""
    if out_path:
        raster.atomic_write_text(out_path, text)
        print(f"wrote {out_path}")
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# extract


def _resolve_config(args: argparse.Namespace) -> ExtractionConfig:
    """Preset, then config file, then individual flag overrides."""
    cfg = ExtractionConfig()
    if args.preset:
        if args.preset not in PRESETS:
            raise CliError(
                f"unknown preset {args.preset!r}; available: {', '.join(sorted(PRESETS))}"
            )
        cfg = PRESETS[args.preset]
    if args.config:
        _require_file(args.config, "config file")
        try:
            cfg = read_config(args.config, base=cfg)
        except ValueError as exc:
            raise CliError(f"bad config file {args.config}: {exc}") from exc
    overrides: dict[str, object] = {}
    if args.widths is not None:
        overrides["widths"] = parse_widths(args.widths)
    if args.guard_widths is not None:
        overrides["guard_widths"] = parse_widths(args.guard_widths)
    if args.map_mode is not None:
        overrides["map_mode"] = args.map_mode
    if args.kind is not None:
        overrides["kind"] = args.kind
    if overrides:
        from dataclasses import replace

        cfg = replace(cfg, **overrides)
    try:
        cfg.validate()
    except ValueError as exc:
        raise CliError(f"invalid configuration: {exc}") from exc
    return cfg


def _load_probability(path: str) -> np.ndarray:
    prob = raster.load_image(path)
    if prob.ndim == 3:
        prob = prob.mean(axis=2)
    return prob


def _dump_stages(debug_dir: str, stages: dict[str, object]) -> None:
    os.makedirs(debug_dir, exist_ok=True)
    for letter, value in sorted(stages.items()):
        if isinstance(value, dict):
            for w, field in sorted(value.items()):
                raster.save_gray16(
                    os.path.join(debug_dir, f"stage_{letter}_w{w:02d}.png"), field
                )
        elif isinstance(value, np.ndarray) and value.dtype == bool:
            raster.save_mask(os.path.join(debug_dir, f"stage_{letter}.png"), value)
        else:
            raster.save_gray16(os.path.join(debug_dir, f"stage_{letter}.png"), value)


def cmd_extract(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    _require_file(args.image, "input image")
    _require_file(args.probability, "probability map")
    image = raster.load_image(args.image)
    if image.ndim != 3:
        raise CliError(f"input image must be RGB, got shape {image.shape}: {args.image}")
    prob = _load_probability(args.probability)
    region = None
    if args.sclera_mask:
        _require_file(args.sclera_mask, "sclera mask")
        region = raster.load_mask(args.sclera_mask)

    result = extract_vessels(
        image,
        prob,
        cfg,
        region_mask=region,
        keep_stages=args.debug is not None,
        jobs=args.jobs,
    )

    out_path = args.out
    if not out_path:
        stem = os.path.splitext(os.path.basename(args.image))[0]
        out_path = os.path.join(os.path.dirname(args.image) or ".", f"{stem}_vessels.png")
    final = result.transform.invert_mask(result.mask)
    raster.save_mask(out_path, final)
    if args.debug is not None:
        _dump_stages(args.debug, result.stages)
    thr = "none (constant map)" if result.threshold is None else f"{result.threshold:.6g}"
    print(f"wrote {out_path} (threshold {thr}, widths {cfg.widths})")
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args: argparse.Namespace) -> int:
    preds = _scan_images(args.pred_dir, "prediction")
    truths = _scan_images(args.truth_dir, "truth")
    missing_truth = sorted(set(preds) - set(truths))
    missing_pred = sorted(set(truths) - set(preds))
    if missing_truth or missing_pred:
        parts = []
        if missing_truth:
            parts.append(f"predictions without truth: {', '.join(missing_truth)}")
        if missing_pred:
            parts.append(f"truths without prediction: {', '.join(missing_pred)}")
        raise CliError("unmatched file stems -- " + "; ".join(parts))
    regions: dict[str, str] = {}
    if args.region_dir:
        regions = _scan_images(args.region_dir, "region")
        missing_region = sorted(set(preds) - set(regions))
        if missing_region:
            raise CliError(f"stems without a region mask: {', '.join(missing_region)}")

    rows: list[tuple[str, float, float, float]] = []
    for stem in sorted(preds):
        pred = raster.load_mask(preds[stem])
        truth = raster.load_mask(truths[stem])
        region = raster.load_mask(regions[stem]) if regions else None
        try:
            c = metrics.confusion(pred, truth, region)
            rows.append(
                (stem, metrics.accuracy(c), metrics.dsc(c), metrics.mcc(c))
            )
        except (ValueError, metrics.UndefinedMetricError) as exc:
            raise CliError(f"image {stem}: {exc}") from exc

    lines = [
        "# extraction quality vs ground truth",
        "# columns: image,accuracy,dsc,mcc",
    ]
    for stem, acc, d, m in rows:
        lines.append(f"{stem},{acc:.9g},{d:.9g},{m:.9g}")
    cols = list(zip(*[(acc, d, m) for _, acc, d, m in rows]))
    means = [statistics.fmean(col) for col in cols]
    sds = [statistics.pstdev(col) for col in cols]
    lines.append(f"# summary over {len(rows)} images (population standard deviation)")
    lines.append("mean," + ",".join(f"{v:.9g}" for v in means))
    lines.append("stddev," + ",".join(f"{v:.9g}" for v in sds))
    _emit("\n".join(lines) + "\n", args.out)
    return 0


# ---------------------------------------------------------------------------
# tortuosity


def _read_subject_map(path: str) -> dict[str, str]:
    _require_file(path, "subject map")
    mapping: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise CliError(
                    f"subject map line {lineno}: expected 'image_stem,subject', got {raw.rstrip()!r}"
                )
            if parts[0] in mapping:
                raise CliError(f"subject map line {lineno}: duplicate stem {parts[0]!r}")
            mapping[parts[0]] = parts[1]
    if not mapping:
        raise CliError(f"subject map is empty: {path}")
    return mapping


def cmd_tortuosity(args: argparse.Namespace) -> int:
    masks = _scan_images(args.mask_dir, "mask")
    out_dir = args.out_dir or args.mask_dir
    os.makedirs(out_dir, exist_ok=True)

    subject_of: dict[str, str] = {}
    if args.subject_map:
        subject_of = _read_subject_map(args.subject_map)
        unknown = sorted(set(subject_of) - set(masks))
        if unknown:
            raise CliError(f"subject map names absent mask stems: {', '.join(unknown)}")

    def analyze(stem: str):
        mask = raster.load_mask(masks[stem])
        report = analyze_mask(
            mask,
            min_len=args.min_segment_length,
            smooth_window=args.smooth_window,
        )
        write_report(
            os.path.join(out_dir, f"{stem}_tortuosity.csv"), report, image_id=stem
        )
        if args.debug is not None:
            os.makedirs(args.debug, exist_ok=True)
            skeleton = remove_branch_points(skeletonize(mask))
            raster.save_mask(
                os.path.join(args.debug, f"{stem}_stage_J.png"), skeleton
            )
        return report

    stems = sorted(masks)
    if args.jobs > 1 and len(stems) > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            reports = dict(zip(stems, pool.map(analyze, stems)))
    else:
        reports = {stem: analyze(stem) for stem in stems}

    lines = [
        "# per-image tortuosity aggregates (arc-length-weighted means)",
        "# columns: image,segments,total_length_px," + ",".join(INDEX_IDS),
    ]
    for stem in stems:
        rep = reports[stem]
        if rep.per_segment:
            vals = ",".join(f"{rep.aggregate[k]:.9g}" for k in INDEX_IDS)
            lines.append(f"{stem},{rep.segment_count},{rep.total_length:.9g},{vals}")
        else:
            lines.append(f"{stem},0,0" + "," * len(INDEX_IDS))
    agg_path = os.path.join(out_dir, "aggregates.csv")
    raster.atomic_write_text(agg_path, "\n".join(lines) + "\n")
    written = [agg_path]

    if subject_of:
        by_subject: dict[str, list[str]] = {}
        for stem, subject in subject_of.items():
            by_subject.setdefault(subject, []).append(stem)
        lines = [
            "# per-subject tortuosity: plain mean of per-image aggregates",
            "# images with zero segments contribute nothing",
            "# columns: subject,images," + ",".join(INDEX_IDS),
        ]
        for subject in sorted(by_subject):
            contributing = [
                reports[stem]
                for stem in sorted(by_subject[subject])
                if reports[stem].per_segment
            ]
            if contributing:
                vals = ",".join(
                    f"{statistics.fmean(r.aggregate[k] for r in contributing):.9g}"
                    for k in INDEX_IDS
                )
                lines.append(f"{subject},{len(contributing)},{vals}")
            else:
                lines.append(f"{subject},0" + "," * len(INDEX_IDS))
        subj_path = os.path.join(out_dir, "subjects.csv")
        raster.atomic_write_text(subj_path, "\n".join(lines) + "\n")
        written.append(subj_path)

    print(f"analyzed {len(stems)} masks -> {out_dir} ({', '.join(os.path.basename(p) for p in written)})")
    return 0


# ---------------------------------------------------------------------------
# compare


def _read_groups(path: str) -> tuple[list[str], dict[str, dict[str, list[tuple[str, float]]]]]:
    """Parse a groups file into columns and group -> index -> [(image, value)].

    Rows are ``group,image,<value per index>``.  A ``# columns:`` header may
    rename/reorder the value columns; the default is the built-in index list.
    Empty value fields (images with no segments) are skipped.
    """
    _require_file(path, "groups file")
    columns = list(INDEX_IDS)
    data: dict[str, dict[str, list[tuple[str, float]]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            stripped = raw.strip()
            if stripped.startswith("#"):
                body = stripped.lstrip("#").strip()
                if body.lower().startswith("columns:"):
                    names = [c.strip() for c in body.split(":", 1)[1].split(",") if c.strip()]
                    if len(names) < 3 or names[0] != "group" or names[1] != "image":
                        raise CliError(
                            f"groups file line {lineno}: header must start 'group,image,...'"
                        )
                    columns = names[2:]
                continue
            if not stripped:
                continue
            parts = [p.strip() for p in stripped.split(",")]
            if len(parts) != 2 + len(columns):
                raise CliError(
                    f"groups file line {lineno}: expected {2 + len(columns)} fields "
                    f"(group,image,{','.join(columns)}), got {len(parts)}"
                )
            group, image = parts[0], parts[1]
            if not group or not image:
                raise CliError(f"groups file line {lineno}: empty group or image id")
            per_index = data.setdefault(group, {c: [] for c in columns})
            for col, cell in zip(columns, parts[2:]):
                if cell == "":
                    continue
                try:
                    value = float(cell)
                except ValueError as exc:
                    raise CliError(
                        f"groups file line {lineno}: bad number {cell!r} for {col}"
                    ) from exc
                per_index[col].append((image, value))
    if not data:
        raise CliError(f"groups file has no data rows: {path}")
    return columns, data


def _compare_unpaired(
    columns: list[str], data: dict[str, dict[str, list[tuple[str, float]]]]
) -> str:
    groups = sorted(data)
    lines = [
        "# group comparison: Mann-Whitney U (two-sided, midrank ties)",
        "# u is min(U_a, U_b); p_a_less / p_a_greater are one-sided for group_a",
        "# columns: index,group_a,group_b,n_a,n_b,median_a,median_b,u,p,method,p_a_less,p_a_greater",
    ]
    for index in columns:
        samples: dict[str, list[float]] = {}
        for g in groups:
            values = [v for _, v in data[g][index]]
            if not values:
                raise CliError(f"group {g!r} has no values for index {index!r}")
            samples[g] = values
        for i, ga in enumerate(groups):
            for gb in groups[i + 1 :]:
                res = metrics.mann_whitney_u(samples[ga], samples[gb])
                med_a = statistics.median(samples[ga])
                med_b = statistics.median(samples[gb])
                lines.append(
                    f"{index},{ga},{gb},{len(samples[ga])},{len(samples[gb])},"
                    f"{med_a:.9g},{med_b:.9g},{res.u:.9g},{res.p:.9g},{res.method},"
                    f"{res.p_a_less:.9g},{res.p_a_greater:.9g}"
                )
    return "\n".join(lines) + "\n"


def _compare_paired(
    columns: list[str], data: dict[str, dict[str, list[tuple[str, float]]]]
) -> str:
    groups = sorted(data)
    if len(groups) != 2:
        raise CliError(
            f"--spearman pairs exactly 2 groups by image id, got {len(groups)}: "
            + ", ".join(groups)
        )
    ga, gb = groups
    lines = [
        f"# paired rank correlation: Spearman rho between {ga} and {gb}, matched by image id",
        "# columns: index,n,rho,p",
    ]
    for index in columns:
        a_by_image = dict(data[ga][index])
        b_by_image = dict(data[gb][index])
        common = sorted(set(a_by_image) & set(b_by_image))
        unmatched = sorted(set(a_by_image) ^ set(b_by_image))
        if unmatched:
            raise CliError(
                f"index {index!r}: image ids without a value in both groups: "
                + ", ".join(unmatched)
            )
        try:
            res = metrics.spearman_rho(
                [a_by_image[i] for i in common], [b_by_image[i] for i in common]
            )
        except (ValueError, metrics.UndefinedMetricError) as exc:
            raise CliError(f"index {index!r}: {exc}") from exc
        lines.append(f"{index},{len(common)},{res.rho:.9g},{res.p:.9g}")
    return "\n".join(lines) + "\n"


def cmd_compare(args: argparse.Namespace) -> int:
    columns, data = _read_groups(args.groups_file)
    if len(data) < 2:
        raise CliError(f"need at least 2 groups, got {len(data)}: {', '.join(sorted(data))}")
    if args.index is not None:
        if args.index not in columns:
            raise CliError(
                f"index {args.index!r} absent from reports; available: {', '.join(columns)}"
            )
        columns = [args.index]
    text = _compare_paired(columns, data) if args.spearman else _compare_unpaired(columns, data)
    _emit(text, args.out)
    return 0


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args: argparse.Namespace) -> int:
    _require_file(args.spec_file, "phantom description")
    with open(args.spec_file, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        spec = PhantomSpec.parse_json(text)
    except ValueError as exc:
        raise CliError(f"bad phantom description {args.spec_file}: {exc}") from exc
    result = render_phantom(spec)
    os.makedirs(args.out_dir, exist_ok=True)
    paths = save_phantom_outputs(result, args.out_dir)
    names = ", ".join(sorted(os.path.basename(p) for p in paths.values()))
    print(f"wrote {len(paths)} files to {args.out_dir}: {names}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vesselect",
        description="Thickness-selective blood vessel extraction and tortuosity analysis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "extract", help="extract vessels of the configured thicknesses from one image"
    )
    p.add_argument("image", help="RGB eye image (PNG/TIFF/JPEG)")
    p.add_argument("probability", help="vessel probability map (8/16-bit grayscale)")
    p.add_argument("--sclera-mask", help="binary region-of-interest mask")
    p.add_argument("--preset", help=f"named parameter set: {', '.join(sorted(PRESETS))}")
    p.add_argument("--config", help="flat key = value configuration file")
    p.add_argument("--widths", help="target thickness set, e.g. '4-8' or '3,5,8'")
    p.add_argument("--guard-widths", help="thicker set whose traces are removed")
    p.add_argument("--map-mode", choices=MAP_MODES, help="ablation: which map drives fusion")
    p.add_argument("--kind", choices=("scleral", "retinal"), help="image family")
    p.add_argument("--out", help="output mask path (default: <image>_vessels.png)")
    p.add_argument("--debug", metavar="DIR", help="dump per-stage images (letters C-I)")
    p.add_argument("--jobs", type=int, default=1, help="parallel width computations")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("eval", help="score predicted masks against ground truth")
    p.add_argument("pred_dir", help="directory of predicted masks")
    p.add_argument("truth_dir", help="directory of ground-truth masks (matched stems)")
    p.add_argument("--region-dir", help="directory of evaluation-region masks")
    p.add_argument("--out", help="write the table here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("tortuosity", help="per-image tortuosity reports from vessel masks")
    p.add_argument("mask_dir", help="directory of binary vessel masks")
    p.add_argument("--out-dir", help="report directory (default: the mask directory)")
    p.add_argument("--min-segment-length", type=int, default=10, help="segment point minimum")
    p.add_argument("--smooth-window", type=int, default=5, help="centerline smoothing window")
    p.add_argument("--subject-map", help="'image_stem,subject' lines; adds subjects.csv")
    p.add_argument("--debug", metavar="DIR", help="dump skeleton images (letter J)")
    p.add_argument("--jobs", type=int, default=1, help="images processed in parallel")
    p.set_defaults(func=cmd_tortuosity)

    p = sub.add_parser("compare", help="compare index values between groups")
    p.add_argument("groups_file", help="rows: group,image,<one value per index>")
    p.add_argument("--index", help="restrict to one index id")
    p.add_argument(
        "--spearman",
        action="store_true",
        help="paired mode: Spearman rank correlation between exactly 2 groups",
    )
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("synth", help="render a synthetic vessel phantom")
    p.add_argument("spec_file", help="phantom description (JSON)")
    p.add_argument("out_dir", help="output directory")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"vesselect {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except PipelineError as exc:
        print(f"vesselect {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"vesselect {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
