"""vesselect: thickness-selective blood vessel extraction and tortuosity.

Extracts blood vessels of user-chosen pixel thicknesses from scleral and
retinal images by fusing a redness-driven and a structure-driven multi-scale
tubular enhancement, then measures vascular tortuosity on the extracted
centerlines and compares index distributions between cohorts.

Layout:
    scalespace  Gaussian derivative kernels, Hessians, width-to-scale rule
    frangi      tubular vesselness from Hessian eigenvalues
    raster      image I/O, resizing, CLAHE, channel ops
    vesselmaps  redness / structural / combined per-width maps and fusion
    maskops     binarization, morphology, components, the full pipeline
    tortuosity  skeletons, segment tracing, curvature-based indices
    metrics     Acc/DSC/MCC and rank statistics
    phantom     synthetic vessel scenes with exact ground truth
    config      parameter sets, presets, flat config file format
    cli         command-line interface (``vesselect`` entry point)
"""

from .config import PRESETS, ExtractionConfig, parse_config, read_config, serialize_config
from .frangi import FrangiParams, frangi_response
from .maskops import ExtractionResult, PipelineError, extract_vessels
from .metrics import (
    CohortSample,
    ConfusionCounts,
    UndefinedMetricError,
    accuracy,
    confusion,
    dsc,
    mann_whitney_u,
    mcc,
    spearman_rho,
)
from .phantom import PhantomSpec, TubeSpec, render_phantom
from .scalespace import scale_constant, width_to_scale
from .tortuosity import (
    INDEX_IDS,
    TortuosityReport,
    VesselSegment,
    analyze_mask,
    index_suite,
    remove_branch_points,
    skeletonize,
    trace_segments,
    write_report,
)
from .vesselmaps import GammaParams, build_fused_map, width_map

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "ExtractionConfig",
    "PRESETS",
    "parse_config",
    "read_config",
    "serialize_config",
    "FrangiParams",
    "frangi_response",
    "ExtractionResult",
    "PipelineError",
    "extract_vessels",
    "CohortSample",
    "ConfusionCounts",
    "UndefinedMetricError",
    "accuracy",
    "confusion",
    "dsc",
    "mcc",
    "mann_whitney_u",
    "spearman_rho",
    "PhantomSpec",
    "TubeSpec",
    "render_phantom",
    "scale_constant",
    "width_to_scale",
    "INDEX_IDS",
    "TortuosityReport",
    "VesselSegment",
    "analyze_mask",
    "index_suite",
    "remove_branch_points",
    "skeletonize",
    "trace_segments",
    "write_report",
    "GammaParams",
    "build_fused_map",
    "width_map",
]
