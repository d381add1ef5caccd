"""Compressive raster-scan video acquisition and low-rank recovery.

Blur-and-line-subsample forward model, nuclear-norm matrix-completion
solver, synthetic fluorescence phantom, and evaluation/theory tooling.
"""

from .analysis import (
    CorrelationReport,
    PhaseDiagramResult,
    TraceSet,
    coherence_mu_b,
    median_filter_3d,
    pals_traces,
    phase_diagram,
    psnr,
    read_traces_csv,
    theorem_bounds,
    trace_correlations,
    write_phase_csv,
    write_traces_csv,
)
from .backend import backend_name, set_backend
from .core import (
    FrameGrid,
    MeasurementSet,
    SamplingPlan,
    SamplingStrategy,
    VideoMatrix,
    frame_to_vector,
    read_container,
    vector_to_frame,
    write_container,
)
from .errors import (
    CapacityError,
    ConfigError,
    DivergenceError,
    FormatError,
    InfeasibleEpsilonError,
    NoraError,
    NumericalError,
    ShapeError,
)
from .operators import (
    ForwardModel,
    Psf,
    adjoint_apply,
    blur_frame,
    correlate_frame,
    delta_psf,
    estimate_operator_norm,
    forward_apply,
    gaussian_psf_px,
    generate_plan,
    make_gaussian_psf,
)
from .phantom import (
    ActivityModel,
    MotionModel,
    NoiseModel,
    Scene,
    apply_motion,
    apply_noise,
    ellipse_footprint,
    gen_background,
    gen_scene,
    gen_traces,
    matrix_to_scene,
    noise_for_snr,
    render_clean,
    scene_to_matrix,
    trace_kernel,
)
from .solver import (
    EPSILON_PRESETS,
    SolveReport,
    SolverConfig,
    nuclear_norm,
    partial_svd,
    preset_epsilon,
    scale_epsilon,
    solve,
    solve_batched,
    solve_constrained,
    solve_lagrangian,
    svt,
)

__version__ = "0.1.0"

__all__ = [
    "ActivityModel",
    "CapacityError",
    "ConfigError",
    "CorrelationReport",
    "DivergenceError",
    "EPSILON_PRESETS",
    "FormatError",
    "ForwardModel",
    "FrameGrid",
    "InfeasibleEpsilonError",
    "MeasurementSet",
    "MotionModel",
    "NoiseModel",
    "NoraError",
    "NumericalError",
    "PhaseDiagramResult",
    "Psf",
    "SamplingPlan",
    "SamplingStrategy",
    "Scene",
    "ShapeError",
    "SolveReport",
    "SolverConfig",
    "TraceSet",
    "VideoMatrix",
    "adjoint_apply",
    "apply_motion",
    "apply_noise",
    "backend_name",
    "blur_frame",
    "coherence_mu_b",
    "correlate_frame",
    "delta_psf",
    "ellipse_footprint",
    "estimate_operator_norm",
    "forward_apply",
    "frame_to_vector",
    "gaussian_psf_px",
    "gen_background",
    "gen_scene",
    "gen_traces",
    "generate_plan",
    "make_gaussian_psf",
    "matrix_to_scene",
    "median_filter_3d",
    "noise_for_snr",
    "nuclear_norm",
    "pals_traces",
    "partial_svd",
    "phase_diagram",
    "preset_epsilon",
    "psnr",
    "read_container",
    "read_traces_csv",
    "render_clean",
    "scale_epsilon",
    "scene_to_matrix",
    "set_backend",
    "solve",
    "solve_batched",
    "solve_constrained",
    "solve_lagrangian",
    "svt",
    "theorem_bounds",
    "trace_correlations",
    "trace_kernel",
    "vector_to_frame",
    "write_container",
    "write_phase_csv",
    "write_traces_csv",
]
