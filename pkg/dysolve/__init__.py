__version__ = "0.1.0"

from . import oracle, weighting  # noqa: E402
from .control import (  # noqa: E402
    GateTarget,
    GradientReport,
    GrapeSettings,
    OptimizationTrace,
    fidelity,
    fidelity_gradient,
    flat_pulse_fidelity,
    grape_optimize,
    local_z_corrected_fidelity,
    named_gate,
)
from .core import DriveChannel, SystemModel, frobenius_distance, validate_system  # noqa: E402
from .dyson import (  # noqa: E402
    DysonCache,
    FrequencyAssignment,
    build_dyson_operator,
    cumulative_vector,
    load_cache,
    plus_count,
    prepare,
    save_cache,
)
from .exception import NumericException, ValidateException, VerificationException  # noqa: E402
from .models import (  # noqa: E402
    BenchmarkEnsembleSpec,
    CoupledSpec,
    TransmonSpec,
    build_benchmark_ensemble,
    build_cross_resonance,
    build_transmon,
    calibrate_transmon,
    detuning_sweep_models,
)
from .propagate import (  # noqa: E402
    PropagatorResult,
    coefficient,
    propagate,
    propagator_derivative,
    step_unitaries,
    total_propagator,
)
from .pulses import Interpolation, PulseSpec, SubpixelSequence, filter_matrix, subpixel_amplitudes  # noqa: E402
from .weighting import weight, weight_derivative  # noqa: E402

__all__ = (
    "oracle",
    "weighting",
    "SystemModel",
    "DriveChannel",
    "validate_system",
    "frobenius_distance",
    "ValidateException",
    "NumericException",
    "VerificationException",
    "weight",
    "weight_derivative",
    "PulseSpec",
    "SubpixelSequence",
    "Interpolation",
    "filter_matrix",
    "subpixel_amplitudes",
    "FrequencyAssignment",
    "DysonCache",
    "cumulative_vector",
    "plus_count",
    "build_dyson_operator",
    "prepare",
    "save_cache",
    "load_cache",
    "PropagatorResult",
    "coefficient",
    "step_unitaries",
    "total_propagator",
    "propagate",
    "propagator_derivative",
    "GateTarget",
    "GradientReport",
    "GrapeSettings",
    "OptimizationTrace",
    "named_gate",
    "fidelity",
    "fidelity_gradient",
    "grape_optimize",
    "local_z_corrected_fidelity",
    "flat_pulse_fidelity",
    "TransmonSpec",
    "CoupledSpec",
    "BenchmarkEnsembleSpec",
    "build_transmon",
    "calibrate_transmon",
    "build_cross_resonance",
    "build_benchmark_ensemble",
    "detuning_sweep_models",
)
