"""Python bindings for the ectwin capacitance tomography toolkit."""

from ._ectwin import (
    Error,
    NumericalError,
    PreconditionError,
    ValidationError,
    FlowConditions,
    FluidProperties,
    SensitivityMatrix,
    SensorGeometry,
    VoxelGrid,
    add_noise,
    build_grid,
    calibration_frames,
    compute_sensitivity,
    electrode_pairs,
    landweber,
    lbp,
    lbp_raw,
    lvc_series,
    measure_frame,
    metrics,
    mixture_properties,
    normalize_frame,
    phase_to_permittivity,
    read_sample,
    read_sensitivity,
    read_volume,
    run_cli,
    sample_conditions,
    simulate_flow,
    uniform_permittivity,
    validate_dataset,
    write_volume,
)

__all__ = [
    "Error",
    "NumericalError",
    "PreconditionError",
    "ValidationError",
    "FlowConditions",
    "FluidProperties",
    "SensitivityMatrix",
    "SensorGeometry",
    "VoxelGrid",
    "add_noise",
    "build_grid",
    "calibration_frames",
    "compute_sensitivity",
    "electrode_pairs",
    "landweber",
    "lbp",
    "lbp_raw",
    "lvc_series",
    "measure_frame",
    "metrics",
    "mixture_properties",
    "normalize_frame",
    "phase_to_permittivity",
    "read_sample",
    "read_sensitivity",
    "read_volume",
    "run_cli",
    "sample_conditions",
    "simulate_flow",
    "uniform_permittivity",
    "validate_dataset",
    "write_volume",
]
