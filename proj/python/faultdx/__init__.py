"""Python bindings for the faultdx library."""

from ._core import (
    DataError,
    FaultdxError,
    InvalidArgument,
    NumericalError,
    compute_metrics,
    config,
    default_spec,
    encode_frames,
    estimate_flops,
    expected_improvement,
    generate_synthetic,
    image_side,
    predict,
    run_pipeline,
    run_stage,
    search,
)

__all__ = [
    "DataError",
    "FaultdxError",
    "InvalidArgument",
    "NumericalError",
    "compute_metrics",
    "config",
    "default_spec",
    "encode_frames",
    "estimate_flops",
    "expected_improvement",
    "generate_synthetic",
    "image_side",
    "predict",
    "run_pipeline",
    "run_stage",
    "search",
]
