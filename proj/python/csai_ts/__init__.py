"""Conditional self-attention imputation for incomplete multivariate time series.

The heavy lifting lives in the C++ extension `csai_ts._core`; this package
re-exports its public surface.
"""

from ._core import (
    MaskPlan,
    TimeSeriesBatch,
    ValidationError,
    apply_mask_plan,
    apply_normalizer,
    audit_mask_plan,
    compute_delta,
    compute_median_gaps,
    fit_normalizer,
    generate_synthetic,
    load_table,
    plan_nonuniform_mask,
    plan_uniform_mask,
    run_cli,
    train_and_report,
)

__all__ = [
    "MaskPlan",
    "TimeSeriesBatch",
    "ValidationError",
    "apply_mask_plan",
    "apply_normalizer",
    "audit_mask_plan",
    "compute_delta",
    "compute_median_gaps",
    "fit_normalizer",
    "generate_synthetic",
    "load_table",
    "plan_nonuniform_mask",
    "plan_uniform_mask",
    "run_cli",
    "train_and_report",
]
