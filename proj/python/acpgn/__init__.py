"""Conformal prediction sets for neural-network regression."""

from ._core import (
    AcpGn,
    Error,
    Laplace,
    Model,
    SplitConformal,
    conformal_rank_threshold,
    full_cp_ridge_grid,
    ridge_conformal_set,
    synth_gp_outliers,
    train,
    validity_check,
)

__all__ = [
    "AcpGn",
    "Error",
    "Laplace",
    "Model",
    "SplitConformal",
    "conformal_rank_threshold",
    "full_cp_ridge_grid",
    "ridge_conformal_set",
    "synth_gp_outliers",
    "train",
    "validity_check",
]
