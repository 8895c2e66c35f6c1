"""Bayesian reconstruction of ODE state paths and parameters from noisy measurements."""

from ._core import (
    ConfigError,
    DivergenceError,
    Error,
    Model,
    PathSpec,
    check_config,
    duffing,
    fit,
    fourier_path,
    model_from_config,
    mse_metric,
    quantile,
    rbf_path,
    reparam_fourier_path,
    residual_path,
    run,
    summarize,
    two_dof,
)

__all__ = [
    "ConfigError",
    "DivergenceError",
    "Error",
    "Model",
    "PathSpec",
    "check_config",
    "duffing",
    "fit",
    "fourier_path",
    "model_from_config",
    "mse_metric",
    "quantile",
    "rbf_path",
    "reparam_fourier_path",
    "residual_path",
    "run",
    "summarize",
    "two_dof",
]
