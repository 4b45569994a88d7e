"""Proportional hazards regression for partly interval-censored data by maximum penalized likelihood."""

from .basis import GaussianBasis, KnotSequence, MSplineBasis, basis_for_data, build_basis, quantile_knots
from .inference import covariance_from_fit, regression_summary, sandwich_covariance
from .likelihood import ModelState
from .optimizer import FitOptions, FitResult, fit
from .smoothing import SmoothingOptions, auto_fit
from .survdata import CensorKind, Dataset, load_dataset

__all__ = [
    "CensorKind", "Dataset", "load_dataset",
    "KnotSequence", "MSplineBasis", "GaussianBasis", "quantile_knots", "build_basis", "basis_for_data",
    "ModelState", "FitOptions", "FitResult", "fit",
    "sandwich_covariance", "covariance_from_fit", "regression_summary",
    "SmoothingOptions", "auto_fit",
]
