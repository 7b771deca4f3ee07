"""Skewed tensor-variate distributions: densities, sampling, moments and ECM fitting."""

from .distributions import (
    FamilyParams,
    LatentMoments,
    SecondMoments,
    char_fn,
    conditional_w,
    latent_moments,
    log_density,
    log_joint,
    mean_tensor,
    sample,
    second_moments,
)
from .ecm import FitConfig, FitResult, ScaleUpdate, bic, count_free_params, fit
from .family import Family
from .tensor import ScaleSet

__all__ = [
    "Family",
    "FamilyParams",
    "FitConfig",
    "FitResult",
    "LatentMoments",
    "ScaleSet",
    "ScaleUpdate",
    "SecondMoments",
    "bic",
    "char_fn",
    "conditional_w",
    "count_free_params",
    "fit",
    "latent_moments",
    "log_density",
    "log_joint",
    "mean_tensor",
    "sample",
    "second_moments",
]
