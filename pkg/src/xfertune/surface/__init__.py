from .bicubic import BicubicSurface, fit_bicubic
from .confidence import (
    DEFAULT_Z,
    ConfidenceModel,
    PointStats,
    accumulate,
    fit_confidence,
    in_band,
    merge_stats,
)
from .family import SurfaceFamily, eval_surface, family_from_grids, fit_family
from .regression import PolynomialModel, fit_regression, surface_accuracy
from .spline import Spline1D, eval_spline1d, fit_spline1d, spline_from_arrays

__all__ = [
    "BicubicSurface",
    "ConfidenceModel",
    "DEFAULT_Z",
    "PointStats",
    "PolynomialModel",
    "Spline1D",
    "SurfaceFamily",
    "accumulate",
    "eval_spline1d",
    "eval_surface",
    "family_from_grids",
    "fit_bicubic",
    "fit_confidence",
    "fit_family",
    "fit_regression",
    "fit_spline1d",
    "in_band",
    "merge_stats",
    "spline_from_arrays",
    "surface_accuracy",
]
