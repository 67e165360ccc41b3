"""Log-histospline density estimation for heavy-tailed positive data."""
from .binning import LogHistogram, build_histogram
from .density import DensityFit, normalize
from .errors import DataError, NumericalError
from .evt import EvtFit, GammaPrior, egpd1_fit, gamma_fit, gev_fit, gpd_fit
from .fit import (LambdaSelection, PenalizedFit, bootstrap_bias_correct, irls_fit,
                  lambda_adjust, select_lambda)
from .ingest import IngestConfig, PrecipSeries, parse_daily_csv, wet_subsample
from .kernels import BACKEND
from .pipeline import LHSplineConfig, LHSplineResult, fit_lhspline
from .spline import SplineModel, penalty_matrix
from .uncertainty import PosteriorEnsemble, conditional_simulate, interval

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "DataError", "DensityFit", "EvtFit", "GammaPrior", "IngestConfig",
    "LHSplineConfig", "LHSplineResult", "LambdaSelection", "LogHistogram",
    "NumericalError", "PenalizedFit", "PosteriorEnsemble", "PrecipSeries",
    "SplineModel", "bootstrap_bias_correct", "build_histogram",
    "conditional_simulate", "egpd1_fit", "fit_lhspline", "gamma_fit", "gev_fit",
    "gpd_fit", "interval", "irls_fit", "lambda_adjust", "normalize",
    "parse_daily_csv", "penalty_matrix", "select_lambda", "wet_subsample",
]
