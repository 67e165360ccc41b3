"""One-call LHSpline estimation: bin, choose lambda, correct bias, normalize."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .binning import DEFAULT_EXTENSION, DEFAULT_N_BINS, LogHistogram, build_histogram
from .density import DensityFit, normalize
from .fit import (DEFAULT_ADJUST, LambdaSelection, PenalizedFit,
                  bootstrap_bias_correct, irls_fit, lambda_adjust, select_lambda)
from .spline import SplineModel

LAMBDA_MODES = ("cv", "adjusted", "fixed")
BIAS_MODES = ("none", "bootstrap")


@dataclass(frozen=True)
class LHSplineConfig:
    n_bins: int = DEFAULT_N_BINS
    extension_factor: float = DEFAULT_EXTENSION
    lambda_mode: str = "adjusted"
    lambda_factor: float = DEFAULT_ADJUST
    lambda_value: float | None = None
    criterion: str = "acv"
    bias: str = "none"
    B: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.lambda_mode not in LAMBDA_MODES:
            raise ValueError(f"lambda_mode must be one of {LAMBDA_MODES}")
        if self.bias not in BIAS_MODES:
            raise ValueError(f"bias must be one of {BIAS_MODES}")
        if self.lambda_mode == "fixed" and not (self.lambda_value or 0) > 0:
            raise ValueError("fixed lambda mode needs a positive lambda_value")
        if self.lambda_mode == "adjusted" and not 0 < self.lambda_factor <= 1:
            raise ValueError("lambda_factor must lie in (0, 1]")


@dataclass(frozen=True)
class LHSplineResult:
    hist: LogHistogram = field(repr=False)
    selection: LambdaSelection | None = field(repr=False)
    penalized: PenalizedFit = field(repr=False)
    spline: SplineModel = field(repr=False)
    density: DensityFit = field(repr=False)
    config: LHSplineConfig

    @property
    def lam(self) -> float:
        return self.penalized.lam


def fit_lhspline(amounts, config: LHSplineConfig | None = None,
                 support_low: float = 0.0, rate: float = 1.0) -> LHSplineResult:
    """Fit an LHSpline density to positive ``amounts``.

    ``support_low`` is a truncation bound (amounts must exceed it) and
    ``rate`` the share of all observation days that the amounts represent,
    used to turn return periods in years into per-observation probabilities.
    """
    config = config or LHSplineConfig()
    hist = build_histogram(np.asarray(amounts, dtype=float), n_bins=config.n_bins,
                           extension_factor=config.extension_factor,
                           censor_bound=support_low)
    selection = None
    if config.lambda_mode == "fixed":
        pen = irls_fit(hist, config.lambda_value)
    else:
        selection = select_lambda(hist, criterion=config.criterion)
        factor = config.lambda_factor if config.lambda_mode == "adjusted" else 1.0
        pen = lambda_adjust(selection, factor)
    spline = pen.spline
    if config.bias == "bootstrap":
        spline = bootstrap_bias_correct(pen, B=config.B, seed=config.seed)
    density = normalize(spline, hist, wet_fraction=rate)
    return LHSplineResult(hist=hist, selection=selection, penalized=pen,
                          spline=spline, density=density, config=config)
