from pathlib import Path

from .config import Design, RunConfig
from .emd import (
    Decomposition,
    Imf,
    SiftParams,
    amplitude_by_day_of_year,
    emd_decompose,
    instantaneous_amplitude,
    mean_period,
    peak_to_peak_amplitude,
)
from .emdr import (
    EmdrModel,
    block_bootstrap,
    diagnostics,
    fit_emdr1,
    fit_emdr2,
    predict_r1,
    predict_r2,
    select_lag,
    sensitivities,
)
from .errors import ConfigError, DataError, EmdRegError, NumericalError
from .lasso import (
    CvScheme,
    DesignMatrix,
    cross_validate,
    gcv,
    lambda_path,
    lasso_coordinate_descent,
    r_squared,
    standardize,
)
from .memd import (
    MultichannelSeries,
    NoiseConfig,
    generate_directions,
    memd_decompose,
    na_memd_decompose,
)
from .series import BoundaryPolicy, PlateauRule, TimeSeries, envelope_mean, find_extrema, spline_envelope

# get the version
__version__ = open(Path(__file__).parent / "version.txt").read().strip()

__all__ = [
    "TimeSeries",
    "BoundaryPolicy",
    "PlateauRule",
    "find_extrema",
    "spline_envelope",
    "envelope_mean",
    "SiftParams",
    "Imf",
    "Decomposition",
    "emd_decompose",
    "mean_period",
    "peak_to_peak_amplitude",
    "instantaneous_amplitude",
    "amplitude_by_day_of_year",
    "MultichannelSeries",
    "NoiseConfig",
    "generate_directions",
    "memd_decompose",
    "na_memd_decompose",
    "DesignMatrix",
    "CvScheme",
    "standardize",
    "lasso_coordinate_descent",
    "lambda_path",
    "cross_validate",
    "r_squared",
    "gcv",
    "EmdrModel",
    "select_lag",
    "fit_emdr1",
    "fit_emdr2",
    "predict_r1",
    "predict_r2",
    "sensitivities",
    "diagnostics",
    "block_bootstrap",
    "RunConfig",
    "Design",
    "EmdRegError",
    "ConfigError",
    "DataError",
    "NumericalError",
    "__version__",
]
