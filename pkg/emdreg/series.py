"""
Series representation, extrema detection and cubic spline envelopes.

These are the inner kernels of every sifting iteration, both for the
univariate EMD and for the multivariate projections.
"""
import datetime
import enum
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy
from scipy.interpolate import CubicSpline

from .errors import DataError, NumericalError

logger = logging.getLogger(__name__)


class SeriesTooShort(DataError):
    pass


class NonFiniteInput(DataError):
    pass


class InsufficientExtrema(NumericalError):
    """Fewer than two knots remain for a spline: the signal is a residue."""


class EnvelopeMismatch(NumericalError):
    pass


class BoundaryPolicy(str, enum.Enum):
    """How the extrema are extended past the ends of the series before the spline fit."""

    MIRROR = "mirror"
    CLAMP = "clamp"


class PlateauRule(str, enum.Enum):
    """Where the single extremum of a flat run of equal values is placed."""

    MIDDLE = "middle"
    FIRST = "first"


@dataclass
class TimeSeries:
    """
    Uniformly sampled real valued observations.

    :param values: one value per time step
    :param dt: the sampling interval in time units (days for daily data)
    :param start_label: calendar date of the first sample, only used for
        the day-of-year aggregation of amplitudes
    :param name: the label of the series, e.g. the CSV column
    """

    values: numpy.ndarray
    dt: float = 1.0
    start_label: Optional[datetime.date] = None
    name: str = ""

    def __post_init__(self):
        self.values = numpy.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise DataError(f"A time series must be one dimensional, got shape {self.values.shape}")
        if not numpy.all(numpy.isfinite(self.values)):
            raise NonFiniteInput(f"Series '{self.name}' contains NaN or infinite values")

    def __len__(self):
        return len(self.values)


SeriesLike = Union[TimeSeries, numpy.ndarray, List[float]]


def as_array(series: SeriesLike) -> numpy.ndarray:
    if isinstance(series, TimeSeries):
        return series.values
    if hasattr(series, "values") and isinstance(getattr(series, "values"), numpy.ndarray):
        # Imf and similar containers
        return series.values
    return numpy.asarray(series, dtype=float)


@dataclass
class ExtremaSet:
    """Local maxima and minima of a series, as parallel index/value arrays."""

    max_indices: numpy.ndarray
    max_values: numpy.ndarray
    min_indices: numpy.ndarray
    min_values: numpy.ndarray

    @property
    def maxima(self) -> List[Tuple[int, float]]:
        return list(zip(self.max_indices.tolist(), self.max_values.tolist()))

    @property
    def minima(self) -> List[Tuple[int, float]]:
        return list(zip(self.min_indices.tolist(), self.min_values.tolist()))

    @property
    def count(self) -> int:
        return len(self.max_indices) + len(self.min_indices)


@dataclass
class Envelope:
    upper: numpy.ndarray
    lower: numpy.ndarray

    @property
    def amplitude(self) -> numpy.ndarray:
        """Half the envelope spread, a(t) = (u(t) - l(t)) / 2."""
        return (self.upper - self.lower) / 2.0


def find_extrema(series: SeriesLike, plateau: PlateauRule = PlateauRule.MIDDLE) -> ExtremaSet:
    """
    Find the strict local maxima and minima of a series.

    Runs of equal values (plateaus) are collapsed first, so a plateau flanked by lower
    (higher) neighbours gives a single maximum (minimum). It sits at the midpoint of the
    run, rounded down, or at its first sample with ``PlateauRule.FIRST``.
    Plateaus touching either end of the series are never extrema.
    """
    x = as_array(series)
    n = len(x)
    if n < 3:
        raise SeriesTooShort(f"Extrema need at least 3 samples, got {n}")

    # run-length encoding of the series
    starts = numpy.concatenate(([0], numpy.flatnonzero(numpy.diff(x) != 0) + 1))
    ends = numpy.concatenate((starts[1:] - 1, [n - 1]))
    run_values = x[starts]

    empty_i = numpy.array([], dtype=int)
    empty_v = numpy.array([], dtype=float)
    if len(run_values) < 3:
        return ExtremaSet(empty_i, empty_v, empty_i, empty_v)

    steps = numpy.diff(run_values)
    rising_in = steps[:-1] > 0
    falling_out = steps[1:] < 0
    # interior runs only: run i is flanked by steps[i - 1] and steps[i]
    is_max = rising_in & falling_out
    is_min = ~rising_in & ~falling_out

    if PlateauRule(plateau) == PlateauRule.FIRST:
        mid = starts[1:-1]
    else:
        mid = (starts[1:-1] + ends[1:-1]) // 2
    max_idx = mid[is_max].astype(int)
    min_idx = mid[is_min].astype(int)
    return ExtremaSet(max_idx, x[max_idx], min_idx, x[min_idx])


def _extend_knots(
    indices: numpy.ndarray,
    values: numpy.ndarray,
    series: numpy.ndarray,
    boundary: BoundaryPolicy,
    nbsym: int = 2,
) -> Tuple[numpy.ndarray, numpy.ndarray]:
    """
    Extend the knots past both ends of the series.

    Mirror reflects the first and last ``nbsym`` knots across the end samples,
    clamp pins the envelope to the end samples themselves.
    ``values`` may be (k,) or (k, p) when the knots carry a multivariate sample.
    """
    n = len(series)
    last = n - 1

    if boundary == BoundaryPolicy.MIRROR:
        left = indices[indices > 0][:nbsym]
        right = indices[indices < last][-nbsym:]
        left_vals = values[indices > 0][:nbsym]
        right_vals = values[indices < last][-nbsym:]
        new_indices = numpy.concatenate((-left[::-1], indices, 2 * last - right[::-1]))
        new_values = numpy.concatenate((left_vals[::-1], values, right_vals[::-1]))
    elif boundary == BoundaryPolicy.CLAMP:
        new_indices = indices
        new_values = values
        if len(indices) == 0 or indices[0] > 0:
            new_indices = numpy.concatenate(([0], new_indices))
            new_values = numpy.concatenate((series[:1], new_values))
        if indices[-1:].tolist() != [last]:
            new_indices = numpy.concatenate((new_indices, [last]))
            new_values = numpy.concatenate((new_values, series[-1:]))
    else:
        raise ValueError(f"Unknown boundary policy {boundary}")

    return new_indices.astype(float), new_values


def spline_envelope(
    series: SeriesLike,
    knots: Union[Tuple[numpy.ndarray, numpy.ndarray], List[Tuple[int, float]]],
    boundary: BoundaryPolicy = BoundaryPolicy.MIRROR,
) -> numpy.ndarray:
    """
    Natural cubic spline through the knots, evaluated at every sample index.

    :param series: the series the knots come from, used for its length and,
        with the clamp policy, for its end values. A 2D (n, p) array is accepted
        for multivariate envelopes.
    :param knots: either an (indices, values) pair or a list of (index, value) tuples.
        For multivariate envelopes the values are (k, p).
    :param boundary: how the knots are extended past the series ends
    :raises InsufficientExtrema: fewer than 2 knots after the boundary extension
    """
    x = series.values if isinstance(series, TimeSeries) else numpy.asarray(series, dtype=float)
    if isinstance(knots, tuple) and len(knots) == 2 and isinstance(knots[0], numpy.ndarray):
        indices = numpy.asarray(knots[0], dtype=int)
        values = numpy.asarray(knots[1], dtype=float)
    else:
        pairs = list(knots)
        indices = numpy.array([int(i) for i, _ in pairs], dtype=int)
        values = numpy.array([v for _, v in pairs], dtype=float)

    if len(indices) == 0:
        raise InsufficientExtrema("No knots to build an envelope from")

    t, v = _extend_knots(indices, values, x, BoundaryPolicy(boundary))
    if len(t) < 2:
        raise InsufficientExtrema(f"Only {len(t)} knot(s) after the boundary extension")

    spline = CubicSpline(t, v, bc_type="natural", extrapolate=True)
    return spline(numpy.arange(len(x), dtype=float))


def envelopes(
    series: SeriesLike,
    boundary: BoundaryPolicy = BoundaryPolicy.MIRROR,
    extrema: Optional[ExtremaSet] = None,
) -> Envelope:
    """Upper and lower spline envelopes through the maxima and minima of the series."""
    x = as_array(series)
    if extrema is None:
        extrema = find_extrema(x)
    upper = spline_envelope(x, (extrema.max_indices, extrema.max_values), boundary)
    lower = spline_envelope(x, (extrema.min_indices, extrema.min_values), boundary)
    return Envelope(upper=upper, lower=lower)


def envelope_mean(env: Envelope) -> numpy.ndarray:
    """The midline m(t) = (u(t) + l(t)) / 2 of the envelopes."""
    if numpy.shape(env.upper) != numpy.shape(env.lower):
        raise EnvelopeMismatch(
            f"Upper and lower envelopes differ in shape: {numpy.shape(env.upper)} vs {numpy.shape(env.lower)}"
        )
    return (env.upper + env.lower) / 2.0
