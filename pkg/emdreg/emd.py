"""
Univariate empirical mode decomposition by sifting, and the descriptive
statistics of the resulting intrinsic mode functions.
"""
import datetime
import functools
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy
import pandas
from scipy.signal import hilbert

from .errors import ConfigError, DataError, NumericalError
from .series import (
    BoundaryPolicy,
    Envelope,
    InsufficientExtrema,
    NonFiniteInput,
    PlateauRule,
    SeriesLike,
    SeriesTooShort,
    TimeSeries,
    as_array,
    envelope_mean,
    envelopes,
    find_extrema,
)

logger = logging.getLogger(__name__)

# samples with a smaller envelope half-spread are ignored by the stopping test
_AMPLITUDE_FLOOR = 1e-12
_IMF_GUARD = 64
_FLAT_RATIO = 1e-10


class TooFewPeaks(NumericalError):
    pass


class TooFewExtrema(NumericalError):
    pass


class MissingDateLabel(DataError):
    pass


@dataclass
class SiftParams:
    """
    Parameters of the sifting process.

    The stopping rule is the two-threshold rule of Rilling, Flandrin and Goncalves,
    see :func:`rilling_stop`.

    :param theta1: threshold on the mode amplitude ratio that most samples must satisfy
    :param theta2: threshold every sample must satisfy
    :param alpha: tolerated fraction of samples above theta1
    :param max_sift_iters: sift iterations before the current prototype is accepted
    :param max_imfs: cap on the number of IMFs, None runs until the residue criterion
    :param boundary: the end treatment of the spline envelopes
    :param plateau: where the extremum of a flat run is placed
    """

    theta1: float = 0.05
    theta2: float = 0.5
    alpha: float = 0.05
    max_sift_iters: int = 200
    max_imfs: Optional[int] = None
    boundary: BoundaryPolicy = BoundaryPolicy.MIRROR
    plateau: PlateauRule = PlateauRule.MIDDLE

    def __post_init__(self):
        if not 0 < self.theta1 < self.theta2:
            raise ConfigError(f"Need 0 < theta1 < theta2, got theta1={self.theta1} theta2={self.theta2}")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"Need 0 < alpha < 1, got {self.alpha}")
        if self.max_sift_iters < 1:
            raise ConfigError("max_sift_iters has to be positive")
        if self.max_imfs is not None and self.max_imfs < 1:
            raise ConfigError("max_imfs has to be positive or None")
        self.boundary = BoundaryPolicy(self.boundary)
        self.plateau = PlateauRule(self.plateau)


@dataclass
class Imf:
    """
    One intrinsic mode function C_k(t).

    :param order: k >= 1, the fastest mode has order 1
    """

    values: numpy.ndarray
    order: int
    dt: float = 1.0
    start_label: Optional[datetime.date] = None

    def __len__(self):
        return len(self.values)

    @functools.cached_property
    def mean_period(self) -> float:
        return mean_period(self)


@dataclass
class Decomposition:
    """Ordered IMFs (fastest first) and the residue of one channel."""

    imfs: List[Imf]
    residue: numpy.ndarray
    source_len: int
    name: str = ""
    sift_counts: List[int] = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.imfs)

    def reconstruct(self) -> numpy.ndarray:
        total = numpy.zeros(self.source_len)
        for imf in self.imfs:
            total = total + imf.values
        return total + self.residue

    def mean_periods(self) -> List[float]:
        """Mean period of every IMF, NaN for those with fewer than two peaks."""
        periods = []
        for imf in self.imfs:
            try:
                periods.append(imf.mean_period)
            except TooFewPeaks:
                periods.append(float("nan"))
        return periods

    def to_frame(self) -> pandas.DataFrame:
        """Columns imf_1 ... imf_K and residue, one row per sample."""
        data = {f"imf_{imf.order}": imf.values for imf in self.imfs}
        data["residue"] = self.residue
        return pandas.DataFrame(data)


def _check_input(x: numpy.ndarray, minimum: int):
    if len(x) < minimum:
        raise SeriesTooShort(f"Decomposition needs at least {minimum} samples, got {len(x)}")
    if not numpy.all(numpy.isfinite(x)):
        raise NonFiniteInput("Cannot decompose a series with NaN or infinite values")


def sifting_converged(mode_norm: numpy.ndarray, amplitude: numpy.ndarray, params: SiftParams) -> bool:
    """
    The two-threshold test on sigma(t) = |m(t)| / a(t).

    True when sigma < theta1 on at least a (1 - alpha) fraction of the samples and
    sigma < theta2 everywhere. Samples with a(t) below 1e-12 take part in neither test.

    :raises InsufficientExtrema: no sample reaches the amplitude floor, the prototype
        is flat and belongs to the residue
    """
    valid = amplitude >= _AMPLITUDE_FLOOR
    if not numpy.any(valid):
        raise InsufficientExtrema("The envelope spread is below the amplitude floor everywhere")
    sigma = mode_norm[valid] / amplitude[valid]
    return bool(numpy.mean(sigma < params.theta1) >= 1 - params.alpha and numpy.all(sigma < params.theta2))


def rilling_stop(h: SeriesLike, envelope: Envelope, params: SiftParams) -> bool:
    """
    Decide whether the prototype h is an IMF.

    :param h: the current prototype, the envelope must come from its extrema
    :param envelope: the upper and lower envelopes of h
    :raises InsufficientExtrema: see :func:`sifting_converged`
    """
    m = envelope_mean(envelope)
    return sifting_converged(numpy.abs(m), envelope.amplitude, params)


def sift_once(
    h: SeriesLike,
    boundary: BoundaryPolicy = BoundaryPolicy.MIRROR,
    plateau: PlateauRule = PlateauRule.MIDDLE,
) -> Tuple[numpy.ndarray, numpy.ndarray]:
    """
    Subtract the envelope midline from h.

    :returns: (h - m, m)
    :raises InsufficientExtrema: h has fewer than 2 maxima or fewer than 2 minima
    """
    h = as_array(h)
    extrema = find_extrema(h, plateau)
    if len(extrema.max_indices) < 2 or len(extrema.min_indices) < 2:
        raise InsufficientExtrema(
            f"Cannot sift with {len(extrema.max_indices)} maxima and {len(extrema.min_indices)} minima"
        )
    m = envelope_mean(envelopes(h, boundary, extrema))
    return h - m, m


def residue_is_flat(residue: numpy.ndarray, span: float) -> bool:
    """
    Whether the peak-to-peak range of the residue is below 1e-10 of ``span``, the input range.
    For an (n, p) residue every channel has to be flat.
    """
    return bool(numpy.max(numpy.ptp(residue, axis=0)) <= _FLAT_RATIO * span)


def _extract_imf(residue: numpy.ndarray, params: SiftParams) -> Tuple[numpy.ndarray, int]:
    """
    Sift one IMF out of the residue.

    :raises InsufficientExtrema: the residue itself is flat, nothing is left to extract
    """
    h = residue.copy()
    for iteration in range(params.max_sift_iters):
        extrema = find_extrema(h, params.plateau)
        if len(extrema.max_indices) == 0 or len(extrema.min_indices) == 0:
            logger.debug(f"Prototype lost its extrema after {iteration} sifts, accepting it")
            return h, iteration
        env = envelopes(h, params.boundary, extrema)
        try:
            if rilling_stop(h, env, params):
                return h, iteration
        except InsufficientExtrema:
            if iteration == 0:
                raise
            logger.debug(f"Prototype went flat after {iteration} sifts, accepting it")
            return h, iteration
        h = h - envelope_mean(env)

    logger.warning(f"Sifting did not converge in {params.max_sift_iters} iterations, accepting the prototype")
    return h, params.max_sift_iters


def emd_decompose(series: SeriesLike, params: Optional[SiftParams] = None) -> Decomposition:
    """
    Decompose a series into IMFs and a residue, x = sum_k C_k + r.

    Extraction stops once the residue has fewer than 2 interior extrema or
    ``params.max_imfs`` IMFs were extracted. A residue whose peak-to-peak range is
    below 1e-10 of the input range is flat up to rounding and is not sifted further,
    whatever extrema the rounding noise shows.
    """
    if params is None:
        params = SiftParams()
    x = as_array(series).astype(float)
    _check_input(x, 8)
    dt = series.dt if isinstance(series, TimeSeries) else 1.0
    start = series.start_label if isinstance(series, TimeSeries) else None
    name = series.name if isinstance(series, TimeSeries) else ""

    span = numpy.ptp(x)
    residue = x.copy()
    imfs = []
    sift_counts = []
    while params.max_imfs is None or len(imfs) < params.max_imfs:
        if find_extrema(residue, params.plateau).count < 2:
            break
        if residue_is_flat(residue, span):
            logger.info("Residue is flat up to rounding relative to the input, stopping")
            break
        if len(imfs) >= _IMF_GUARD:
            logger.warning(f"Stopped after {_IMF_GUARD} IMFs, the residue still oscillates")
            break

        try:
            h, sifts = _extract_imf(residue, params)
        except InsufficientExtrema:
            logger.info("Residue has no envelope spread left, stopping")
            break
        imfs.append(Imf(values=h, order=len(imfs) + 1, dt=dt, start_label=start))
        sift_counts.append(sifts)
        residue = residue - h

    extrema_left = find_extrema(residue).count
    if extrema_left == 1:
        logger.info("Residue keeps a single extremum, it is treated as the trend")

    decomposition = Decomposition(imfs=imfs, residue=residue, source_len=len(x), name=name, sift_counts=sift_counts)
    logger.info(f"EMD of '{name}' extracted {decomposition.K} IMFs")
    audit_imfs(decomposition)
    return decomposition


def zero_crossings(values: SeriesLike) -> int:
    x = as_array(values)
    signs = numpy.sign(x)
    signs = signs[signs != 0]
    return int(numpy.count_nonzero(numpy.diff(signs)))


def is_imf(values: SeriesLike, slack: int = 1) -> bool:
    """
    Check the defining properties of an IMF: the numbers of extrema and zero crossings
    differ by at most ``slack`` (one in the classical definition), and the mean lies
    within 10% of one mean peak-to-peak amplitude of zero.
    """
    x = as_array(values)
    extrema = find_extrema(x)
    if abs(extrema.count - zero_crossings(x)) > slack:
        return False
    try:
        amplitude = peak_to_peak_amplitude(x)
    except TooFewExtrema:
        return False
    return abs(numpy.mean(x)) <= 0.1 * amplitude


def ordering_inversions(decomposition: Decomposition) -> int:
    """Number of adjacent IMF pairs whose mean periods decrease with the order."""
    periods = numpy.array(decomposition.mean_periods())
    known = periods[~numpy.isnan(periods)]
    return int(numpy.count_nonzero(numpy.diff(known) < 0))


def _count_slack(imf: Imf, relative_slack: float) -> int:
    return max(1, math.ceil(relative_slack * find_extrema(imf.values).count))


def audit_imfs(decomposition: Decomposition, relative_slack: float = 0.0) -> List[int]:
    """
    Log the IMFs violating the IMF properties or the frequency ordering.

    :param relative_slack: tolerated mismatch between the extrema and zero crossing counts
        as a fraction of the extrema count, never less than one. Multivariate IMFs only
        satisfy the count property approximately, since their envelopes come from
        projections and not from the channel's own extrema.
    :returns: the orders of the IMFs failing :func:`is_imf`
    """
    failing = [
        imf.order
        for imf in decomposition.imfs
        if len(imf) >= 3 and not is_imf(imf, slack=_count_slack(imf, relative_slack))
    ]
    if decomposition.K and len(failing) > 0.01 * decomposition.K:
        logger.warning(f"'{decomposition.name}': IMFs {failing} do not satisfy the IMF properties")

    inversions = ordering_inversions(decomposition)
    if inversions > 1:
        logger.warning(f"'{decomposition.name}': {inversions} mean period inversions between adjacent IMFs")
    return failing


def mean_period(imf: SeriesLike) -> float:
    """Mean spacing between successive maxima, in time units."""
    x = as_array(imf)
    dt = getattr(imf, "dt", 1.0)
    maxima = find_extrema(x).max_indices
    if len(maxima) < 2:
        raise TooFewPeaks(f"The mean period needs at least 2 maxima, found {len(maxima)}")
    return float(numpy.mean(numpy.diff(maxima))) * dt


def peak_to_peak_amplitude(imf: SeriesLike) -> float:
    """Mean absolute difference between adjacent extrema taken in index order."""
    extrema = find_extrema(as_array(imf))
    if len(extrema.max_indices) == 0 or len(extrema.min_indices) == 0:
        raise TooFewExtrema("The peak-to-peak amplitude needs at least one maximum and one minimum")

    indices = numpy.concatenate((extrema.max_indices, extrema.min_indices))
    values = numpy.concatenate((extrema.max_values, extrema.min_values))
    ordered = values[numpy.argsort(indices, kind="stable")]
    return float(numpy.mean(numpy.abs(numpy.diff(ordered))))


def instantaneous_amplitude(imf: SeriesLike) -> numpy.ndarray:
    """
    Modulus of the analytic signal, the Hilbert transform taken in the frequency domain.

    No tapering is applied: expect edge effects over the first and last few percent of the samples.
    """
    x = as_array(imf)
    if len(x) < 8:
        raise SeriesTooShort(f"The instantaneous amplitude needs at least 8 samples, got {len(x)}")
    return numpy.abs(hilbert(x))


def amplitude_by_day_of_year(imf: SeriesLike, start_label: Optional[datetime.date] = None) -> numpy.ndarray:
    """
    Mean instantaneous amplitude per calendar day of the year.

    :returns: 366 entries, entry d - 1 is the mean over the samples falling on day d.
        Days without samples are NaN.
    """
    if start_label is None:
        start_label = getattr(imf, "start_label", None)
    if start_label is None:
        raise MissingDateLabel("The day-of-year profile needs the date of the first sample")

    amplitude = instantaneous_amplitude(imf)
    if len(amplitude) < 365:
        raise SeriesTooShort(f"The day-of-year profile needs at least one year of data, got {len(amplitude)} days")

    days = pandas.date_range(start=pandas.Timestamp(start_label), periods=len(amplitude), freq="D").dayofyear
    profile = pandas.Series(amplitude).groupby(numpy.asarray(days)).mean()
    return profile.reindex(range(1, 367)).to_numpy(dtype=float)
