"""
Multivariate EMD through projections on direction vectors of the hypersphere, and
its noise-assisted variant.

The multivariate envelope of a p-variate signal is the average over many
directions of the spline envelopes threaded through the samples where the scalar
projection of the signal on that direction peaks. Sifting with this envelope
gives every channel the same number of IMFs (mode alignment).
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy
from scipy.stats import norm

from .emd import Decomposition, Imf, SiftParams, audit_imfs, residue_is_flat, sifting_converged
from .errors import ConfigError, DataError
from .series import (
    BoundaryPolicy,
    InsufficientExtrema,
    NonFiniteInput,
    PlateauRule,
    SeriesTooShort,
    TimeSeries,
    find_extrema,
    spline_envelope,
)

logger = logging.getLogger(__name__)

# tolerated extrema / zero crossing mismatch of a channel IMF, as a fraction of its extrema
MULTICHANNEL_COUNT_SLACK = 0.02


class BadDimension(ConfigError):
    pass


class ChannelLengthMismatch(DataError):
    pass


@dataclass
class MultichannelSeries:
    """
    Equally long, jointly sampled channels.

    A single channel is accepted so that it can be combined with noise channels;
    the multivariate sifting itself needs at least two.
    """

    channels: List[TimeSeries]

    def __post_init__(self):
        if len(self.channels) == 0:
            raise BadDimension("A multichannel series needs at least one channel")
        lengths = {len(channel) for channel in self.channels}
        if len(lengths) != 1:
            raise ChannelLengthMismatch(f"Channels have different lengths: {sorted(lengths)}")
        names = self.names
        if len(set(names)) != len(names):
            raise DataError(f"Channel names have to be unique, got {names}")

    @classmethod
    def from_arrays(cls, arrays: Dict[str, numpy.ndarray], **kwargs) -> "MultichannelSeries":
        return cls([TimeSeries(values, name=name, **kwargs) for name, values in arrays.items()])

    @property
    def names(self) -> List[str]:
        return [channel.name or f"x{i}" for i, channel in enumerate(self.channels)]

    @property
    def p(self) -> int:
        return len(self.channels)

    def __len__(self):
        return len(self.channels[0])

    def as_matrix(self) -> numpy.ndarray:
        """Samples as an (n, p) array."""
        return numpy.column_stack([channel.values for channel in self.channels])


@dataclass
class DirectionSet:
    vectors: numpy.ndarray

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def p(self) -> int:
        return self.vectors.shape[1]


@dataclass
class NoiseConfig:
    """
    White noise channels appended for the noise-assisted decomposition.

    :param variance_ratio: noise variance relative to the mean variance of the data channels
    """

    n_noise: int = 2
    variance_ratio: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if self.n_noise < 1:
            raise ConfigError("The noise-assisted decomposition needs at least one noise channel")
        if not 0 < self.variance_ratio < 1:
            raise ConfigError(f"The noise variance ratio has to be in (0, 1), got {self.variance_ratio}")


@dataclass
class MultivariateDecomposition:
    """Mode-aligned decompositions, one per channel, sharing the IMF count K."""

    per_channel: Dict[str, Decomposition]
    sift_counts: List[int] = field(default_factory=list)

    @property
    def K(self) -> int:
        return next(iter(self.per_channel.values())).K

    @property
    def names(self) -> List[str]:
        return list(self.per_channel)

    def __getitem__(self, name: str) -> Decomposition:
        return self.per_channel[name]


def _primes(count: int) -> List[int]:
    primes = []
    candidate = 2
    while len(primes) < count:
        if all(candidate % prime for prime in primes):
            primes.append(candidate)
        candidate += 1
    return primes


def _radical_inverse(indices: numpy.ndarray, base: int) -> numpy.ndarray:
    """Van der Corput radical inverse of every index in the given base."""
    remaining = indices.astype(numpy.int64).copy()
    result = numpy.zeros(len(indices))
    factor = 1.0 / base
    while numpy.any(remaining > 0):
        result += (remaining % base) * factor
        remaining //= base
        factor /= base
    return result


def generate_directions(p: int, count: int = 128, seed: int = 0) -> DirectionSet:
    """
    Quasi-uniform unit vectors on the (p - 1)-sphere from a Hammersley point set.

    In two dimensions the first Hammersley coordinate directly gives the angle. In
    higher dimensions the Hammersley point is mapped through the normal quantile
    function and normalised. The seed only moves the offset of the sequence.
    """
    if p < 2:
        raise BadDimension(f"Directions need at least 2 dimensions, got {p}")
    if count < 2 * p:
        raise BadDimension(f"Need at least 2p = {2 * p} directions, got {count}")

    k = numpy.arange(count)
    if p == 2:
        shifted = (k + seed % count) % count
        angles = 2 * numpy.pi * (shifted + 0.5) / count
        vectors = numpy.column_stack((numpy.cos(angles), numpy.sin(angles)))
    else:
        offset = seed % 100_003
        coordinates = [(k + 0.5) / count]
        coordinates += [_radical_inverse(k + offset + 1, base) for base in _primes(p - 1)]
        gaussian = norm.ppf(numpy.column_stack(coordinates))
        vectors = gaussian / numpy.linalg.norm(gaussian, axis=1, keepdims=True)

    return DirectionSet(vectors=vectors)


def _multivariate_envelope(
    h: numpy.ndarray,
    directions: DirectionSet,
    boundary: BoundaryPolicy,
    plateau: PlateauRule = PlateauRule.MIDDLE,
) -> Optional[Tuple[numpy.ndarray, numpy.ndarray]]:
    """
    Mean envelope (n, p) and mean envelope half-spread (n,) averaged over the directions.

    Returns None when no projection has both a maximum and a minimum.
    """
    n, p = h.shape
    projections = h @ directions.vectors.T
    total = numpy.zeros((n, p))
    spread = numpy.zeros(n)
    used = 0
    for d in range(directions.count):
        extrema = find_extrema(projections[:, d], plateau)
        if len(extrema.max_indices) == 0 or len(extrema.min_indices) == 0:
            continue
        try:
            upper = spline_envelope(h, (extrema.max_indices, h[extrema.max_indices]), boundary)
            lower = spline_envelope(h, (extrema.min_indices, h[extrema.min_indices]), boundary)
        except InsufficientExtrema:
            continue
        total += (upper + lower) / 2.0
        spread += numpy.linalg.norm(upper - lower, axis=1) / 2.0
        used += 1

    if used == 0:
        return None
    return total / used, spread / used


def _oscillating_projections(
    r: numpy.ndarray, directions: DirectionSet, plateau: PlateauRule = PlateauRule.MIDDLE
) -> int:
    """Number of directions whose projection of r still has 3 or more extrema."""
    projections = r @ directions.vectors.T
    return sum(find_extrema(projections[:, d], plateau).count >= 3 for d in range(directions.count))


def _memd_core(
    x: numpy.ndarray, directions: DirectionSet, params: SiftParams
) -> Tuple[List[numpy.ndarray], numpy.ndarray, List[int]]:
    """Multivariate sifting of an (n, p) array. Returns the IMFs, the residue and the sift counts."""
    span = numpy.max(numpy.ptp(x, axis=0))
    residue = x.copy()
    imfs = []
    sift_counts = []
    while params.max_imfs is None or len(imfs) < params.max_imfs:
        if _oscillating_projections(residue, directions, params.plateau) < 3:
            break
        if residue_is_flat(residue, span):
            logger.info("Residue is flat up to rounding relative to the input, stopping")
            break

        h = residue.copy()
        sifts = 0
        flat = False
        while sifts < params.max_sift_iters:
            envelope = _multivariate_envelope(h, directions, params.boundary, params.plateau)
            if envelope is None:
                break
            mean, spread = envelope
            try:
                if sifting_converged(numpy.linalg.norm(mean, axis=1), spread, params):
                    break
            except InsufficientExtrema:
                flat = sifts == 0
                break
            h = h - mean
            sifts += 1
        else:
            logger.warning(
                f"Multivariate sifting of IMF {len(imfs) + 1} did not converge in "
                f"{params.max_sift_iters} iterations, accepting the prototype"
            )
        if flat:
            logger.info("Residue has no envelope spread left, stopping")
            break

        logger.debug(f"IMF {len(imfs) + 1} extracted after {sifts} sifts")
        imfs.append(h)
        sift_counts.append(sifts)
        residue = residue - h

    return imfs, residue, sift_counts


def _standardize(x: numpy.ndarray) -> Tuple[numpy.ndarray, numpy.ndarray, numpy.ndarray]:
    means = x.mean(axis=0)
    sds = x.std(axis=0)
    sds = numpy.where(sds > 0, sds, 1.0)
    return (x - means) / sds, means, sds


def _check_multichannel(x: numpy.ndarray, p_total: int):
    if p_total < 2:
        raise BadDimension(f"Multivariate sifting needs at least 2 channels, got {p_total}")
    if len(x) < 8 * p_total:
        raise SeriesTooShort(f"Need at least 8p = {8 * p_total} samples, got {len(x)}")
    if not numpy.all(numpy.isfinite(x)):
        raise NonFiniteInput("Cannot decompose channels with NaN or infinite values")


def _assemble(
    series: MultichannelSeries,
    imfs: List[numpy.ndarray],
    residue: numpy.ndarray,
    means: numpy.ndarray,
    sds: numpy.ndarray,
    sift_counts: List[int],
) -> MultivariateDecomposition:
    per_channel = {}
    for j, (name, channel) in enumerate(zip(series.names, series.channels)):
        channel_imfs = [
            Imf(values=imf[:, j] * sds[j], order=k + 1, dt=channel.dt, start_label=channel.start_label)
            for k, imf in enumerate(imfs)
        ]
        per_channel[name] = Decomposition(
            imfs=channel_imfs,
            residue=residue[:, j] * sds[j] + means[j],
            source_len=len(channel),
            name=name,
            sift_counts=list(sift_counts),
        )
        audit_imfs(per_channel[name], relative_slack=MULTICHANNEL_COUNT_SLACK)

    decomposition = MultivariateDecomposition(per_channel=per_channel, sift_counts=list(sift_counts))
    logger.info(f"Multivariate EMD of {series.names} extracted {decomposition.K} aligned IMFs")
    return decomposition


def memd_decompose(
    series: MultichannelSeries,
    dirs: DirectionSet,
    params: Optional[SiftParams] = None,
    standardize: bool = True,
) -> MultivariateDecomposition:
    """
    Multivariate EMD.

    :param standardize: sift the channels at zero mean and unit variance so that the
        projections weight channels of different units evenly; the IMFs are scaled back.
    """
    if params is None:
        params = SiftParams()
    x = series.as_matrix()
    _check_multichannel(x, series.p)
    if dirs.p != series.p:
        raise BadDimension(f"Directions live in {dirs.p} dimensions but the series has {series.p} channels")

    if standardize:
        x, means, sds = _standardize(x)
    else:
        means, sds = numpy.zeros(series.p), numpy.ones(series.p)

    imfs, residue, sift_counts = _memd_core(x, dirs, params)
    return _assemble(series, imfs, residue, means, sds, sift_counts)


def na_memd_decompose(
    series: MultichannelSeries,
    noise: Optional[NoiseConfig] = None,
    params: Optional[SiftParams] = None,
    n_directions: int = 128,
    standardize: bool = True,
) -> MultivariateDecomposition:
    """
    Noise-assisted multivariate EMD.

    White noise channels with ``noise.variance_ratio`` times the mean variance of the
    data channels are appended, the augmented signal is sifted, and the noise channels
    are discarded. Deterministic for a given ``noise.seed``.
    """
    if noise is None:
        noise = NoiseConfig()
    if params is None:
        params = SiftParams()

    x = series.as_matrix()
    p_total = series.p + noise.n_noise
    _check_multichannel(x, p_total)

    if standardize:
        x, means, sds = _standardize(x)
    else:
        means, sds = numpy.zeros(series.p), numpy.ones(series.p)

    rng = numpy.random.default_rng(noise.seed)
    noise_sd = numpy.sqrt(noise.variance_ratio * numpy.mean(x.var(axis=0)))
    augmented = numpy.column_stack((x, rng.normal(0.0, noise_sd, size=(len(x), noise.n_noise))))

    dirs = generate_directions(p_total, n_directions, noise.seed)
    imfs, residue, sift_counts = _memd_core(augmented, dirs, params)

    # the noise channels are dropped here
    imfs = [imf[:, : series.p] for imf in imfs]
    return _assemble(series, imfs, residue[:, : series.p], means, sds, sift_counts)
