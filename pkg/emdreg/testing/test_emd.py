import datetime

import numpy
import pandas
import pytest

from emdreg.emd import (
    Decomposition,
    Imf,
    MissingDateLabel,
    SiftParams,
    TooFewExtrema,
    TooFewPeaks,
    amplitude_by_day_of_year,
    audit_imfs,
    emd_decompose,
    instantaneous_amplitude,
    is_imf,
    mean_period,
    peak_to_peak_amplitude,
    sift_once,
    sifting_converged,
    zero_crossings,
)
from emdreg.errors import ConfigError
from emdreg.series import InsufficientExtrema, SeriesTooShort, TimeSeries


def sine(n, period, amplitude=1.0):
    return amplitude * numpy.sin(2 * numpy.pi * numpy.arange(n) / period)


@pytest.mark.parametrize("n", [64, 257, 1000, 4096])
def test_completeness(n):
    rng = numpy.random.default_rng(n)
    x = numpy.cumsum(rng.normal(size=n)) + rng.normal(size=n)
    decomposition = emd_decompose(x)
    error = numpy.max(numpy.abs(decomposition.reconstruct() - x))
    assert error <= 1e-10 * numpy.ptp(x)


def test_two_tone_separation(two_tone):
    x, fast, slow = two_tone
    decomposition = emd_decompose(TimeSeries(x, name="two tone"))
    interior = slice(64, len(x) - 64)

    first = decomposition.imfs[0].values[interior]
    assert numpy.corrcoef(first, fast[interior])[0, 1] > 0.95
    slow_corr = max(numpy.corrcoef(imf.values[interior], slow[interior])[0, 1] for imf in decomposition.imfs)
    assert slow_corr > 0.95


def test_dyadic_filter_on_white_noise():
    """The mean period roughly doubles from one IMF to the next."""
    params = SiftParams(max_sift_iters=100)
    log_periods = []
    for seed in range(6):
        x = numpy.random.default_rng(seed).normal(size=4096)
        decomposition = emd_decompose(x, params)
        log_periods.append(numpy.log2(decomposition.mean_periods()[1:6]))
    mean_log = numpy.mean(log_periods, axis=0)
    slope = numpy.polyfit(numpy.arange(2, 7), mean_log, 1)[0]
    assert slope == pytest.approx(1.0, abs=0.35)


def test_sine_is_one_imf():
    decomposition = emd_decompose(sine(400, 25))
    assert decomposition.K >= 1
    assert numpy.corrcoef(decomposition.imfs[0].values, sine(400, 25))[0, 1] > 0.99


def test_decomposition_frame(two_tone):
    x, _, _ = two_tone
    decomposition = emd_decompose(x, SiftParams(max_imfs=2))
    frame = decomposition.to_frame()
    assert list(frame.columns) == ["imf_1", "imf_2", "residue"]
    numpy.testing.assert_allclose(frame.sum(axis=1).to_numpy(), x, atol=1e-10)


def test_too_short():
    with pytest.raises(SeriesTooShort):
        emd_decompose(numpy.arange(5.0))


def test_sift_once_on_monotone():
    with pytest.raises(InsufficientExtrema):
        sift_once(numpy.arange(20.0))


@pytest.mark.parametrize("n", [20, 30])
def test_sift_once_needs_two_maxima_and_minima(n):
    # one period and a half at most: a single minimum
    with pytest.raises(InsufficientExtrema):
        sift_once(sine(n, 20))


def test_sift_once_removes_offset():
    h, m = sift_once(sine(200, 20) + 0.5)
    numpy.testing.assert_allclose(m[20:180], 0.5, atol=0.05)
    numpy.testing.assert_allclose(h + m, sine(200, 20) + 0.5)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_white_noise_leaves_no_flat_imf(seed):
    x = numpy.random.default_rng(seed).normal(size=2048)
    decomposition = emd_decompose(x)
    span = numpy.ptp(x)
    assert all(numpy.ptp(imf.values) > 1e-10 * span for imf in decomposition.imfs)
    # the constant part stays in the residue instead of being sifted away
    assert numpy.max(numpy.abs(decomposition.residue)) > 1e-10 * span
    assert numpy.max(numpy.abs(decomposition.reconstruct() - x)) <= 1e-10 * span


@pytest.mark.parametrize("factor", [4.0, -0.5])
def test_amplitude_homogeneity(factor):
    x = numpy.random.default_rng(11).normal(size=1024) + sine(1024, 128)
    reference = emd_decompose(x)
    scaled = emd_decompose(factor * x)
    assert scaled.K == reference.K
    for imf, expected in zip(scaled.imfs, reference.imfs):
        numpy.testing.assert_allclose(imf.values, factor * expected.values, rtol=1e-9, atol=1e-9 * numpy.ptp(x))
    numpy.testing.assert_allclose(scaled.residue, factor * reference.residue, rtol=1e-9, atol=1e-9 * numpy.ptp(x))


def test_sifting_converged():
    params = SiftParams()
    amplitude = numpy.ones(100)
    assert sifting_converged(numpy.zeros(100), amplitude, params)
    assert not sifting_converged(numpy.full(100, 0.2), amplitude, params)
    # a single sample above theta2 fails the test
    mode = numpy.zeros(100)
    mode[50] = 0.6
    assert not sifting_converged(mode, amplitude, params)
    # zero amplitude samples are ignored
    mode = numpy.zeros(100)
    mode[:50] = 5.0
    amplitude[:50] = 0.0
    assert sifting_converged(mode, amplitude, params)
    # a prototype without envelope spread anywhere belongs to the residue
    with pytest.raises(InsufficientExtrema):
        sifting_converged(mode, numpy.zeros(100), params)


def test_bad_sift_params():
    with pytest.raises(ConfigError):
        SiftParams(theta1=0.6, theta2=0.5)
    with pytest.raises(ConfigError):
        SiftParams(alpha=1.5)


def test_mean_period_of_sine():
    assert mean_period(sine(200, 20)) == pytest.approx(20.0)


def test_mean_period_uses_dt():
    assert mean_period(TimeSeries(sine(200, 20), dt=0.5)) == pytest.approx(10.0)


def test_mean_period_too_few_peaks():
    with pytest.raises(TooFewPeaks):
        mean_period(sine(20, 20))


def test_peak_to_peak_amplitude():
    assert peak_to_peak_amplitude(sine(200, 20, amplitude=3.0)) == pytest.approx(6.0)


def test_peak_to_peak_needs_extrema():
    with pytest.raises(TooFewExtrema):
        peak_to_peak_amplitude(numpy.arange(10.0))


def test_instantaneous_amplitude():
    amplitude = instantaneous_amplitude(sine(200, 20, amplitude=2.0))
    numpy.testing.assert_allclose(amplitude[20:180], 2.0, atol=0.05)


def test_amplitude_by_day_of_year():
    series = TimeSeries(sine(730, 10), start_label=datetime.date(2001, 1, 1))
    profile = amplitude_by_day_of_year(series)
    assert profile.shape == (366,)
    # 2001 and 2002 have no 366th day
    assert numpy.isnan(profile[365])
    numpy.testing.assert_allclose(profile[10:355], 1.0, atol=0.05)


def test_amplitude_by_day_of_year_one_sample_per_day():
    values = sine(365, 10) + 0.1 * sine(365, 90)
    profile = amplitude_by_day_of_year(values, start_label=datetime.date(2001, 1, 1))
    numpy.testing.assert_array_equal(profile[:365], instantaneous_amplitude(values))
    assert numpy.isnan(profile[365])


def test_amplitude_by_day_of_year_seasonal_modulation():
    t = numpy.arange(3652)
    modulation = 1 + 0.5 * numpy.sin(2 * numpy.pi * t / 365.25)
    start = datetime.date(2001, 1, 1)
    profile = amplitude_by_day_of_year(sine(len(t), 8) * modulation, start_label=start)

    days = pandas.date_range(start, periods=len(t), freq="D").dayofyear
    expected = pandas.Series(modulation).groupby(numpy.asarray(days)).mean().to_numpy()
    assert numpy.corrcoef(profile[:365], expected[:365])[0, 1] > 0.9


def test_amplitude_by_day_of_year_needs_dates():
    with pytest.raises(MissingDateLabel):
        amplitude_by_day_of_year(sine(730, 10))
    with pytest.raises(SeriesTooShort):
        amplitude_by_day_of_year(sine(200, 10), start_label=datetime.date(2001, 1, 1))


def test_imf_properties():
    assert is_imf(sine(200, 20))
    assert not is_imf(numpy.linspace(0, 5, 200))
    assert zero_crossings(sine(200, 20)) in (19, 20)


def dented_sine():
    """sin(2 pi t / 20) over 400 samples with three peaks dented, 6 extra extrema."""
    x = sine(400, 20)
    x[[25, 125, 225]] = 0.9
    return x


def test_imf_count_slack():
    x = dented_sine()
    assert not is_imf(x)
    assert is_imf(x, slack=8)


def test_audit_relative_slack():
    decomposition = Decomposition(imfs=[Imf(values=dented_sine(), order=1)], residue=numpy.zeros(400), source_len=400)
    assert audit_imfs(decomposition) == [1]
    assert audit_imfs(decomposition, relative_slack=0.2) == []
