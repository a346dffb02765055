"""
EMD-regression: sparse linear models between the IMFs of a response and of its predictors.

Two designs are provided.

* EMD-R1: only the predictors are decomposed. Every lagged predictor IMF and every
  predictor residue enters one Lasso explaining the raw response, lambda chosen with
  the one-standard-error rule.
* EMD-R2: the response and the predictors are decomposed jointly so that the IMF
  orders are aligned. IMF k of the response is explained by IMF k of every predictor,
  the response residue by the predictor residues, each with lambda_min. The response
  prediction is the sum of the submodel predictions.

Sensitivities scale each retained coefficient by the mean peak-to-peak amplitude of its
IMF, and a moving-block bootstrap of the Lasso gives percentile confidence intervals.
"""
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import dask
import numpy
import pandas
import tqdm

from .config import Design, RunConfig
from .emd import Decomposition, Imf, TooFewExtrema, TooFewPeaks, mean_period, peak_to_peak_amplitude
from .errors import ConfigError, DataError, NumericalError
from .lasso import (
    DegenerateColumnWarning,
    DesignMatrix,
    LambdaRule,
    LassoSelection,
    ZeroVarianceResponse,
    fit_cv,
    gcv_from_rss,
    lasso_coordinate_descent,
    r_squared_from_rss,
    standardize,
)
from .memd import MultichannelSeries, MultivariateDecomposition, na_memd_decompose
from .series import SeriesLike, TimeSeries, as_array

logger = logging.getLogger(__name__)

TREND = "trend"


class DegenerateSeries(NumericalError):
    pass


class DesignMismatch(DataError):
    pass


class BadBlockLength(ConfigError):
    pass


@dataclass
class LagChoice:
    lag: int
    max_lag: int
    ccf: float


@dataclass
class LagSelection:
    """The lag of every (predictor, IMF order) pair, in samples. Residues are never lagged."""

    choices: Dict[Tuple[str, int], LagChoice] = field(default_factory=dict)

    def lag(self, predictor: str, order: Optional[int]) -> int:
        if order is None:
            return 0
        return self.choices[(predictor, order)].lag

    @property
    def largest(self) -> int:
        return max((choice.lag for choice in self.choices.values()), default=0)

    def to_frame(self) -> pandas.DataFrame:
        rows = [
            {"predictor": predictor, "order": order, "lag": c.lag, "max_lag": c.max_lag, "ccf": c.ccf}
            for (predictor, order), c in self.choices.items()
        ]
        return pandas.DataFrame(rows, columns=["predictor", "order", "lag", "max_lag", "ccf"])


@dataclass
class Term:
    """One regressor: the IMF ``order`` of ``predictor`` (None for its residue) shifted by ``lag``."""

    name: str
    predictor: str
    order: Optional[int]
    lag: int
    mean_period: float


@dataclass
class Submodel:
    """
    One Lasso fit of an EMD-regression model.

    ``design`` and ``target`` are the trimmed training rows, ``fitted`` the stored
    in-sample predictions.
    """

    name: str
    order: Optional[int]
    terms: List[Term]
    design: DesignMatrix
    target: numpy.ndarray
    selection: LassoSelection
    fitted: numpy.ndarray

    @property
    def fit(self):
        return self.selection.fit


@dataclass
class BootstrapResult:
    B: int
    block_len: int
    seed: int
    table: pandas.DataFrame
    draws: Dict[str, numpy.ndarray] = field(default_factory=dict)


@dataclass
class EmdrModel:
    """
    A fitted EMD-R1 or EMD-R2 model.

    :param trim: number of leading samples dropped from every column so that the lagged
        regressors align, the training rows are ``trim ... n - 1``
    :param decomposition: the joint decomposition the model was built on. For EMD-R2 it
        also holds the response channel.
    """

    design: Design
    response: str
    predictors: List[str]
    y: numpy.ndarray
    decomposition: MultivariateDecomposition
    lags: LagSelection
    trim: int
    submodels: List[Submodel]
    config: Optional[RunConfig] = None
    bootstrap: Optional[BootstrapResult] = None

    @property
    def K(self) -> int:
        return self.decomposition.K

    @property
    def target(self) -> numpy.ndarray:
        return self.y[self.trim :]


def _mean_period_or_nan(imf: Imf) -> float:
    try:
        return imf.mean_period
    except TooFewPeaks:
        return float("nan")


def lag_bound(imf: SeriesLike) -> int:
    """min(floor(mean period), n // 4) in samples; 0 when the IMF has fewer than two peaks."""
    x = as_array(imf)
    dt = getattr(imf, "dt", 1.0)
    try:
        period = mean_period(imf) / dt
    except TooFewPeaks:
        return 0
    return int(min(math.floor(period), len(x) // 4))


def select_lag(imf: SeriesLike, target: SeriesLike, max_lag: int) -> Tuple[int, float]:
    """
    The lag in [0, max_lag] maximising |corr(imf(t - lag), target(t))| over the overlapping window.

    Ties go to the smallest lag.

    :returns: (lag, correlation at that lag)
    :raises DegenerateSeries: either window has zero variance
    """
    x = as_array(imf)
    y = as_array(target)
    n = len(x)
    if len(y) != n:
        raise DataError(f"The IMF has {n} samples but the target has {len(y)}")
    if max_lag < 0:
        raise ConfigError(f"max_lag has to be non-negative, got {max_lag}")
    max_lag = min(max_lag, n - 3)

    best_lag, best_ccf = 0, 0.0
    for lag in range(max_lag + 1):
        shifted = x[: n - lag]
        window = y[lag:]
        if numpy.ptp(shifted) == 0 or numpy.ptp(window) == 0:
            raise DegenerateSeries(f"Zero variance in the cross-correlation window at lag {lag}")
        ccf = float(numpy.corrcoef(shifted, window)[0, 1])
        if lag == 0 or abs(ccf) > abs(best_ccf) + 1e-12:
            best_lag, best_ccf = lag, ccf
    return best_lag, best_ccf


def _choose_lag(predictor: str, imf: Imf, target: numpy.ndarray) -> LagChoice:
    bound = lag_bound(imf)
    try:
        lag, ccf = select_lag(imf, target, bound)
    except DegenerateSeries:
        logger.warning(f"IMF {imf.order} of '{predictor}' is flat, it enters unlagged")
        return LagChoice(lag=0, max_lag=bound, ccf=0.0)
    return LagChoice(lag=lag, max_lag=bound, ccf=ccf)


def _window(values: numpy.ndarray, lag: int, trim: int) -> numpy.ndarray:
    """Rows trim ... n - 1 of values(t - lag)."""
    return values[trim - lag : len(values) - lag]


def _imf_term(decomposition: Decomposition, predictor: str, order: int, lags: LagSelection) -> Term:
    imf = decomposition.imfs[order - 1]
    return Term(
        name=f"{predictor}_imf{order}",
        predictor=predictor,
        order=order,
        lag=lags.lag(predictor, order),
        mean_period=_mean_period_or_nan(imf),
    )


def _trend_term(predictor: str) -> Term:
    return Term(name=f"{predictor}_{TREND}", predictor=predictor, order=None, lag=0, mean_period=float("nan"))


def _term_values(decomposition: MultivariateDecomposition, term: Term) -> numpy.ndarray:
    channel = decomposition[term.predictor]
    if term.order is None:
        return channel.residue
    return channel.imfs[term.order - 1].values


def _build_design(decomposition: MultivariateDecomposition, terms: List[Term], trim: int) -> DesignMatrix:
    missing = [term.predictor for term in terms if term.predictor not in decomposition.per_channel]
    if missing:
        raise DesignMismatch(f"The decomposition has no channel for {sorted(set(missing))}")
    columns = {term.name: _window(_term_values(decomposition, term), term.lag, trim) for term in terms}
    return DesignMatrix.from_columns(columns)


def _fit_submodel(
    name: str,
    order: Optional[int],
    terms: List[Term],
    design: DesignMatrix,
    target: numpy.ndarray,
    rule: LambdaRule,
    config: RunConfig,
) -> Submodel:
    selection = fit_cv(
        design,
        target,
        rule=rule,
        k=config.cv_folds,
        scheme=config.cv_scheme,
        seed=config.seed,
        n_lambda=config.n_lambda,
        ratio=config.lambda_ratio,
    )
    return Submodel(
        name=name,
        order=order,
        terms=terms,
        design=design,
        target=target,
        selection=selection,
        fitted=selection.fit.predict(design),
    )


def decompose_channels(channels: MultichannelSeries, config: RunConfig) -> MultivariateDecomposition:
    return na_memd_decompose(
        channels,
        noise=config.noise_config(),
        params=config.sift_params(),
        n_directions=config.n_directions,
        standardize=config.standardize_channels,
    )


def _check_inputs(y: TimeSeries, predictors: MultichannelSeries):
    if len(y) != len(predictors):
        raise DataError(f"The response has {len(y)} samples but the predictors have {len(predictors)}")


def fit_emdr1(
    y: TimeSeries,
    predictors: MultichannelSeries,
    config: RunConfig,
    decomposition: Optional[MultivariateDecomposition] = None,
) -> EmdrModel:
    """
    Fit the EMD-R1 design, Y(t) = sum_j (sum_k beta_jk C_jk(t - lag_jk) + beta_j r_j(t)).

    :param decomposition: a decomposition of the predictors to reuse, by default the
        predictors are decomposed with the noise-assisted multivariate EMD
    """
    _check_inputs(y, predictors)
    if decomposition is None:
        decomposition = decompose_channels(predictors, config)

    response = numpy.asarray(y.values, dtype=float)
    lags = LagSelection()
    for predictor in predictors.names:
        for imf in decomposition[predictor].imfs:
            lags.choices[(predictor, imf.order)] = _choose_lag(predictor, imf, response)
    trim = lags.largest
    logger.info(f"EMD-R1 lags: {lags.to_frame()['lag'].tolist()}, {trim} leading rows trimmed")

    terms = []
    for predictor in predictors.names:
        channel = decomposition[predictor]
        terms += [_imf_term(channel, predictor, imf.order, lags) for imf in channel.imfs]
        terms.append(_trend_term(predictor))
    design = _build_design(decomposition, terms, trim)
    submodel = _fit_submodel("r1", None, terms, design, response[trim:], LambdaRule.ONE_SE, config)

    return EmdrModel(
        design=Design.R1,
        response=y.name or config.response,
        predictors=list(predictors.names),
        y=response,
        decomposition=decomposition,
        lags=lags,
        trim=trim,
        submodels=[submodel],
        config=config,
    )


def fit_emdr2(
    y: TimeSeries,
    predictors: MultichannelSeries,
    config: RunConfig,
    decomposition: Optional[MultivariateDecomposition] = None,
) -> EmdrModel:
    """
    Fit the EMD-R2 design: for every order k, C_Yk(t) = sum_j beta_jk C_jk(t - lag_jk),
    and r_Y(t) = sum_j beta_j r_j(t) for the trend.

    The submodels are fitted in parallel with dask.

    :param decomposition: a joint decomposition of the response and the predictors to reuse
    """
    _check_inputs(y, predictors)
    response_name = y.name or config.response
    if decomposition is None:
        response_channel = TimeSeries(y.values, dt=y.dt, start_label=y.start_label, name=response_name)
        decomposition = decompose_channels(MultichannelSeries([response_channel] + list(predictors.channels)), config)

    target = decomposition[response_name]
    lags = LagSelection()
    for imf_y in target.imfs:
        for predictor in predictors.names:
            imf = decomposition[predictor].imfs[imf_y.order - 1]
            lags.choices[(predictor, imf_y.order)] = _choose_lag(predictor, imf, imf_y.values)
    trim = lags.largest
    logger.info(f"EMD-R2 lags: {lags.to_frame()['lag'].tolist()}, {trim} leading rows trimmed")

    tasks = []
    for imf_y in target.imfs:
        terms = [_imf_term(decomposition[predictor], predictor, imf_y.order, lags) for predictor in predictors.names]
        design = _build_design(decomposition, terms, trim)
        tasks.append(
            dask.delayed(_fit_submodel)(
                f"imf_{imf_y.order}", imf_y.order, terms, design, imf_y.values[trim:], LambdaRule.MIN, config
            )
        )
    trend_terms = [_trend_term(predictor) for predictor in predictors.names]
    tasks.append(
        dask.delayed(_fit_submodel)(
            TREND,
            None,
            trend_terms,
            _build_design(decomposition, trend_terms, trim),
            target.residue[trim:],
            LambdaRule.MIN,
            config,
        )
    )
    submodels = list(dask.compute(*tasks))

    return EmdrModel(
        design=Design.R2,
        response=response_name,
        predictors=list(predictors.names),
        y=numpy.asarray(y.values, dtype=float),
        decomposition=decomposition,
        lags=lags,
        trim=trim,
        submodels=submodels,
        config=config,
    )


def _predict(model: EmdrModel, design: Design, imfs: Optional[MultivariateDecomposition]) -> numpy.ndarray:
    if model.design != design:
        raise DesignMismatch(f"The model was fitted with the {model.design.value} design, not {design.value}")
    if imfs is not None and imfs.K != model.K:
        raise DesignMismatch(f"The model has {model.K} IMF orders but the new decomposition has {imfs.K}")

    total = None
    for submodel in model.submodels:
        if imfs is None:
            prediction = submodel.fit.predict(submodel.design)
        else:
            prediction = submodel.fit.predict(_build_design(imfs, submodel.terms, model.trim))
        total = prediction if total is None else total + prediction
    return total


def predict_r1(model: EmdrModel, imfs: Optional[MultivariateDecomposition] = None) -> numpy.ndarray:
    """Predict the response rows trim ... n - 1 from predictor IMFs, the training IMFs by default."""
    return _predict(model, Design.R1, imfs)


def predict_r2(model: EmdrModel, imfs: Optional[MultivariateDecomposition] = None) -> numpy.ndarray:
    """
    Sum of the IMF submodel predictions and the trend prediction, in submodel order.

    :param imfs: a decomposition holding the predictor channels with the model's K orders,
        by default the training decomposition
    :raises DesignMismatch: the model is EMD-R1, or the IMF count differs
    """
    return _predict(model, Design.R2, imfs)


def _amplitude(model: EmdrModel, term: Term) -> Tuple[float, str]:
    channel = model.decomposition[term.predictor]
    if term.order is None:
        return float(numpy.ptp(channel.residue)), "range"
    imf = channel.imfs[term.order - 1]
    try:
        return peak_to_peak_amplitude(imf), "peak_to_peak"
    except TooFewExtrema:
        return float(numpy.ptp(imf.values)), "range"


def coefficient_table(model: EmdrModel) -> pandas.DataFrame:
    """
    Every coefficient of every submodel with its lag, amplitude and sensitivity S = beta * A.

    Bootstrap columns are joined when the bootstrap has run.
    """
    rows = []
    for submodel in model.submodels:
        for term, beta in zip(submodel.terms, submodel.fit.beta):
            amplitude, kind = _amplitude(model, term)
            rows.append(
                {
                    "submodel": submodel.name,
                    "term": term.name,
                    "predictor": term.predictor,
                    "order": term.order,
                    "mean_period": term.mean_period,
                    "lag": term.lag,
                    "beta": float(beta),
                    "amplitude": amplitude,
                    "amplitude_kind": kind,
                    "sensitivity": float(beta) * amplitude,
                }
            )
    table = pandas.DataFrame(rows)
    if model.bootstrap is not None and not table.empty:
        intervals = model.bootstrap.table.drop(columns=["beta"], errors="ignore")
        table = table.merge(intervals, on=["submodel", "term"], how="left")
    return table


def sensitivities(model: EmdrModel) -> pandas.DataFrame:
    """The rows of :func:`coefficient_table` whose coefficient the Lasso retained."""
    table = coefficient_table(model)
    if table.empty:
        return table
    return table[table["beta"] != 0].reset_index(drop=True)


def _scores(rss: float, y: numpy.ndarray, df_eff: float) -> Tuple[float, float]:
    try:
        r2 = r_squared_from_rss(rss, y)
    except ZeroVarianceResponse:
        r2 = float("nan")
    return r2, gcv_from_rss(rss, len(y), df_eff)


def diagnostics(model: EmdrModel) -> pandas.DataFrame:
    """
    In-sample R2 and GCV of every submodel and of the model as a whole.

    The EMD-R2 model row scores the summed prediction against the raw response with
    df_eff = total nonzero coefficients + number of submodels.
    """
    rows = []
    for submodel in model.submodels:
        fit = submodel.fit
        r2, score = _scores(fit.rss, submodel.target, fit.df + 1)
        rows.append(
            {
                "design": model.design.value,
                "model": submodel.name,
                "n": len(submodel.target),
                "df": fit.df,
                "lambda": fit.lambda_,
                "rule": submodel.selection.rule.value,
                "r2": r2,
                "gcv": score,
            }
        )

    if model.design == Design.R2:
        prediction = predict_r2(model)
        residual = model.target - prediction
        df = sum(submodel.fit.df for submodel in model.submodels)
        r2, score = _scores(float(residual @ residual), model.target, df + len(model.submodels))
        rows.append(
            {
                "design": model.design.value,
                "model": "combined",
                "n": len(model.target),
                "df": df,
                "lambda": float("nan"),
                "rule": LambdaRule.MIN.value,
                "r2": r2,
                "gcv": score,
            }
        )
    return pandas.DataFrame(rows)


def model_r_squared(model: EmdrModel) -> float:
    """Training R2 of the response prediction, the single fit for EMD-R1 and the sum for EMD-R2."""
    table = diagnostics(model)
    row = "r1" if model.design == Design.R1 else "combined"
    return float(table.loc[table["model"] == row, "r2"].iloc[0])


def moving_block_indices(n: int, block_len: int, rng: numpy.random.Generator) -> numpy.ndarray:
    """Row indices of one moving-block resample: overlapping blocks drawn with replacement, cut to n."""
    n_blocks = math.ceil(n / block_len)
    starts = rng.integers(0, n - block_len + 1, size=n_blocks)
    return (starts[:, None] + numpy.arange(block_len)).ravel()[:n]


def _replication_rng(seed: int, replication: int) -> numpy.random.Generator:
    return numpy.random.default_rng(numpy.random.SeedSequence(seed, spawn_key=(replication,)))


def _refit(design: DesignMatrix, y: numpy.ndarray, lam: float) -> numpy.ndarray:
    """Coefficients on the original scale of a Lasso refitted at a fixed lambda."""
    if not numpy.isfinite(lam) or design.p == 0:
        return numpy.zeros(design.p)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateColumnWarning)
        std_design, y_centered, info = standardize(design, y)
    return lasso_coordinate_descent(std_design, y_centered, lam, scale_info=info, strict=False).beta


def _replicate(
    problems: List[Tuple[DesignMatrix, numpy.ndarray, float]], n: int, block_len: int, seed: int, replication: int
) -> List[numpy.ndarray]:
    rows = moving_block_indices(n, block_len, _replication_rng(seed, replication))
    return [_refit(design.take(rows), y[rows], lam) for design, y, lam in problems]


def _check_block_len(n: int, block_len: int, B: int):
    if not 1 <= block_len <= n / 2:
        raise BadBlockLength(f"The block length has to be in [1, {n // 2}], got {block_len}")
    if B < 2:
        raise ConfigError(f"The bootstrap needs at least 2 replications, got {B}")


def bootstrap_coefficients(
    design: DesignMatrix, y: numpy.ndarray, lam: float, B: int, block_len: int, seed: int = 0
) -> numpy.ndarray:
    """
    Moving-block bootstrap of a Lasso at a fixed lambda.

    :returns: (B, p) coefficients on the original scale
    """
    y = numpy.asarray(y, dtype=float)
    _check_block_len(design.n, block_len, B)
    tasks = [dask.delayed(_replicate)([(design, y, lam)], design.n, block_len, seed, b) for b in range(B)]
    return numpy.vstack([draws[0] for draws in dask.compute(*tasks)])


def block_bootstrap(
    model: EmdrModel,
    B: Optional[int] = None,
    block_len: Optional[int] = None,
    seed: Optional[int] = None,
    progress: bool = True,
) -> BootstrapResult:
    """
    Percentile confidence intervals of the coefficients and the sensitivities.

    Each replication resamples the training rows in overlapping blocks and refits every
    submodel at its originally chosen lambda; the decomposition and the lags stay fixed.
    All submodels of a replication share the same rows, and replication b draws from a
    generator seeded by (seed, b) so the result does not depend on the execution order.
    The result is also stored on ``model.bootstrap``.

    :param block_len: defaults to ceil(n^(1/3))
    """
    config = model.config
    if B is None:
        B = config.bootstrap_reps if config is not None else 500
    if seed is None:
        seed = config.seed if config is not None else 0
    n = len(model.target)
    if block_len is None and config is not None:
        block_len = config.block_len
    if block_len is None:
        block_len = math.ceil(n ** (1 / 3))
    _check_block_len(n, block_len, B)

    problems = [(submodel.design, submodel.target, submodel.fit.lambda_) for submodel in model.submodels]
    draws = [[] for _ in model.submodels]
    batch = 32
    with tqdm.tqdm(total=B, desc="Bootstrap replications", ncols=80, disable=not progress) as pbar:
        for first in range(0, B, batch):
            replications = range(first, min(first + batch, B))
            tasks = [dask.delayed(_replicate)(problems, n, block_len, seed, b) for b in replications]
            for result in dask.compute(*tasks):
                for i, beta in enumerate(result):
                    draws[i].append(beta)
            pbar.update(len(replications))

    rows = []
    stacked = {}
    for submodel, submodel_draws in zip(model.submodels, draws):
        betas = numpy.vstack(submodel_draws)
        stacked[submodel.name] = betas
        for j, term in enumerate(submodel.terms):
            amplitude, _ = _amplitude(model, term)
            beta_lower, beta_upper = numpy.percentile(betas[:, j], [2.5, 97.5])
            s_lower, s_upper = numpy.percentile(betas[:, j] * amplitude, [2.5, 97.5])
            rows.append(
                {
                    "submodel": submodel.name,
                    "term": term.name,
                    "beta_lower": float(beta_lower),
                    "beta_upper": float(beta_upper),
                    "s_lower": float(s_lower),
                    "s_upper": float(s_upper),
                    "significant": bool(beta_lower > 0 or beta_upper < 0),
                }
            )

    result = BootstrapResult(B=B, block_len=block_len, seed=seed, table=pandas.DataFrame(rows), draws=stacked)
    model.bootstrap = result
    logger.info(
        f"Bootstrap with {B} replications of block length {block_len}: "
        f"{int(result.table['significant'].sum())} significant coefficient(s)"
    )
    return result
