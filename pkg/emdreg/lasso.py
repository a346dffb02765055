"""
Gaussian Lasso by cyclic coordinate descent, lambda paths with warm starts,
k-fold cross-validation with the lambda-min and one-standard-error rules, and the
R2 / GCV fit criteria.

The objective is (1 / 2n) * RSS + lambda * sum_j |beta_j| in standardised
coordinates, so lambda values are internal; supports, fitted values, R2 and
GCV do not depend on this scaling convention.
"""
import enum
import logging
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import dask
import numpy
from sklearn.model_selection import KFold

from .errors import ConfigError, DataError, NumericalError

logger = logging.getLogger(__name__)


class TooFewRows(DataError):
    pass


class AllZeroCorrelation(NumericalError):
    pass


class NoConvergence(NumericalError):
    """
    The sweep cap was hit. ``fit`` holds the last iterate and ``gap`` its final
    coefficient change in standardised coordinates.
    """

    def __init__(self, message: str, gap: float, fit: Optional["LassoFit"] = None):
        super().__init__(message)
        self.gap = gap
        self.fit = fit


class ZeroVarianceResponse(DataError):
    pass


class DegenerateColumnWarning(UserWarning):
    pass


class CvScheme(str, enum.Enum):
    RANDOM = "random"
    BLOCKS = "blocks"


class LambdaRule(str, enum.Enum):
    MIN = "min"
    ONE_SE = "1se"


@dataclass
class DesignMatrix:
    """
    Named predictor columns, stored as an (n, p) array.

    ``scale_info`` is filled in on the copy returned by :func:`standardize`.
    """

    values: numpy.ndarray
    names: List[str]
    scale_info: Optional["ScaleInfo"] = None

    def __post_init__(self):
        self.values = numpy.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.shape[1] != len(self.names):
            raise DataError(f"{self.values.shape[1]} columns but {len(self.names)} names")
        if not numpy.all(numpy.isfinite(self.values)):
            raise DataError("The design matrix contains NaN or infinite values")

    @classmethod
    def from_columns(cls, columns: Dict[str, numpy.ndarray]) -> "DesignMatrix":
        names = list(columns)
        if not names:
            return cls(values=numpy.zeros((0, 0)), names=[])
        return cls(values=numpy.column_stack([columns[name] for name in names]), names=names)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def take(self, rows: numpy.ndarray) -> "DesignMatrix":
        return DesignMatrix(values=self.values[rows], names=list(self.names))


@dataclass
class ScaleInfo:
    """
    Everything needed to map standardised coefficients back to the original design.

    ``kept`` indexes the original columns that survived standardisation, in order.
    """

    names: List[str]
    kept: numpy.ndarray
    means: numpy.ndarray
    sds: numpy.ndarray
    y_mean: float

    @classmethod
    def identity(cls, p: int, names: Optional[List[str]] = None) -> "ScaleInfo":
        names = names if names is not None else [f"x{j}" for j in range(p)]
        return cls(names=names, kept=numpy.arange(p), means=numpy.zeros(p), sds=numpy.ones(p), y_mean=0.0)

    @property
    def dropped(self) -> List[str]:
        kept = set(self.kept.tolist())
        return [name for j, name in enumerate(self.names) if j not in kept]


@dataclass
class LassoFit:
    """
    A Lasso solution at one lambda.

    :param beta: coefficients on the original scale, one per original design column
        (columns dropped at standardisation get 0)
    :param df: number of nonzero coefficients
    :param rss: residual sum of squares on the data the fit was computed on
    """

    lambda_: float
    beta: numpy.ndarray
    intercept: float
    df: int
    rss: float
    n: int
    names: List[str]
    beta_std: numpy.ndarray = None
    sweeps: int = 0
    objective_trace: List[float] = field(default_factory=list)

    @property
    def support(self) -> List[str]:
        return [name for name, b in zip(self.names, self.beta) if b != 0]

    def predict(self, design: numpy.ndarray) -> numpy.ndarray:
        values = design.values if isinstance(design, DesignMatrix) else numpy.asarray(design, dtype=float)
        if values.shape[1] == 0:
            return numpy.full(values.shape[0], self.intercept)
        return self.intercept + values @ self.beta


@dataclass
class CvResult:
    lambda_grid: numpy.ndarray
    cv_mean: numpy.ndarray
    cv_se: numpy.ndarray
    lambda_min: float
    lambda_1se: float
    fold_errors: numpy.ndarray
    k: int
    scheme: CvScheme

    @property
    def index_min(self) -> int:
        return int(numpy.flatnonzero(self.lambda_grid == self.lambda_min)[0])

    @property
    def index_1se(self) -> int:
        return int(numpy.flatnonzero(self.lambda_grid == self.lambda_1se)[0])


def standardize(design: DesignMatrix, y: numpy.ndarray) -> Tuple[DesignMatrix, numpy.ndarray, ScaleInfo]:
    """
    Centre and scale every column to mean 0 and standard deviation 1 (denominator n), centre y.

    Zero-variance columns are dropped with a :class:`DegenerateColumnWarning`.

    :returns: the standardised design (kept columns only), the centred response
        and the scale information
    """
    y = numpy.asarray(y, dtype=float)
    if design.n < 3:
        raise TooFewRows(f"Standardisation needs at least 3 rows, got {design.n}")
    if len(y) != design.n:
        raise DataError(f"Design has {design.n} rows but the response has {len(y)}")

    means = design.values.mean(axis=0) if design.p else numpy.zeros(0)
    sds = design.values.std(axis=0) if design.p else numpy.zeros(0)
    constant = numpy.ptp(design.values, axis=0) == 0 if design.p else numpy.zeros(0, dtype=bool)
    for j in numpy.flatnonzero(constant):
        message = f"Column '{design.names[j]}' has zero variance and is dropped"
        logger.warning(message)
        warnings.warn(message, DegenerateColumnWarning)

    kept = numpy.flatnonzero(~constant)
    scaled = (design.values[:, kept] - means[kept]) / sds[kept]
    y_mean = float(y.mean())
    info = ScaleInfo(names=list(design.names), kept=kept, means=means[kept], sds=sds[kept], y_mean=y_mean)
    std_design = DesignMatrix(values=scaled, names=[design.names[j] for j in kept], scale_info=info)
    return std_design, y - y_mean, info


def _soft_threshold(z: float, lam: float) -> float:
    if z > lam:
        return z - lam
    if z < -lam:
        return z + lam
    return 0.0


def _unscale(beta_std: numpy.ndarray, info: ScaleInfo) -> Tuple[numpy.ndarray, float]:
    beta = numpy.zeros(len(info.names))
    beta[info.kept] = beta_std / info.sds
    intercept = info.y_mean - float(numpy.dot(beta[info.kept], info.means))
    return beta, intercept


def _objective(gram: numpy.ndarray, xty: numpy.ndarray, yty: float, beta: numpy.ndarray, lam: float) -> float:
    return 0.5 * (yty - 2 * xty @ beta + beta @ gram @ beta) + lam * numpy.sum(numpy.abs(beta))


def lasso_coordinate_descent(
    std_design: DesignMatrix,
    y_centered: numpy.ndarray,
    lam: float,
    scale_info: Optional[ScaleInfo] = None,
    beta_init: Optional[numpy.ndarray] = None,
    tol: float = 1e-7,
    max_sweeps: int = 10_000,
    strict: bool = True,
) -> LassoFit:
    """
    Minimise (1 / 2n) * ||y - X b||^2 + lam * ||b||_1 by cyclic soft-threshold updates.

    Uses the covariance form of the updates: the Gram matrix X'X / n and X'y / n are
    computed once, after which a sweep costs O(p^2).

    :param std_design: standardised design, as returned by :func:`standardize`
    :param y_centered: centred response
    :param scale_info: maps the solution back to the original scale; defaults to the
        scale info attached to ``std_design`` and otherwise to the identity
    :param beta_init: warm start in standardised coordinates
    :param strict: with False, hitting the sweep cap logs a warning and returns the last iterate
    :raises NoConvergence: the sweep cap was hit with ``strict`` set, the exception carries
        the final coefficient change and the last iterate
    """
    if lam < 0:
        raise ConfigError(f"lambda has to be non-negative, got {lam}")
    X = std_design.values
    y = numpy.asarray(y_centered, dtype=float)
    n, p = X.shape
    if scale_info is None:
        scale_info = std_design.scale_info or ScaleInfo.identity(p, list(std_design.names))

    gram = X.T @ X / n
    xty = X.T @ y / n
    yty = float(y @ y) / n

    beta = numpy.zeros(p) if beta_init is None else numpy.array(beta_init, dtype=float)
    trace = [_objective(gram, xty, yty, beta, lam)]
    gap = 0.0
    sweeps = 0
    converged = False
    for sweeps in range(1, max_sweeps + 1):
        gap = 0.0
        for j in range(p):
            old = beta[j]
            # partial residual correlation of column j
            z = xty[j] - gram[j] @ beta + gram[j, j] * old
            new = _soft_threshold(z, lam) / gram[j, j]
            if new != old:
                beta[j] = new
                gap = max(gap, abs(new - old))
        trace.append(_objective(gram, xty, yty, beta, lam))
        if gap < tol:
            converged = True
            break

    beta_orig, intercept = _unscale(beta, scale_info)
    residual = y - X @ beta
    fit = LassoFit(
        lambda_=float(lam),
        beta=beta_orig,
        intercept=intercept,
        df=int(numpy.count_nonzero(beta)),
        rss=float(residual @ residual),
        n=n,
        names=list(scale_info.names),
        beta_std=beta.copy(),
        sweeps=sweeps,
        objective_trace=trace,
    )
    if not converged:
        message = f"Coordinate descent did not converge in {max_sweeps} sweeps at lambda={lam:.4g} (gap {gap:.3g})"
        if strict:
            raise NoConvergence(message, gap, fit)
        logger.warning(f"{message}, keeping the last iterate")
    return fit


def lambda_max(std_design: DesignMatrix, y_centered: numpy.ndarray) -> float:
    """The smallest lambda at which every coefficient is zero, max_j |<x_j, y>| / n."""
    if std_design.p == 0:
        return 0.0
    return float(numpy.max(numpy.abs(std_design.values.T @ y_centered)) / std_design.n)


def lambda_path(
    std_design: DesignMatrix, y: numpy.ndarray, n_lambda: int = 100, ratio: float = 1e-4
) -> numpy.ndarray:
    """
    Log-spaced, strictly decreasing grid from lambda_max down to ratio * lambda_max.

    :raises AllZeroCorrelation: no column correlates with y
    """
    top = lambda_max(std_design, numpy.asarray(y, dtype=float))
    if not top > 0:
        raise AllZeroCorrelation("No predictor column correlates with the response")
    if n_lambda < 2:
        return numpy.array([top])
    grid = top * numpy.logspace(0, numpy.log10(ratio), n_lambda)
    grid[0] = top
    return grid


def fit_path(
    std_design: DesignMatrix,
    y_centered: numpy.ndarray,
    grid: Sequence[float],
    scale_info: Optional[ScaleInfo] = None,
    max_sweeps: int = 10_000,
) -> List[LassoFit]:
    """
    Fits along a decreasing grid, each warm started from the previous solution.

    A lambda whose descent hits ``max_sweeps`` keeps its last iterate with a warning,
    so near-collinear columns still give a complete path.
    """
    fits = []
    beta = None
    for lam in grid:
        fit = lasso_coordinate_descent(
            std_design, y_centered, lam, scale_info=scale_info, beta_init=beta, max_sweeps=max_sweeps, strict=False
        )
        beta = fit.beta_std
        fits.append(fit)
    return fits


def _fold_errors(
    design: DesignMatrix, y: numpy.ndarray, train: numpy.ndarray, test: numpy.ndarray, grid: numpy.ndarray
) -> numpy.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateColumnWarning)
        std_design, y_centered, info = standardize(design.take(train), y[train])
    fits = fit_path(std_design, y_centered, grid, scale_info=info)
    held_out = design.values[test]
    return numpy.array([numpy.mean((y[test] - fit.predict(held_out)) ** 2) for fit in fits])


def make_folds(n: int, k: int, scheme: CvScheme, seed: int = 0) -> List[Tuple[numpy.ndarray, numpy.ndarray]]:
    """Train/test index pairs: k contiguous segments, or a seeded random partition."""
    scheme = CvScheme(scheme)
    if scheme == CvScheme.RANDOM:
        splitter = KFold(n_splits=k, shuffle=True, random_state=seed % (2**32))
    else:
        splitter = KFold(n_splits=k, shuffle=False)
    return list(splitter.split(numpy.arange(n)))


def cross_validate(
    design: DesignMatrix,
    y: numpy.ndarray,
    grid: Sequence[float],
    k: int = 10,
    scheme: CvScheme = CvScheme.BLOCKS,
    seed: int = 0,
) -> CvResult:
    """
    k-fold cross-validation of the Lasso path on the raw (unstandardised) design.

    Every fold is standardised on its training rows and fitted along the grid with
    warm starts; the folds run in parallel through dask. The standard error of the
    curve is the standard deviation of the fold errors divided by sqrt(k).
    """
    y = numpy.asarray(y, dtype=float)
    grid = numpy.asarray(grid, dtype=float)
    if k < 2:
        raise ConfigError(f"Cross-validation needs at least 2 folds, got {k}")
    if design.n < 2 * k:
        raise TooFewRows(f"{k}-fold cross-validation needs at least {2 * k} rows, got {design.n}")

    folds = make_folds(design.n, k, scheme, seed)
    tasks = [dask.delayed(_fold_errors)(design, y, train, test, grid) for train, test in folds]
    fold_errors = numpy.vstack(dask.compute(*tasks))

    cv_mean = fold_errors.mean(axis=0)
    cv_se = fold_errors.std(axis=0, ddof=1) / numpy.sqrt(k)
    i_min = int(numpy.argmin(cv_mean))
    # the grid decreases, so the first index under the bound is the largest lambda
    i_1se = int(numpy.flatnonzero(cv_mean <= cv_mean[i_min] + cv_se[i_min])[0])

    return CvResult(
        lambda_grid=grid,
        cv_mean=cv_mean,
        cv_se=cv_se,
        lambda_min=float(grid[i_min]),
        lambda_1se=float(grid[i_1se]),
        fold_errors=fold_errors,
        k=k,
        scheme=CvScheme(scheme),
    )


def null_fit(y: numpy.ndarray, names: List[str]) -> LassoFit:
    """The intercept-only model: every coefficient zero, intercept mean(y)."""
    y = numpy.asarray(y, dtype=float)
    residual = y - y.mean()
    return LassoFit(
        lambda_=float("inf"),
        beta=numpy.zeros(len(names)),
        intercept=float(y.mean()),
        df=0,
        rss=float(residual @ residual),
        n=len(y),
        names=list(names),
        beta_std=numpy.zeros(0),
    )


@dataclass
class LassoSelection:
    """
    A cross-validated Lasso: the fit at the lambda picked by ``rule`` plus the
    fits at lambda_min and lambda_1se.
    """

    fit: LassoFit
    rule: LambdaRule
    cv: Optional[CvResult] = None
    fit_min: Optional[LassoFit] = None
    fit_1se: Optional[LassoFit] = None

    @property
    def support_nested(self) -> bool:
        """Whether the support at lambda_1se is contained in the support at lambda_min."""
        if self.fit_min is None or self.fit_1se is None:
            return True
        return set(self.fit_1se.support) <= set(self.fit_min.support)


def fit_cv(
    design: DesignMatrix,
    y: numpy.ndarray,
    rule: LambdaRule = LambdaRule.MIN,
    k: int = 10,
    scheme: CvScheme = CvScheme.BLOCKS,
    seed: int = 0,
    n_lambda: int = 100,
    ratio: float = 1e-4,
) -> LassoSelection:
    """
    Standardise, build the lambda grid, cross-validate, and refit on all rows at the chosen lambda.

    Falls back to the intercept-only model when no column carries information.
    """
    y = numpy.asarray(y, dtype=float)
    rule = LambdaRule(rule)
    std_design, y_centered, info = standardize(design, y)
    try:
        grid = lambda_path(std_design, y_centered, n_lambda, ratio)
    except AllZeroCorrelation:
        logger.warning("No predictor correlates with the response, using the intercept-only model")
        return LassoSelection(fit=null_fit(y, design.names), rule=rule)

    cv = cross_validate(design, y, grid, k=k, scheme=scheme, seed=seed)
    path = fit_path(std_design, y_centered, grid[: max(cv.index_min, cv.index_1se) + 1], scale_info=info)
    fit_min = path[cv.index_min]
    fit_1se = path[cv.index_1se]
    chosen = fit_1se if rule == LambdaRule.ONE_SE else fit_min

    selection = LassoSelection(fit=chosen, rule=rule, cv=cv, fit_min=fit_min, fit_1se=fit_1se)
    if not selection.support_nested:
        logger.warning(
            f"Support at lambda_1se {fit_1se.support} is not contained in the support at lambda_min {fit_min.support}"
        )
    logger.info(f"Lasso chose lambda={chosen.lambda_:.4g} ({rule.value}), {chosen.df} nonzero coefficient(s)")
    return selection


def _tss(y: numpy.ndarray) -> float:
    y = numpy.asarray(y, dtype=float)
    tss = float(numpy.sum((y - y.mean()) ** 2))
    if tss == 0:
        raise ZeroVarianceResponse("The response has zero variance")
    return tss


def r_squared_from_rss(rss: float, y: numpy.ndarray) -> float:
    return 1.0 - rss / _tss(y)


def gcv_from_rss(rss: float, n: int, df_eff: float) -> float:
    """(RSS / n) / (1 - df_eff / n)^2, infinite once df_eff reaches n."""
    if df_eff >= n:
        return float("inf")
    return (rss / n) / (1.0 - df_eff / n) ** 2


def r_squared(fit: LassoFit, y: numpy.ndarray) -> float:
    """In-sample R2 = 1 - RSS / TSS."""
    return r_squared_from_rss(fit.rss, y)


def gcv(fit: LassoFit, y: numpy.ndarray) -> float:
    """Generalised cross-validation with df_eff = nonzero coefficients + 1 for the intercept."""
    _tss(y)
    return gcv_from_rss(fit.rss, len(y), fit.df + 1)
