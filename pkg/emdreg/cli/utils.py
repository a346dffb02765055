import datetime
import json
import logging
import pathlib
import pickle
import re
from typing import Dict, List, Optional, Tuple

import numpy
import pandas

from emdreg.config import Design, RunConfig
from emdreg.emd import MissingDateLabel, amplitude_by_day_of_year
from emdreg.emdr import TREND, EmdrModel, coefficient_table, diagnostics, sensitivities
from emdreg.errors import ConfigError, DataError
from emdreg.memd import MultichannelSeries, MultivariateDecomposition
from emdreg.series import SeriesTooShort, TimeSeries

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
MODELS_FILE = "models.pkl"
MANIFEST_FILE = "manifest.json"


class ParseError(DataError):
    def __init__(self, row: int, column: Optional[str], reason: str):
        self.row = row
        self.column = column
        self.reason = reason
        where = f"row {row}" if column is None else f"row {row}, column '{column}'"
        super().__init__(f"{where}: {reason}")


class DateGap(DataError):
    def __init__(self, row: int, message: str):
        self.row = row
        super().__init__(f"row {row}: {message}")


class MissingColumn(ConfigError):
    pass


def _numeric_column(frame: pandas.DataFrame, column: str) -> numpy.ndarray:
    cells = frame[column].str.strip()
    values = pandas.to_numeric(cells, errors="coerce").to_numpy(dtype=float)
    for i in numpy.flatnonzero(~numpy.isfinite(values)):
        # the header is row 1
        row = int(i) + 2
        if cells.iloc[i] == "":
            raise ParseError(row, column, "missing value")
        if numpy.isnan(values[i]):
            raise ParseError(row, column, f"'{cells.iloc[i]}' is not a number")
        raise ParseError(row, column, f"'{cells.iloc[i]}' is not finite")
    return values


def _date_column(frame: pandas.DataFrame, column: str) -> datetime.date:
    cells = frame[column].str.strip()
    dates = pandas.to_datetime(cells, format="%Y-%m-%d", errors="coerce")
    for i in numpy.flatnonzero(dates.isna().to_numpy()):
        raise ParseError(int(i) + 2, column, f"'{cells.iloc[i]}' is not an ISO-8601 date")
    steps = dates.diff().dt.days.to_numpy()[1:]
    for i in numpy.flatnonzero(steps != 1):
        raise DateGap(
            int(i) + 3, f"date {cells.iloc[i + 1]} does not follow {cells.iloc[i]} by exactly one day"
        )
    return dates.iloc[0].date()


def ingest_csv(path: pathlib.Path, config: RunConfig) -> Tuple[TimeSeries, MultichannelSeries]:
    """
    Read the response and the predictors from a CSV file with a header row.

    Rows are numbered as lines of the file, the header being row 1.

    Raises:
        ParseError: an empty, non-numeric or non-finite cell, an unreadable date, a file
            that is not UTF-8 text or a malformed row
        DateGap: the dates are not consecutive days
        MissingColumn: a configured column is absent from the header
    """
    path = pathlib.Path(path)
    try:
        frame = pandas.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pandas.errors.EmptyDataError:
        raise ParseError(1, None, f"{path} is empty") from None
    except UnicodeDecodeError as error:
        row = path.read_bytes()[: error.start].count(b"\n") + 1
        raise ParseError(row, None, f"{path} is not UTF-8 text ({error.reason} at byte {error.start})") from None
    except pandas.errors.ParserError as error:
        line = re.search(r"line (\d+)", str(error))
        row = int(line.group(1)) if line else 1
        raise ParseError(row, None, f"{path} is not a well-formed CSV file: {error}") from None
    frame.columns = [str(name).strip() for name in frame.columns]

    wanted = [config.response] + list(config.predictors)
    if config.date_column is not None:
        wanted.append(config.date_column)
    missing = [column for column in wanted if column not in frame.columns]
    if missing:
        raise MissingColumn(f"{path} has no column(s) {missing}, found {list(frame.columns)}")
    if len(frame) == 0:
        raise ParseError(2, None, f"{path} has no data rows")

    start = _date_column(frame, config.date_column) if config.date_column is not None else None
    y = TimeSeries(_numeric_column(frame, config.response), start_label=start, name=config.response)
    predictors = MultichannelSeries(
        [TimeSeries(_numeric_column(frame, name), start_label=start, name=name) for name in config.predictors]
    )
    logger.info(f"Read {len(y)} rows of '{config.response}' and {predictors.names} from {path}")
    return y, predictors


def write_decomposition(
    decomposition: MultivariateDecomposition, output: pathlib.Path, prefix: str = "decomposition"
) -> List[pathlib.Path]:
    """One CSV per channel with the columns t, imf_1 ... imf_K, residue."""
    written = []
    for name, channel in decomposition.per_channel.items():
        frame = channel.to_frame()
        frame.insert(0, "t", numpy.arange(channel.source_len))
        target = output / f"{prefix}_{name}.csv"
        frame.to_csv(target, index=False, float_format=FLOAT_FORMAT)
        written.append(target)
    return written


def save_models(models: Dict[str, EmdrModel], output: pathlib.Path):
    with open(output / MODELS_FILE, "wb") as handle:
        pickle.dump(models, handle)


def load_models(bundle: pathlib.Path) -> Dict[str, EmdrModel]:
    path = pathlib.Path(bundle) / MODELS_FILE
    if not path.exists():
        raise ConfigError(f"{bundle} is not a result bundle, {MODELS_FILE} is missing")
    with open(path, "rb") as handle:
        return pickle.load(handle)


def write_tables(models: Dict[str, EmdrModel], output: pathlib.Path):
    """model.csv with every coefficient, lags.csv and diagnostics.csv."""
    coefficients, lags, scores = [], [], []
    for design, model in models.items():
        for frame, collected in (
            (coefficient_table(model), coefficients),
            (model.lags.to_frame(), lags),
            (diagnostics(model), scores),
        ):
            frame = frame.copy()
            if "design" not in frame.columns:
                frame.insert(0, "design", design)
            collected.append(frame)

    pandas.concat(coefficients, ignore_index=True).to_csv(output / "model.csv", index=False, float_format=FLOAT_FORMAT)
    pandas.concat(lags, ignore_index=True).to_csv(output / "lags.csv", index=False, float_format=FLOAT_FORMAT)
    pandas.concat(scores, ignore_index=True).to_csv(output / "diagnostics.csv", index=False, float_format=FLOAT_FORMAT)


def _versions() -> Dict[str, str]:
    import dask
    import pydantic
    import scipy
    import sklearn

    import emdreg

    return {
        "emdreg": emdreg.__version__,
        "numpy": numpy.__version__,
        "scipy": scipy.__version__,
        "pandas": pandas.__version__,
        "scikit-learn": sklearn.__version__,
        "dask": dask.__version__,
        "pydantic": pydantic.VERSION,
    }


def write_manifest(
    output: pathlib.Path,
    command: str,
    config: Optional[RunConfig],
    warnings: List[str],
    extra: Optional[dict] = None,
):
    """
    Record the run in manifest.json. Entries of earlier commands on the same bundle are kept
    under ``history``.
    """
    path = output / MANIFEST_FILE
    history = []
    if path.exists():
        previous = json.loads(path.read_text())
        history = previous.pop("history", []) + [previous]
        if config is None and previous.get("config") is not None:
            config = RunConfig.build(**previous["config"])

    manifest = {
        "command": command,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "config": config.manifest() if config is not None else None,
        "seed": config.seed if config is not None else None,
        "versions": _versions(),
        "warnings": warnings,
    }
    if extra:
        manifest.update(extra)
    if history:
        manifest["history"] = history
    path.write_text(json.dumps(manifest, indent=2))


def sensitivity_report(models: Dict[str, EmdrModel]) -> pandas.DataFrame:
    """
    The retained terms by mean period: log2 of the period for IMF terms, "r" for trend terms.
    """
    frames = []
    for design, model in models.items():
        table = sensitivities(model)
        if table.empty:
            continue
        table.insert(0, "design", design)
        table["log2_period"] = [
            "r" if order is None or pandas.isna(order) else format(numpy.log2(period), ".17g")
            for order, period in zip(table["order"], table["mean_period"])
        ]
        frames.append(table)
    if not frames:
        return pandas.DataFrame(columns=["design", "submodel", "term", "log2_period", "sensitivity"])
    return pandas.concat(frames, ignore_index=True)


def amplitude_report(models: Dict[str, EmdrModel]) -> Optional[pandas.DataFrame]:
    """
    Mean instantaneous amplitude by day of year of the predictor IMFs behind the significant
    terms, or of every retained IMF term when no bootstrap was run.

    Returns None when the series carry no dates or are shorter than a year.
    """
    columns = {}
    for design, model in models.items():
        table = sensitivities(model)
        if table.empty:
            continue
        if "significant" in table.columns:
            table = table[table["significant"].fillna(False).astype(bool)]
        else:
            logger.warning(f"No bootstrap on the {design} model, profiling every retained IMF")
        for _, row in table.iterrows():
            if row["term"].endswith(f"_{TREND}"):
                continue
            imf = model.decomposition[row["predictor"]].imfs[int(row["order"]) - 1]
            try:
                columns[f"{design}:{row['submodel']}:{row['term']}"] = amplitude_by_day_of_year(imf)
            except (MissingDateLabel, SeriesTooShort) as error:
                logger.warning(f"Skipping the day-of-year amplitude report: {error}")
                return None

    frame = pandas.DataFrame(columns)
    frame.insert(0, "day_of_year", numpy.arange(1, 367))
    return frame


def write_report(models: Dict[str, EmdrModel], output: pathlib.Path) -> List[pathlib.Path]:
    written = []
    target = output / "report_sensitivity.csv"
    sensitivity_report(models).to_csv(target, index=False, float_format=FLOAT_FORMAT)
    written.append(target)

    amplitudes = amplitude_report(models)
    if amplitudes is not None:
        target = output / "report_amplitude_doy.csv"
        amplitudes.to_csv(target, index=False, float_format=FLOAT_FORMAT)
        written.append(target)

    target = output / "report_diagnostics.csv"
    frames = [diagnostics(model) for model in models.values()]
    pandas.concat(frames, ignore_index=True).to_csv(target, index=False, float_format=FLOAT_FORMAT)
    written.append(target)
    return written


def designs_to_fit(design: Design) -> List[Design]:
    if design == Design.BOTH:
        return [Design.R1, Design.R2]
    return [design]
