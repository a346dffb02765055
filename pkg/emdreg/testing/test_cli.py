import json

import numpy
import pandas
import pytest
from click.testing import CliRunner

from emdreg.cli.cli import cli
from emdreg.cli.utils import DateGap, MissingColumn, ParseError, ingest_csv
from emdreg.config import Design, RunConfig
from emdreg.errors import ConfigError
from emdreg.series import PlateauRule


@pytest.fixture
def small_config():
    return RunConfig(response="deaths", predictors=["temp"], date_column="date")


def write_rows(path, rows):
    path.write_text("\n".join(["date,deaths,temp"] + rows) + "\n")
    return path


def valid_rows(n=10):
    return [f"2001-01-{day:02d},{10 + day},{-5.5 + day / 2}" for day in range(1, n + 1)]


def test_ingest_valid_csv(tmp_path, small_config):
    path = write_rows(tmp_path / "data.csv", valid_rows())
    y, predictors = ingest_csv(path, small_config)
    assert len(y) == 10
    assert y.name == "deaths"
    assert predictors.names == ["temp"]
    assert y.start_label.isoformat() == "2001-01-01"
    assert predictors.channels[0].values[0] == pytest.approx(-5.0)


def test_ingest_empty_cell(tmp_path, small_config):
    rows = valid_rows()
    rows[1] = "2001-01-02,12,"
    with pytest.raises(ParseError) as error:
        ingest_csv(write_rows(tmp_path / "data.csv", rows), small_config)
    assert error.value.row == 3
    assert error.value.column == "temp"


def test_ingest_non_numeric_cell(tmp_path, small_config):
    rows = valid_rows()
    rows[4] = "2001-01-05,many,1.0"
    with pytest.raises(ParseError) as error:
        ingest_csv(write_rows(tmp_path / "data.csv", rows), small_config)
    assert error.value.row == 6
    assert error.value.column == "deaths"


def test_ingest_date_gap(tmp_path, small_config):
    path = write_rows(tmp_path / "data.csv", ["2001-01-01,1,2", "2001-01-03,1,2"])
    with pytest.raises(DateGap) as error:
        ingest_csv(path, small_config)
    assert error.value.row == 3


def test_ingest_missing_column(tmp_path):
    path = write_rows(tmp_path / "data.csv", valid_rows())
    config = RunConfig(response="deaths", predictors=["humidity"])
    with pytest.raises(MissingColumn):
        ingest_csv(path, config)


def test_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nresponse = deaths\npredictors = temp, humidity  # two\n\ndesign = r2\nblock_len = none\nplateau = first\n")
    config = RunConfig.from_file(path, seed=9)
    assert config.predictors == ["temp", "humidity"]
    assert config.design == Design.R2
    assert config.block_len is None
    assert config.sift_params().plateau == PlateauRule.FIRST
    assert config.seed == 9
    # untouched defaults are listed in the manifest
    manifest = config.manifest()
    assert manifest["n_directions"] == 128
    assert manifest["noise_variance_ratio"] == 0.1
    assert manifest["bootstrap_reps"] == 500


@pytest.mark.parametrize(
    "text",
    [
        "response = y\npredictors = x\ncolour = blue\n",
        "response = y\npredictors = y\n",
        "response = y\npredictors = x\ntheta1 = 0.9\n",
        "response = y\npredictors = x\nresponse = z\n",
        "response y\n",
    ],
)
def test_bad_config_files(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    with pytest.raises(ConfigError):
        RunConfig.from_file(path)


def test_decompose_round_trip(tmp_path, csv_input):
    data, config = csv_input
    out = tmp_path / "decomposition"
    result = CliRunner().invoke(cli, ["--quiet", "decompose", "-i", str(data), "-c", str(config), "-o", str(out)])
    assert result.exit_code == 0, result.output

    source = pandas.read_csv(data)
    for column in ("y", "x"):
        frame = pandas.read_csv(out / f"decomposition_{column}.csv")
        assert frame.columns[0] == "t"
        assert frame.columns[-1] == "residue"
        total = frame.drop(columns="t").sum(axis=1).to_numpy()
        numpy.testing.assert_allclose(total, source[column].to_numpy(), atol=1e-8)

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 3
    assert manifest["config"]["n_directions"] == 16
    assert "numpy" in manifest["versions"]


def test_fit_bootstrap_report(tmp_path, csv_input):
    data, config = csv_input
    runner = CliRunner()
    bundles = []
    for name in ("first", "second"):
        out = tmp_path / name
        result = runner.invoke(cli, ["--quiet", "--threads", "2", "fit", "-i", str(data), "-c", str(config), "-o", str(out)])
        assert result.exit_code == 0, result.output
        bundles.append(out)

    for table in ("model.csv", "diagnostics.csv", "lags.csv", "decomposition_r2_y.csv"):
        assert (bundles[0] / table).read_bytes() == (bundles[1] / table).read_bytes()

    diagnostics = pandas.read_csv(bundles[0] / "diagnostics.csv")
    assert set(diagnostics["design"]) == {"r1", "r2"}

    result = runner.invoke(cli, ["--quiet", "bootstrap", "-b", str(bundles[0]), "--reps", "10"])
    assert result.exit_code == 0, result.output
    model = pandas.read_csv(bundles[0] / "model.csv")
    assert {"beta_lower", "beta_upper", "significant"} <= set(model.columns)

    result = runner.invoke(cli, ["--quiet", "report", "-b", str(bundles[0])])
    assert result.exit_code == 0, result.output
    sensitivity = pandas.read_csv(bundles[0] / "report_sensitivity.csv")
    assert "log2_period" in sensitivity.columns
    assert (bundles[0] / "report_diagnostics.csv").exists()
    assert (bundles[0] / "report_amplitude_doy.csv").exists()

    manifest = json.loads((bundles[0] / "manifest.json").read_text())
    assert manifest["command"] == "report"
    assert [entry["command"] for entry in manifest["history"]] == ["fit", "bootstrap"]


def test_exit_codes(tmp_path, csv_input):
    data, _ = csv_input
    runner = CliRunner()

    config = tmp_path / "bad.cfg"
    config.write_text("response = y\npredictors = x\nunknown_key = 1\n")
    result = runner.invoke(cli, ["decompose", "-i", str(data), "-c", str(config), "-o", str(tmp_path / "o")])
    assert result.exit_code == 2
    assert "error [errors.ConfigError]" in result.output

    config.write_text("response = y\npredictors = rain\n")
    result = runner.invoke(cli, ["decompose", "-i", str(data), "-c", str(config), "-o", str(tmp_path / "o")])
    assert result.exit_code == 2
    assert "cli.utils.MissingColumn" in result.output

    broken = tmp_path / "broken.csv"
    broken.write_text("y,x\n1,2\n3,\n")
    config.write_text("response = y\npredictors = x\n")
    result = runner.invoke(cli, ["decompose", "-i", str(broken), "-c", str(config), "-o", str(tmp_path / "o")])
    assert result.exit_code == 3
    assert "row 3, column 'x'" in result.output

    result = runner.invoke(cli, ["report", "-b", str(tmp_path)])
    assert result.exit_code == 2


def test_ingest_undecodable_bytes(tmp_path, small_config):
    path = tmp_path / "data.csv"
    path.write_bytes(b"date,deaths,temp\n" + b"\xff\xfe2001-01-01,1,2\n")
    with pytest.raises(ParseError) as error:
        ingest_csv(path, small_config)
    assert "UTF-8" in error.value.reason


def test_ingest_ragged_row(tmp_path, small_config):
    rows = valid_rows()
    rows[2] = "2001-01-03,13,-4.0,7,8"
    with pytest.raises(ParseError) as error:
        ingest_csv(write_rows(tmp_path / "data.csv", rows), small_config)
    assert error.value.row == 4


def test_unreadable_input_exit_code(tmp_path, csv_input):
    _, config = csv_input
    data = tmp_path / "binary.csv"
    data.write_bytes(b"\xff\xfe\x00y\x00,\x00x\x00\n")
    result = CliRunner().invoke(cli, ["decompose", "-i", str(data), "-c", str(config), "-o", str(tmp_path / "o")])
    assert result.exit_code == 3
    assert "error [cli.utils.ParseError]" in result.output
    assert "Traceback" not in result.output


def test_unexpected_failure_is_one_line(tmp_path, csv_input, monkeypatch):
    data, config = csv_input

    def broken(*args, **kwargs):
        raise RuntimeError("disk vanished")

    monkeypatch.setattr("emdreg.cli.cli.ingest_csv", broken)
    result = CliRunner().invoke(cli, ["decompose", "-i", str(data), "-c", str(config), "-o", str(tmp_path / "o")])
    assert result.exit_code == 1
    assert "error [RuntimeError]: disk vanished" in result.output


def test_report_flags_only_the_planted_scale(tmp_path, csv_input):
    data, config = csv_input
    out = tmp_path / "bundle"
    runner = CliRunner()
    for arguments in (
        ["fit", "-d", "r1", "-i", str(data), "-c", str(config), "-o", str(out)],
        ["bootstrap", "-b", str(out), "--reps", "30"],
        ["report", "-b", str(out)],
    ):
        result = runner.invoke(cli, ["--quiet"] + arguments)
        assert result.exit_code == 0, result.output

    sensitivity = pandas.read_csv(out / "report_sensitivity.csv")
    significant = sensitivity[sensitivity["significant"].astype(bool)]
    assert len(significant) >= 1
    # the planted tone has a period of 64 days
    assert significant["mean_period"].between(48, 80).all()
