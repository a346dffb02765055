import numpy
import pandas
import pytest


def tone(n: int, period: float, amplitude: float = 1.0) -> numpy.ndarray:
    return amplitude * numpy.sin(2 * numpy.pi * numpy.arange(n) / period)


@pytest.fixture
def two_tone():
    """sin(2 pi t / 8) + sin(2 pi t / 64) with its two components."""
    n = 1024
    fast = tone(n, 8)
    slow = tone(n, 64)
    return fast + slow, fast, slow


@pytest.fixture
def csv_input(tmp_path):
    """A dated two-column CSV of 512 days and a matching config file."""
    n = 512
    rng = numpy.random.default_rng(7)
    slow = tone(n, 64)
    frame = pandas.DataFrame(
        {
            "date": pandas.date_range("2001-01-01", periods=n, freq="D").strftime("%Y-%m-%d"),
            "y": 2 * slow + rng.normal(0, 0.1, n),
            "x": slow + tone(n, 8),
        }
    )
    data = tmp_path / "data.csv"
    frame.to_csv(data, index=False, float_format="%.17g")

    config = tmp_path / "run.cfg"
    config.write_text(
        "\n".join(
            [
                "# two tone fixture",
                "response = y",
                "predictors = x",
                "date_column = date",
                "n_directions = 16",
                "max_sift_iters = 30",
                "cv_folds = 5",
                "n_lambda = 30",
                "bootstrap_reps = 10",
                "seed = 3",
            ]
        )
    )
    return data, config
