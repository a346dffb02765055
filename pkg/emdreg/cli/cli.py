import functools
import logging
import os
import pathlib
import sys
from typing import List, Optional

import click
import dask

from emdreg.cli.utils import (
    designs_to_fit,
    ingest_csv,
    load_models,
    save_models,
    write_decomposition,
    write_manifest,
    write_report,
    write_tables,
)
from emdreg.config import Design, RunConfig
from emdreg.errors import ConfigError, EmdRegError

logger = logging.getLogger(__name__)

UNEXPECTED_EXIT_CODE = 1


class WarningCollector(logging.Handler):
    """Keeps every warning logged during a command so it can be written to the manifest."""

    def __init__(self):
        super().__init__(level=logging.WARNING)
        self.messages: List[str] = []

    def emit(self, record: logging.LogRecord):
        self.messages.append(f"{record.name}: {record.getMessage()}")


def _reports_errors(command):
    """
    Turn library errors into a one-line diagnostic and the exit code of their family.
    Anything else is reported the same way under its class name and exits with 1,
    the traceback goes to the debug log.
    """

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except EmdRegError as error:
            click.echo(f"error [{error.code}]: {error}", err=True)
            sys.exit(error.exit_code)
        except click.ClickException:
            raise
        except Exception as error:
            logger.debug("Unexpected failure", exc_info=True)
            click.echo(f"error [{type(error).__name__}]: {error}", err=True)
            sys.exit(UNEXPECTED_EXIT_CODE)

    return wrapper


def _setup(ctx: click.Context) -> WarningCollector:
    collector = WarningCollector()
    logging.getLogger().addHandler(collector)
    ctx.call_on_close(lambda: logging.getLogger().removeHandler(collector))
    return collector


def _load_config(ctx: click.Context, config: pathlib.Path, **overrides) -> RunConfig:
    options = ctx.obj
    run_config = RunConfig.from_file(config, seed=options["seed"], threads=options["threads"], **overrides)
    if run_config.threads is not None:
        dask.config.set(num_workers=run_config.threads)
    return run_config


def _output_dir(out: Optional[pathlib.Path], config: RunConfig) -> pathlib.Path:
    if out is None and config.output_dir is None:
        raise ConfigError("No output folder: pass --out or set output_dir in the config")
    output = pathlib.Path(out if out is not None else config.output_dir)
    output.mkdir(parents=True, exist_ok=True)
    return output


def _threads(value: Optional[str]) -> Optional[int]:
    if value is None or value == "auto":
        return None
    try:
        threads = int(value)
    except ValueError:
        raise click.BadParameter(f"expected a positive integer or 'auto', got '{value}'") from None
    if threads < 1:
        raise click.BadParameter(f"expected a positive integer or 'auto', got '{value}'")
    return threads


@click.group()
@click.option("--seed", type=int, default=None, help="The master seed, overrides the seed of the config file.")
@click.option(
    "--threads",
    type=str,
    default=None,
    help="The number of worker threads for the parallel fits, or 'auto' to use every core.",
)
@click.option("--quiet", is_flag=True, default=False, help="Only report warnings and errors, hide progress bars.")
@click.pass_context
def cli(ctx: click.Context, seed: Optional[int], threads: Optional[str], quiet: bool):
    """
    EMD-regression: relate a response series to the intrinsic mode functions of its predictors.
    """
    logging.basicConfig(
        level=logging.WARNING if quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    logging.captureWarnings(True)
    thread_count = _threads(threads)
    dask.config.set(scheduler="threads", num_workers=thread_count or os.cpu_count())
    ctx.ensure_object(dict)
    ctx.obj.update(seed=seed, threads=thread_count, quiet=quiet)


_input_option = click.option(
    "-i",
    "--input",
    "input_path",
    required=True,
    type=click.Path(exists=True, file_okay=True, dir_okay=False, path_type=pathlib.Path),
    help="The CSV file with a header row holding the response and the predictor columns.",
)
_config_option = click.option(
    "-c",
    "--config",
    required=True,
    type=click.Path(exists=True, file_okay=True, dir_okay=False, path_type=pathlib.Path),
    help="The flat key = value config file of the run.",
)
_out_option = click.option(
    "-o",
    "--out",
    type=click.Path(file_okay=False, dir_okay=True, path_type=pathlib.Path),
    default=None,
    help="The name of the output folder, overrides output_dir of the config.",
)
_bundle_option = click.option(
    "-b",
    "--bundle",
    required=True,
    type=click.Path(exists=True, file_okay=False, dir_okay=True, path_type=pathlib.Path),
    help="The result folder written by the fit command.",
)


@cli.command()
@_input_option
@_config_option
@_out_option
@click.pass_context
@_reports_errors
def decompose(ctx: click.Context, input_path: pathlib.Path, config: pathlib.Path, out: Optional[pathlib.Path]):
    """
    Decompose the response and the predictors jointly with the noise-assisted multivariate EMD.
    """
    from emdreg.emdr import decompose_channels
    from emdreg.memd import MultichannelSeries

    collector = _setup(ctx)
    run_config = _load_config(ctx, config)
    output = _output_dir(out, run_config)
    y, predictors = ingest_csv(input_path, run_config)

    decomposition = decompose_channels(MultichannelSeries([y] + list(predictors.channels)), run_config)
    written = write_decomposition(decomposition, output)
    write_manifest(output, "decompose", run_config, collector.messages, {"n_imfs": decomposition.K})
    click.echo(f"{decomposition.K} IMFs per channel written to {len(written)} files in {output}")


@cli.command()
@click.option(
    "-d",
    "--design",
    type=click.Choice([design.value for design in Design]),
    default=None,
    help="The regression design, overrides the design of the config.",
)
@_input_option
@_config_option
@_out_option
@click.pass_context
@_reports_errors
def fit(
    ctx: click.Context,
    design: Optional[str],
    input_path: pathlib.Path,
    config: pathlib.Path,
    out: Optional[pathlib.Path],
):
    """
    Fit the EMD-R1 and/or EMD-R2 models and write the result bundle.
    """
    from emdreg.emdr import fit_emdr1, fit_emdr2

    collector = _setup(ctx)
    run_config = _load_config(ctx, config, design=design)
    output = _output_dir(out, run_config)
    y, predictors = ingest_csv(input_path, run_config)

    models = {}
    for chosen in designs_to_fit(run_config.design):
        click.echo(f"Fitting the {chosen.value} design")
        if chosen == Design.R1:
            model = fit_emdr1(y, predictors, run_config)
        else:
            model = fit_emdr2(y, predictors, run_config)
        write_decomposition(model.decomposition, output, prefix=f"decomposition_{chosen.value}")
        models[chosen.value] = model

    save_models(models, output)
    write_tables(models, output)
    write_manifest(output, "fit", run_config, collector.messages)
    click.echo(f"Result bundle written to {output}")


@cli.command()
@_bundle_option
@click.option("-r", "--reps", type=int, default=None, help="The number of bootstrap replications, 500 by default.")
@click.option(
    "-l",
    "--block-len",
    type=str,
    default="auto",
    help="The block length in samples, or 'auto' for ceil(n^(1/3)).",
)
@click.pass_context
@_reports_errors
def bootstrap(ctx: click.Context, bundle: pathlib.Path, reps: Optional[int], block_len: str):
    """
    Add moving-block bootstrap confidence intervals to a fitted bundle.
    """
    from emdreg.emdr import block_bootstrap

    collector = _setup(ctx)
    if block_len == "auto":
        length = None
    else:
        try:
            length = int(block_len)
        except ValueError:
            raise ConfigError(f"--block-len expects an integer or 'auto', got '{block_len}'") from None

    models = load_models(bundle)
    for name, model in models.items():
        seed = ctx.obj["seed"]
        result = block_bootstrap(model, B=reps, block_len=length, seed=seed, progress=not ctx.obj["quiet"])
        click.echo(f"{name}: {int(result.table['significant'].sum())} significant coefficient(s)")

    save_models(models, bundle)
    write_tables(models, bundle)
    first = next(iter(models.values())).bootstrap
    write_manifest(
        bundle,
        "bootstrap",
        None,
        collector.messages,
        {"bootstrap": {"reps": first.B, "block_len": first.block_len, "seed": first.seed}},
    )


@cli.command()
@_bundle_option
@click.pass_context
@_reports_errors
def report(ctx: click.Context, bundle: pathlib.Path):
    """
    Write the plot data: sensitivities by period, day-of-year amplitudes and the fit diagnostics.
    """
    collector = _setup(ctx)
    models = load_models(bundle)
    written = write_report(models, bundle)
    write_manifest(bundle, "report", None, collector.messages, {"report_files": [path.name for path in written]})
    click.echo(f"Report tables written: {', '.join(path.name for path in written)}")
