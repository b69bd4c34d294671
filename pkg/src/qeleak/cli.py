"""qeleak command line: pipeline stages over a run directory.

Exit codes: 0 ok, 1 usage or pipeline-state error, 2 data error,
3 provider error.
"""

import logging
import sys

import click

from .core import RunConfig
from .errors import DataError, PipelineStateError, ProviderError
from .pipeline import STAGES, run_all, run_stage

logger = logging.getLogger(__name__)


def _apply_overrides(config: RunConfig, method, k, repeats, exhaustive) -> RunConfig:
    raw = config.as_dict()
    if method is not None:
        raw["method"] = method
    if k is not None:
        raw["k"] = k
    if repeats is not None:
        raw["repeats"] = repeats
    if exhaustive is not None:
        raw["exhaustive"] = exhaustive
    return RunConfig.from_dict(raw)


def _common_options(fn):
    fn = click.option("--config", "config_path", required=True,
                      type=click.Path(exists=True, dir_okay=False),
                      help="Run config JSON.")(fn)
    fn = click.option("--run-dir", required=True, type=click.Path(file_okay=False),
                      help="Run directory owning all stage outputs.")(fn)
    fn = click.option("--cache-dir", default=None, type=click.Path(file_okay=False),
                      help="Provider response cache directory.")(fn)
    fn = click.option("--method", default=None, type=click.Choice(["query2doc", "hyde"]))(fn)
    fn = click.option("--k", default=None, type=int, help="Retrieval depth.")(fn)
    fn = click.option("--repeats", default=None, type=int, help="Generation repeats.")(fn)
    fn = click.option("--mock", is_flag=True, help="Use the seeded offline mock provider.")(fn)
    fn = click.option("--exhaustive", default=None, type=bool,
                      help="Judge every NLI pair (no short-circuit).")(fn)
    fn = click.option("--force", is_flag=True,
                      help="Re-run the stage and accept config changes.")(fn)
    return fn


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def cli(verbose: bool):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _run(stage, config_path, run_dir, cache_dir, method, k, repeats, mock,
         exhaustive, force):
    config = _apply_overrides(RunConfig.from_json(config_path), method, k, repeats, exhaustive)
    if stage == "all":
        run_all(config, run_dir, mock=mock, cache_dir=cache_dir, force=force)
    else:
        run_stage(stage, config, run_dir, mock=mock, cache_dir=cache_dir, force=force)
    click.echo(f"{stage}: ok")


def _make_command(stage: str):
    @_common_options
    def command(config_path, run_dir, cache_dir, method, k, repeats, mock,
                exhaustive, force):
        _run(stage, config_path, run_dir, cache_dir, method, k, repeats, mock,
             exhaustive, force)

    command.__name__ = stage
    doc = {
        "ingest": "Load and validate claims and corpus.",
        "index": "Build the lexical or dense index for the configured method.",
        "expand": "Generate pseudo-documents (R repeats per claim).",
        "retrieve": "Run baseline and expanded retrieval.",
        "match": "Run the entailment matching over generated sentences.",
        "verdict": "Predict veracity labels from retrieved evidence.",
        "report": "Assemble the stratified report.",
        "all": "Run every stage in order.",
    }[stage]
    return cli.command(name=stage, help=doc)(command)


for _stage in STAGES + ("all",):
    _make_command(_stage)


def main() -> int:
    try:
        cli.main(standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except PipelineStateError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2
    except ProviderError as exc:
        click.echo(f"provider error: {exc}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
