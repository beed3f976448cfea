# geoapportion/main.py
import logging
import sys
from functools import wraps
from pathlib import Path
from typing import List, Optional

import typer
from pydantic import ValidationError

from geoapportion.config import WORKERS_ENV, EstimatorConfig, RunConfig, StudyDesign
from geoapportion.errors import ApportionError
from geoapportion.estimator import apportion
from geoapportion.evaluation import (
    attribution_metrics,
    convergence_study,
    phi_scatter_frame,
    records_frame,
    summarize,
)
from geoapportion.io import (
    METRICS_FILE,
    PHI_HAT_FILE,
    PHI_SCATTER_FILE,
    SUMMARY_FILE,
    load_concentrations,
    load_ground_truth,
    read_attribution,
    write_estimate,
    write_frame,
    write_manifest,
    write_simulation,
)
from geoapportion.synthgen import RngSpec, make_ground_truth

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# ---------------------------------------------------------
#  CLI CONFIG
# ---------------------------------------------------------
app = typer.Typer(
    add_completion=False,
    no_args_is_help=True,
    help="Source apportionment of multipollutant concentrations by convex geometry.",
)


@app.callback()
def main(verbose: bool = typer.Option(False, "--verbose", "-v", help="Log at DEBUG instead of INFO.")):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=LOG_FORMAT,
        stream=sys.stderr,
        force=True,
    )


def _reports_errors(command):
    """Exit 1 with `error category=<c> stage=<s>` and a detail line on stderr."""

    @wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except ApportionError as exc:
            typer.echo(f"error category={exc.category} stage={exc.stage or '-'}", err=True)
            typer.echo(str(exc), err=True)
        except (ValidationError, ValueError) as exc:
            typer.echo("error category=invalid_config stage=-", err=True)
            typer.echo(str(exc).replace("\n", " "), err=True)
        except OSError as exc:
            typer.echo("error category=io_error stage=-", err=True)
            typer.echo(str(exc), err=True)
        raise typer.Exit(code=1)

    return wrapper


def _estimator_config(**fields) -> EstimatorConfig:
    return EstimatorConfig(**{k: v for k, v in fields.items() if v is not None})


# ---------------------------------------------------------
#  COMMANDS
# ---------------------------------------------------------
@app.command()
@_reports_errors
def simulate(
    out: Path = typer.Option(..., "--out", help="Output directory."),
    process: str = typer.Option("ar1", "--process", help="ar1 or mixture."),
    n: int = typer.Option(300, "--n", min=1, help="Number of records."),
    J: int = typer.Option(8, "--J", help="Number of pollutants."),
    K: int = typer.Option(3, "--K", help="Number of sources."),
    seed: int = typer.Option(0, "--seed", min=0, help="Master seed."),
    replicate: int = typer.Option(0, "--replicate", min=0),
    plant_corners: bool = typer.Option(False, "--plant-corners", help="Append one pure-source record per source."),
    n_candidates: Optional[int] = typer.Option(None, "--n-candidates"),
):
    """Draw a synthetic Y = W H together with its ground truth."""
    design = StudyDesign(
        process=process, J=J, K=K, n_grid=(n,), replicates=1, master_seed=seed,
        plant_corners=plant_corners, n_candidates=n_candidates,
    )
    Y, truth = make_ground_truth(
        n, J, K, process, RngSpec.for_replicate(seed, replicate),
        plant_corners=plant_corners, n_candidates=n_candidates,
    )
    write_simulation(Y, truth, out)
    config = RunConfig(command="simulate", output_dir=str(out), design=design, n=n, replicate=replicate, master_seed=seed)
    write_manifest(config, out)


@app.command()
@_reports_errors
def estimate(
    input_path: Path = typer.Option(..., "--input", exists=True, dir_okay=False, help="Concentration CSV."),
    out: Path = typer.Option(..., "--out", help="Output directory."),
    K: int = typer.Option(..., "--K", help="Number of sources."),
    search: str = typer.Option("auto", "--search", help="greedy, exhaustive or auto."),
    prune: bool = typer.Option(False, "--prune"),
    cluster_count: Optional[int] = typer.Option(None, "--cluster-count"),
    mean_method: str = typer.Option("affine", "--mean-method", help="affine or projected."),
    epsilon_clip: Optional[float] = typer.Option(None, "--epsilon-clip"),
    rank_cap: Optional[int] = typer.Option(None, "--rank-cap"),
    exhaustive_budget: Optional[int] = typer.Option(None, "--exhaustive-budget"),
    zero_rows: str = typer.Option("drop", "--zero-rows", help="drop or error."),
    truth: Optional[Path] = typer.Option(None, "--truth", exists=True, file_okay=False, help="Simulation directory."),
):
    """Estimate H*, the source means and Phi from a concentration file."""
    cfg = _estimator_config(
        K=K, search=search, prune=prune, cluster_count=cluster_count, mean_method=mean_method,
        epsilon_clip=epsilon_clip, rank_cap=rank_cap, exhaustive_budget=exhaustive_budget,
        zero_row_policy=zero_rows,
    )
    Y = load_concentrations(input_path)
    result = apportion(Y, cfg)

    ground_truth, metrics = None, None
    if truth is not None:
        ground_truth = load_ground_truth(truth)
        metrics, alignments = attribution_metrics(
            result.phi_hat.values,
            {"phi_true": ground_truth.phi_true.values, "phi_sample": ground_truth.phi_sample.values},
        )
        # report in the truth's source order
        result = result.permuted(alignments["phi_true"].permutation)

    write_estimate(Y, result, cfg, out, truth=ground_truth, metrics=metrics)
    config = RunConfig(
        command="estimate", input_path=str(input_path), truth_path=str(truth) if truth else None,
        output_dir=str(out), estimator=cfg,
    )
    write_manifest(config, out)


@app.command()
@_reports_errors
def evaluate(
    estimate_path: Path = typer.Option(..., "--estimate", exists=True, help="phi_hat.csv or an estimate directory."),
    truth: Path = typer.Option(..., "--truth", exists=True, file_okay=False, help="Simulation directory."),
    out: Path = typer.Option(..., "--out", help="Output directory."),
):
    """Compare an estimated Phi with the simulated truth."""
    phi_path = estimate_path / PHI_HAT_FILE if estimate_path.is_dir() else estimate_path
    phi_hat = read_attribution(phi_path)
    ground_truth = load_ground_truth(truth)
    metrics, _ = attribution_metrics(
        phi_hat.values,
        {"phi_true": ground_truth.phi_true.values, "phi_sample": ground_truth.phi_sample.values},
    )
    write_frame(metrics, out / METRICS_FILE, index=False)
    config = RunConfig(command="evaluate", input_path=str(phi_path), truth_path=str(truth), output_dir=str(out))
    write_manifest(config, out)


@app.command("convergence-study")
@_reports_errors
def convergence_study_command(
    out: Path = typer.Option(..., "--out", help="Output directory."),
    process: str = typer.Option("ar1", "--process", help="ar1 or mixture."),
    J: int = typer.Option(8, "--J"),
    K: int = typer.Option(3, "--K"),
    n: Optional[List[int]] = typer.Option(None, "--n", help="Sample size; repeat for a grid."),
    replicates: int = typer.Option(50, "--replicates", min=1),
    search: str = typer.Option("greedy", "--search", help="greedy, exhaustive, auto or both."),
    seed: int = typer.Option(0, "--seed", min=0, help="Master seed."),
    plant_corners: bool = typer.Option(False, "--plant-corners"),
    prune: bool = typer.Option(False, "--prune"),
    mean_method: str = typer.Option("affine", "--mean-method"),
    workers: int = typer.Option(1, "--workers", envvar=WORKERS_ENV, min=1),
    progress: bool = typer.Option(False, "--progress/--no-progress"),
):
    """Monte Carlo replicates over a grid of sample sizes."""
    fields = dict(
        process=process, J=J, K=K, replicates=replicates, search=search, master_seed=seed,
        plant_corners=plant_corners, prune=prune, mean_method=mean_method,
    )
    if n:
        fields["n_grid"] = tuple(n)
    design = StudyDesign(**fields)

    records = convergence_study(design, workers=workers, progress=progress)
    write_frame(records_frame(records), out / METRICS_FILE, index=False)
    write_frame(summarize(records), out / SUMMARY_FILE, index=False)
    write_frame(phi_scatter_frame(records), out / PHI_SCATTER_FILE, index=False)

    failures = sum(r.error is not None for r in records)
    if failures:
        logger.warning("%d of %d replicate estimates failed", failures, len(records))
    config = RunConfig(
        command="convergence-study", output_dir=str(out), design=design, master_seed=seed, worker_count=workers,
    )
    write_manifest(config, out, extra={"records": len(records), "failures": failures})


if __name__ == "__main__":
    app()
