#!/usr/bin/env python3
"""
SSNI Lab CLI

Command-line entry point for training, calibrating, attacking and evaluating
score-aware purification defenses on desk-scale data.

Usage:
    ssni train-diffusion --config configs/two_moons.json --out results/moons
    ssni calibrate --config configs/two_moons.json
    ssni evaluate --config configs/two_moons.json --seed 1
    ssni check-theory --out results/theory

Every subcommand prints its JSON summary to stdout; logs and tables go to stderr.
Exit codes: 0 success, 2 config or usage error, 1 runtime failure.
"""

import json
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import click
import typer
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from ssni.contracts.run_config import RunConfig  # noqa: E402
from ssni.errors import ConfigError  # noqa: E402
from ssni.services.runner import LabRunner, check_theory  # noqa: E402
from ssni.utils.logger import get_logger, setup_logging  # noqa: E402

# CLI app
app = typer.Typer(
    name="ssni",
    help="Sample-specific score-aware noise injection lab",
    add_completion=False,
)
console = Console(stderr=True)
logger = get_logger("cli")

CONFIG_HELP = "Run config JSON"
SEED_HELP = "Seed override (defaults to the config's seed)"
OUT_HELP = "Output directory (defaults to config output_dir, then SSNI_OUTPUT_ROOT)"


def _runner(config: Optional[Path], seed: Optional[int], out: Optional[Path], require: Sequence[str] = ()) -> LabRunner:
    if config is None:
        raise ConfigError("--config is required for this command")
    return LabRunner(RunConfig.load(config, require=require), seed=seed, out=out)


def _scalar_rows(payload: Dict[str, Any]) -> List[tuple]:
    rows = []
    for key, value in payload.items():
        if isinstance(value, (dict, list)):
            continue
        rows.append((key, f"{value:.6g}" if isinstance(value, float) else str(value)))
    return rows


def _emit(payload: Dict[str, Any], title: str):
    """Rich summary table on stderr, canonical JSON on stdout."""
    table = Table(title=title)
    table.add_column("Field", style="cyan")
    table.add_column("Value", style="magenta")
    for key, value in _scalar_rows(payload):
        table.add_row(key, value)
    console.print(table)
    typer.echo(json.dumps(payload, sort_keys=True, indent=2, default=str))


@app.command("train-diffusion")
def train_diffusion(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help=CONFIG_HELP),
    seed: Optional[int] = typer.Option(None, "--seed", "-s", help=SEED_HELP),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help=OUT_HELP),
):
    """Train the ε-prediction denoiser and save a checkpoint."""
    with console.status("[bold green]Training denoiser..."):
        result = _runner(config, seed, out).train_diffusion()
    _emit(result, "Denoiser")


@app.command("train-classifier")
def train_classifier(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help=CONFIG_HELP),
    seed: Optional[int] = typer.Option(None, "--seed", "-s", help=SEED_HELP),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help=OUT_HELP),
):
    """Train the toy classifier and save a checkpoint."""
    with console.status("[bold green]Training classifier..."):
        result = _runner(config, seed, out).train_classifier()
    _emit(result, "Classifier")


@app.command()
def calibrate(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help=CONFIG_HELP),
    seed: Optional[int] = typer.Option(None, "--seed", "-s", help=SEED_HELP),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help=OUT_HELP),
):
    """Score the clean validation split and write the calibration file."""
    result = _runner(config, seed, out, require=("denoiser",)).calibrate()
    _emit(result, "Calibration")


@app.command()
def attack(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help=CONFIG_HELP),
    seed: Optional[int] = typer.Option(None, "--seed", "-s", help=SEED_HELP),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help=OUT_HELP),
):
    """Attack the full defense on the fixed subset and persist the adversarial batch."""
    with console.status("[bold green]Attacking..."):
        result = _runner(config, seed, out, require=("denoiser", "classifier")).attack()
    _emit(result, "Attack")


@app.command()
def evaluate(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help=CONFIG_HELP),
    seed: Optional[int] = typer.Option(None, "--seed", "-s", help=SEED_HELP),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help=OUT_HELP),
    all_seeds: bool = typer.Option(False, "--all-seeds", help="Evaluate every configured seed and summarize"),
):
    """Standard and robust accuracy; writes the report JSON and per-sample CSV."""
    runner = _runner(config, seed, out, require=("denoiser", "classifier"))
    with console.status("[bold green]Evaluating..."):
        result = runner.evaluate_seeds() if all_seeds else runner.evaluate()
    _emit(result, "Evaluation")


@app.command("sweep-eps")
def sweep_eps(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help=CONFIG_HELP),
    seed: Optional[int] = typer.Option(None, "--seed", "-s", help=SEED_HELP),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help=OUT_HELP),
):
    """Mean score-norm statistic of adversarial examples across attack budgets."""
    with console.status("[bold green]Sweeping budgets..."):
        result = _runner(config, seed, out, require=("denoiser", "classifier")).sweep_eps()
    _emit(result, "Budget sweep")


@app.command("check-theory")
def check_theory_cmd(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help=CONFIG_HELP),
    seed: Optional[int] = typer.Option(None, "--seed", "-s", help=SEED_HELP),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help=OUT_HELP),
):
    """Closed-form Gaussian checks; exits 1 if any check fails."""
    run = RunConfig.load(config) if config is not None else None
    effective_seed = seed if seed is not None else (run.seed if run is not None else 0)
    target = out if out is not None else (run.output_dir if run is not None else None)
    result = check_theory(effective_seed, target)

    table = Table(title="Theory checks")
    table.add_column("Check", style="cyan")
    table.add_column("Value")
    table.add_column("Threshold")
    table.add_column("Passed")
    for check in result["checks"]:
        mark = "[green]yes[/green]" if check["passed"] else "[red]no[/red]"
        table.add_row(check["name"], f"{check['value']:.3g}", f"{check['threshold']:.3g}", mark)
    console.print(table)
    typer.echo(json.dumps(result, sort_keys=True, indent=2, default=str))
    if not result["passed"]:
        raise typer.Exit(1)


@app.command()
def plot(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help=CONFIG_HELP),
    seed: Optional[int] = typer.Option(None, "--seed", "-s", help=SEED_HELP),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help=OUT_HELP),
):
    """Plot mean score norm against budget from a previous sweep-eps run in the same output directory."""
    run = RunConfig.load(config) if config is not None else RunConfig()
    result = LabRunner(run, seed=seed, out=out).plot()
    _emit(result, "Plot")


@app.command()
def ablate(
    config: Optional[Path] = typer.Option(None, "--config", "-c", help=CONFIG_HELP),
    seed: Optional[int] = typer.Option(None, "--seed", "-s", help=SEED_HELP),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help=OUT_HELP),
):
    """Bias, temperature, function-kind and sampler ablations on the fixed subset."""
    with console.status("[bold green]Running ablations..."):
        result = _runner(config, seed, out, require=("denoiser", "classifier", "calibration")).ablate()
    table = Table(title="Ablations")
    table.add_column("Variant", style="cyan")
    table.add_column("Standard")
    table.add_column("Robust")
    for row in result["variants"]:
        robust = row["robust_accuracy"]
        table.add_row(row["variant"], f"{row['standard_accuracy']:.3f}", "-" if robust is None or robust != robust else f"{robust:.3f}")
    console.print(table)
    typer.echo(json.dumps(result, sort_keys=True, indent=2, default=str))


def cli(argv: Optional[Sequence[str]] = None) -> int:
    """Run the app without click's own exit handling so the exit code is returned."""
    args = list(sys.argv[1:] if argv is None else argv)
    setup_logging()
    command = typer.main.get_command(app)
    if not args:
        console.print(command.get_usage(click.Context(command, info_name="ssni")))
        console.print("Try 'ssni --help' for help.")
        return 2
    try:
        result = command.main(args=args, prog_name="ssni", standalone_mode=False)
    except (ConfigError, ValidationError) as exc:
        logger.error("Configuration error", error=str(exc))
        console.print(f"Config error: {exc}", style="red", markup=False)
        return 2
    except click.UsageError as exc:
        exc.show()
        return 2
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.exceptions.Abort:
        return 1
    except Exception as exc:
        logger.exception("Command failed", error=str(exc))
        console.print(f"Error: {exc}", style="red", markup=False)
        return 1
    return result if isinstance(result, int) else 0


if __name__ == "__main__":
    sys.exit(cli())
