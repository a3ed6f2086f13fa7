"""Command-line interface for RX Speedguard."""

import logging
import sys
from pathlib import Path
from typing import Any, Callable, List, Optional

import click
import numpy as np

from . import __version__
from .config import ALGORITHMS, ConfigError, load_config, render_config
from .epo import PenaltyDivergenceError, penalty_suite, verify_exact_penalty
from .harness import (
    ExperimentError,
    InvariantViolationError,
    benchmark as run_benchmark,
    format_summary,
    print_run_report,
    summarize as summarize_runs,
    sweep as run_sweep,
    train as run_train,
    write_summary,
)
from .template import generate_template


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("rx_speedguard").setLevel(logging.DEBUG if verbose else logging.INFO)


def _split(text: str) -> List[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _guarded(action: Callable[[], Any]) -> Any:
    """Run ``action``; report failures the same way for every command and exit 1."""
    try:
        return action()
    except ConfigError as e:
        click.echo(f"✗ Config error: {e}", err=True)
    except InvariantViolationError as e:
        click.echo(f"✗ Invariant violation: {e}", err=True)
    except ExperimentError as e:
        click.echo(f"✗ Run failed: {e}", err=True)
    except PenaltyDivergenceError as e:
        click.echo(f"✗ Penalty method diverged: {e}", err=True)
    except Exception as e:
        click.echo(f"✗ Unexpected error: {e}", err=True)
    sys.exit(1)


config_option = click.option(
    "--config",
    "-c",
    "config_path",
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help="Config file with 'key = value' lines (default: built-in defaults)",
)
algo_option = click.option(
    "--algo",
    "-a",
    type=click.Choice(ALGORITHMS),
    default=None,
    help="Algorithm (overrides the config file)",
)
steps_option = click.option(
    "--total-steps", type=int, default=None, help="Environment steps per run"
)
interval_option = click.option(
    "--eval-interval", type=int, default=None, help="Steps between evaluations"
)
out_option = click.option(
    "--out",
    "-o",
    type=click.Path(file_okay=False, path_type=Path),
    default=Path("runs"),
    help="Output directory for CSV files (default: runs)",
)
jobs_option = click.option(
    "--jobs", "-j", type=int, default=1, help="Runs to execute in parallel (default: 1)"
)
verbose_option = click.option("--verbose", "-v", is_flag=True, help="Enable debug logging")


@click.group()
@click.version_option(version=__version__)
def cli() -> None:
    """RX Speedguard - Off-policy safe RL algorithms on a speed-limited driving task."""
    pass


@cli.command()
@config_option
@algo_option
@click.option("--seed", "-s", type=int, default=None, help="Root seed")
@steps_option
@interval_option
@out_option
@verbose_option
def train(
    config_path: Optional[Path],
    algo: Optional[str],
    seed: Optional[int],
    total_steps: Optional[int],
    eval_interval: Optional[int],
    out: Path,
    verbose: bool,
) -> None:
    """Train one algorithm and write its learning curve as CSV.

    \b
    Examples:
        rx-speedguard train --algo epo --seed 0 --out runs/
        rx-speedguard train --config epo.cfg --total-steps 200000
    """
    _configure_logging(verbose)

    def action() -> None:
        cfg = load_config(
            config_path,
            algorithm=algo,
            seed=seed,
            total_steps=total_steps,
            eval_interval=eval_interval,
        )
        path, diagnostics = run_train(cfg, out)
        print_run_report(cfg, path, diagnostics)
        click.echo(f"\n💡 Next: Summarize with 'rx-speedguard summarize {out}'")

    _guarded(action)


@cli.command()
@config_option
@algo_option
@click.option("--key", "-k", required=True, help="Config key to vary, e.g. penalty_factor")
@click.option("--values", required=True, help="Comma-separated values, e.g. 1,5,10,20")
@steps_option
@out_option
@jobs_option
@verbose_option
def sweep(
    config_path: Optional[Path],
    algo: Optional[str],
    key: str,
    values: str,
    total_steps: Optional[int],
    out: Path,
    jobs: int,
    verbose: bool,
) -> None:
    """Run one experiment per value of a config key.

    \b
    Examples:
        rx-speedguard sweep --algo epo --key penalty_factor --values 1,5,10,20
        rx-speedguard sweep --algo lagrangian --key multiplier_lr --values 1e-5,1e-4,1e-3
    """
    _configure_logging(verbose)

    def action() -> None:
        cfg = load_config(config_path, algorithm=algo, total_steps=total_steps)
        paths = run_sweep(cfg, key, _split(values), out, jobs=jobs)
        for path in paths:
            click.echo(f"✓ {path}")
        click.echo(f"✓ {len(paths)} runs written to {out}")

    _guarded(action)


@cli.command()
@config_option
@click.option(
    "--algos",
    default=",".join(ALGORITHMS),
    help="Comma-separated algorithms (default: all)",
)
@click.option("--seeds", default="0,1,2", help="Comma-separated seeds (default: 0,1,2)")
@steps_option
@out_option
@jobs_option
@verbose_option
def benchmark(
    config_path: Optional[Path],
    algos: str,
    seeds: str,
    total_steps: Optional[int],
    out: Path,
    jobs: int,
    verbose: bool,
) -> None:
    """Run every algorithm under every seed and write a summary table.

    \b
    Examples:
        rx-speedguard benchmark --total-steps 200000 --jobs 6
        rx-speedguard benchmark --algos td3,epo --seeds 0,1
    """
    _configure_logging(verbose)

    def action() -> None:
        algorithms = _split(algos)
        unknown = [a for a in algorithms if a not in ALGORITHMS]
        if unknown:
            raise ConfigError(f"Unknown algorithm(s): {', '.join(unknown)}")
        cfg = load_config(config_path, total_steps=total_steps)
        paths = run_benchmark(cfg, algorithms, [int(s) for s in _split(seeds)], out, jobs=jobs)
        rows = summarize_runs(paths)
        summary_path = write_summary(rows, out / "summary.txt")
        click.echo(format_summary(rows))
        click.echo(f"✓ {len(paths)} runs, summary saved to {summary_path}")

    _guarded(action)


@cli.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option(
    "--window", "-w", type=click.IntRange(min=1), default=5, help="Final evaluation points averaged"
)
def summarize(run_dir: Path, window: int) -> None:
    """Summarize run CSVs: final-window means with 95% normal confidence.

    \b
    Examples:
        rx-speedguard summarize runs/
    """

    def action() -> None:
        paths = sorted(run_dir.glob("*.csv"))
        if not paths:
            click.echo(f"⚠ No CSV files in {run_dir}", err=True)
            sys.exit(1)
        rows = summarize_runs(paths, window=window)
        summary_path = write_summary(rows, run_dir / "summary.txt")
        click.echo(format_summary(rows))
        click.echo(f"✓ Summary saved to {summary_path}")

    _guarded(action)


@cli.command("verify-penalty")
@click.option("--problems", "-n", type=int, default=20, help="Random QPs per check (default: 20)")
@click.option("--seed", "-s", type=int, default=0, help="Problem generator seed")
@verbose_option
def verify_penalty(problems: int, seed: int, verbose: bool) -> None:
    """Check numerically that a large enough penalty factor is exact.

    Solves random convex QPs with one active linear constraint by penalized
    subgradient descent: kappa = 2 lambda* must recover the constrained
    optimum, kappa = 0.5 lambda* must violate the constraint, and fixed
    kappa in {5, 10, 20} must agree.
    """
    _configure_logging(verbose)

    def action() -> bool:
        click.echo("=" * 60)
        click.echo("EXACT PENALTY CHECKS")
        click.echo("=" * 60)
        checks = []

        quadratic = verify_exact_penalty(
            lambda x: float(x[0] ** 2), lambda x: 1.0 - x[0], 5.0, [0.0]
        )
        checks.append(
            ("x^2 s.t. x >= 1, kappa=5 -> x=1", abs(quadratic.x[0] - 1.0) <= 1e-3 and quadratic.feasible)
        )

        exact = penalty_suite(problems, seed, kappa_scale=2.0)
        worst = max(r.error for r in exact)
        checks.append((f"kappa = 2 lambda*: max error {worst:.2e} <= 1e-3", worst <= 1e-3))

        loose = penalty_suite(problems, seed, kappa_scale=0.5)
        least = min(r.violation for r in loose)
        checks.append((f"kappa = 0.5 lambda*: min violation {least:.2e} > 1e-2", least > 1e-2))

        robust = [penalty_suite(problems, seed, kappa=k) for k in (5.0, 10.0, 20.0)]
        spread = max(
            float(np.max(np.abs(np.array([r.error for r in a]) - np.array([r.error for r in b]))))
            for a in robust
            for b in robust
        )
        worst_robust = max(r.error for runs in robust for r in runs)
        checks.append(
            (
                f"kappa in {{5, 10, 20}}: max error {worst_robust:.2e}, spread {spread:.2e}",
                worst_robust <= 1e-3 and spread <= 1e-3,
            )
        )

        for label, ok in checks:
            click.echo(f"{'✓' if ok else '✗'} {label}")
        return all(ok for _, ok in checks)

    if not _guarded(action):
        click.echo("\n✗ Exact penalty checks failed", err=True)
        sys.exit(1)
    click.echo("\n✓ All exact penalty checks passed")


@cli.command("init-config")
@click.argument("output_file", type=click.Path(dir_okay=False, path_type=Path))
@click.option(
    "--algo",
    "-a",
    type=click.Choice(ALGORITHMS),
    default="epo",
    help="Algorithm whose defaults fill the template (default: epo)",
)
def init_config(output_file: Path, algo: str) -> None:
    """Generate a commented config file with the defaults of one algorithm.

    \b
    Examples:
        rx-speedguard init-config epo.cfg
        rx-speedguard init-config sl.cfg --algo safety_layer
    """
    _guarded(lambda: generate_template(algo, output_file))


@cli.command("show-config")
@config_option
@algo_option
def show_config(config_path: Optional[Path], algo: Optional[str]) -> None:
    """Print the resolved configuration (defaults, file, environment, flags).

    \b
    Examples:
        RX_SPEEDGUARD_PENALTY_FACTOR=10 rx-speedguard show-config --algo epo
    """
    cfg = _guarded(lambda: load_config(config_path, algorithm=algo))
    click.echo(render_config(cfg), nl=False)


if __name__ == "__main__":
    cli()
