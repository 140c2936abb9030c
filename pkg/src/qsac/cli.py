import functools
import logging
from pathlib import Path

import click
import yaml

from qsac.benchmark import calibrate_gains, coarse_grid, load_gains, save_gains
from qsac.config import ExperimentConfig, load_config, with_overrides
from qsac.environment import EnvConfig
from qsac.exceptions import QsacError
from qsac.gradcheck import (
    FD_TOLERANCE,
    NETWORK_TOLERANCE,
    SHIFT_TOLERANCE,
    circuit_gradient_triangle,
    network_gradient_check,
)
from qsac.harness import (
    RunManifest,
    benchmark_stats,
    benchmark_targets,
    convergence_check,
    evaluate_policy,
    export_curves,
    format_summary,
    load_agent,
    load_benchmark_reference,
    parameter_report,
    read_records,
    run_experiment,
)
from qsac.utils import describe, log


def _setup_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter("%(levelname)-7s -  %(message)s"))
    log.handlers[:] = [handler]
    log.setLevel(level)


def _domain_errors(command):
    """Report qsac errors as click errors (message + exit code 1)."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except QsacError as e:
            raise click.ClickException(f"{type(e).__name__}: {e}") from e

    return wrapper


def _reference(config: ExperimentConfig, stats_file):
    if stats_file is not None:
        return load_benchmark_reference(stats_file)
    return config.benchmark.return_mean, config.benchmark.return_std


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
@click.option("-q", "--quiet", is_flag=True, help="Only report warnings and errors.")
def cli(verbose, quiet):
    """Soft Actor-Critic with variational quantum circuits on a two-link arm."""
    _setup_logging(verbose, quiet)


@cli.command()
@click.option("--config", "config_name", required=True, help="Preset name or path to a YAML experiment file.")
@click.option("--seeds", type=int, help="Number of seeds (default: the config's n_seeds).")
@click.option("--episodes", type=int, help="Episodes per seed (default: the config's max_episodes).")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Run directory.")
@click.option("--workers", type=int, default=1, show_default=True, help="Seeds trained in parallel processes.")
@click.option("--benchmark-stats", type=click.Path(exists=True, dir_okay=False), help="stats.yml of a benchmark run.")
@_domain_errors
def train(config_name, seeds, episodes, out_dir, workers, benchmark_stats):
    """Train every seed of an experiment and aggregate its learning curve."""
    config = load_config(config_name)
    overrides = {}
    if seeds is not None:
        overrides["n_seeds"] = seeds
    if episodes is not None:
        overrides["sac.max_episodes"] = episodes
    if overrides:
        config = with_overrides(config, overrides)
    parameter_report(config)

    manifest = run_experiment(config, out_dir, workers=workers)
    mean, std = _reference(config, benchmark_stats)
    for run in manifest.runs:
        records = read_records(Path(out_dir) / run.csv)
        if len(records) >= 1000:
            result = convergence_check(records, mean, std)
            status = f"solved at episode {result.episode_solved}" if result.solved else "; ".join(result.reasons)
            click.echo(f"seed {run.seed}: {status}")
    if manifest.failed:
        raise click.ClickException(f"{len(manifest.failed)} of {len(manifest.runs)} seeds failed; see {out_dir}")
    click.echo(f"Wrote {len(manifest.runs)} runs to {out_dir}")


@cli.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Directory for gains.yml.")
@click.option("--episodes", type=int, default=1000, show_default=True, help="Calibration episodes per gain pair.")
@click.option("--seed", type=int, default=0, show_default=True)
@_domain_errors
def calibrate(out_dir, episodes, seed):
    """Grid-search the benchmark controller gains."""
    config = EnvConfig()
    gains = calibrate_gains(config, benchmark_targets(config, episodes, seed), coarse_grid())
    path = save_gains(Path(out_dir) / "gains.yml", gains, episodes=episodes, seed=seed)
    click.echo(f"c1={gains.c1:g} c2={gains.c2:g} -> {path}")


@cli.command()
@click.option("--episodes", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--gains", "gains_file", type=click.Path(dir_okay=False), help="Defaults to <out>/gains.yml.")
@_domain_errors
def benchmark(episodes, seed, out_dir, gains_file):
    """Run the closed-form controller and summarize its steps and returns."""
    out_dir = Path(out_dir)
    gains = load_gains(gains_file or out_dir / "gains.yml")
    stats = benchmark_stats(EnvConfig(), gains, episodes, seed, csv_path=out_dir / "episodes.csv")
    with open(out_dir / "stats.yml", "w", encoding="utf-8") as f:
        yaml.safe_dump({"steps": stats.steps, "return": stats.returns, "solve_rate": stats.solve_rate}, f)
    click.echo(format_summary(stats.steps, stats.returns))
    if stats.solve_rate < 1.0:
        raise click.ClickException(f"Benchmark solved only {stats.solve_rate:.1%} of {episodes} episodes")
    if stats.max_residual >= 1e-9:
        raise click.ClickException(f"Ideal configuration misses a target by {stats.max_residual:.3g} m")


@cli.command()
@click.option("--circuits", type=int, default=50, show_default=True, help="Random circuits to check.")
@click.option("--networks", type=int, default=20, show_default=True, help="Random hybrid networks to check.")
@click.option("--seed", type=int, default=0, show_default=True)
def gradcheck(circuits, networks, seed):
    """Cross-check parameter-shift, adjoint and finite-difference gradients."""
    triangle = circuit_gradient_triangle(circuits, seed)
    click.echo(f"parameter-shift vs adjoint: {triangle.shift_vs_adjoint:.3e} (limit {SHIFT_TOLERANCE:g})")
    click.echo(f"parameter-shift vs finite differences: {triangle.shift_vs_fd:.3e} (limit {FD_TOLERANCE:g})")
    click.echo(f"adjoint vs finite differences: {triangle.adjoint_vs_fd:.3e} (limit {FD_TOLERANCE:g})")
    network_error = network_gradient_check(networks, seed)
    click.echo(f"hybrid network vs finite differences: {network_error:.3e} (limit {NETWORK_TOLERANCE:g})")
    if not triangle.passed or network_error > NETWORK_TOLERANCE:
        raise click.ClickException("Gradient check failed")


@cli.command(name="eval")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--episodes", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@_domain_errors
def evaluate(checkpoint, episodes, seed):
    """Roll out the deterministic policy stored in a checkpoint."""
    agent, meta = load_agent(checkpoint)
    outcomes = evaluate_policy(agent, EnvConfig(max_torque=agent.max_torque), episodes, seed)
    steps = describe([o[0] for o in outcomes])
    returns = describe([o[1] for o in outcomes])
    click.echo(f"{meta.get('config', checkpoint)} after {meta.get('episode', '?')} episodes")
    click.echo(format_summary(steps, returns))
    click.echo(f"solved {sum(o[2] for o in outcomes)}/{episodes}")


@cli.command()
@click.option("--runs", "run_dirs", required=True, multiple=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--benchmark-stats", type=click.Path(exists=True, dir_okay=False), help="stats.yml of a benchmark run.")
@_domain_errors
def curves(run_dirs, out_path, benchmark_stats):
    """Write one long-format CSV overlaying the learning curves of several runs."""
    if benchmark_stats is not None:
        mean, std = load_benchmark_reference(benchmark_stats)
    else:
        config = load_config(Path(run_dirs[0]) / RunManifest.load(run_dirs[0]).config_file)
        mean, std = _reference(config, None)
    click.echo(f"Wrote {export_curves(run_dirs, out_path, mean, std)}")


@cli.command()
@click.option("--config", "config_name", required=True, help="Preset name or path to a YAML experiment file.")
@_domain_errors
def params(config_name):
    """Compare built parameter counts with the reported ones."""
    config = load_config(config_name)
    report = parameter_report(config)
    click.echo(f"actor  built {report.actor_built:>7}  reported {report.actor_reported}")
    click.echo(f"critic built {report.critic_built:>7}  reported {report.critic_reported}")
    click.echo(f"total  built {report.total_built:>7}  reported {report.total_reported}")
    click.echo(f"actor + 4 x reported critic: {report.total_table_convention}")
