"""
Experiment orchestration: multi-seed training runs, episode CSVs, learning curves,
benchmark statistics and the convergence check.
"""

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from qsac.benchmark import GainConstants, rollout
from qsac.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from qsac.config import (
    ExperimentConfig,
    architectures,
    as_dict,
    save_config,
    to_env_config,
    to_hyperparams,
    validate_config,
)
from qsac.environment import ArmEnv, EnvConfig, sample_target
from qsac.exceptions import NotEvaluableError, QsacError
from qsac.networks import parameter_count
from qsac.sac import EpisodeRecord, SacAgent, SacHyperparams, train_run
from qsac.utils import DESCRIBE_ROWS, describe, log, moving_average, spawn_generators

CSV_COLUMNS = ("run_id", "seed", "episode", "steps", "return", "solved", "wall_ms")
CURVE_COLUMNS = ("config_name", "episode", "mean_return", "std_return")
BENCHMARK_COLUMNS = ("episode", "target_x", "target_y", "steps", "return", "solved")
MANIFEST = "manifest.yml"
CURVE_WINDOW = 20
CONVERGENCE_WINDOW = 1000
MAX_FAILURE_RATE = 0.01
EPISODE_DEADLINE = 5000


# --- episode CSVs ---------------------------------------------------------------------------------------------


def _record_row(record: EpisodeRecord) -> list:
    return [
        record.run_id,
        record.seed,
        record.episode,
        record.steps,
        repr(float(record.episode_return)),
        int(record.solved),
        repr(float(record.wall_ms)),
    ]


def write_records(path: Union[str, Path], records: Sequence[EpisodeRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        writer.writerows(_record_row(r) for r in records)
    return path


def read_records(path: Union[str, Path]) -> List[EpisodeRecord]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path} does not have the episode columns {', '.join(CSV_COLUMNS)}")
        return [
            EpisodeRecord(
                run_id=row["run_id"],
                seed=int(row["seed"]),
                episode=int(row["episode"]),
                steps=int(row["steps"]),
                episode_return=float(row["return"]),
                solved=row["solved"] == "1",
                wall_ms=float(row["wall_ms"]),
            )
            for row in reader
        ]


class _RecordWriter:
    """Appends one CSV row per episode so a crashed run keeps its history."""

    def __init__(self, path: Path):
        self.path = path
        write_records(path, [])

    def __call__(self, record: EpisodeRecord) -> None:
        with open(self.path, "a", newline="", encoding="utf-8") as f:
            csv.writer(f, lineterminator="\n").writerow(_record_row(record))


# --- checkpoints of agents ------------------------------------------------------------------------------------


def save_agent(path: Union[str, Path], agent: SacAgent, config: ExperimentConfig, episode: int) -> Path:
    metadata = {
        "config": config.name,
        "episode": str(episode),
        "actor_architecture": config.actor.architecture,
        "actor_activations": config.actor.activations or "",
        "critic_architecture": config.critic.architecture,
        "critic_activations": config.critic.activations or "",
        "max_torque": repr(float(config.env.max_torque)),
    }
    return save_checkpoint(path, Checkpoint(metadata=metadata, groups=agent.parameter_groups()))


def load_agent(path: Union[str, Path], hyper: Optional[SacHyperparams] = None) -> Tuple[SacAgent, Dict[str, str]]:
    checkpoint = load_checkpoint(path)
    meta = checkpoint.metadata
    try:
        agent = SacAgent.build(
            meta["actor_architecture"],
            meta["critic_architecture"],
            hyper or SacHyperparams(),
            seed=0,
            actor_activations=meta.get("actor_activations") or None,
            critic_activations=meta.get("critic_activations") or None,
            max_torque=float(meta.get("max_torque", 1000.0)),
        )
    except KeyError as e:
        raise ValueError(f"Checkpoint {path} lacks the {e} entry") from e
    agent.load_parameter_groups(checkpoint.groups)
    return agent, meta


# --- training runs --------------------------------------------------------------------------------------------


@dataclass
class SeedRun:
    seed: int
    csv: str
    checkpoint: str
    episodes: int = 0
    error: Optional[str] = None


@dataclass
class RunManifest:
    config_name: str
    config_file: str
    seeds: List[int]
    runs: List[SeedRun] = field(default_factory=list)
    curve: Optional[str] = None

    @property
    def failed(self) -> List[SeedRun]:
        return [run for run in self.runs if run.error is not None]

    def save(self, out_dir: Union[str, Path]) -> Path:
        path = Path(out_dir) / MANIFEST
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(asdict(self), f, sort_keys=False)
        return path

    @classmethod
    def load(cls, run_dir: Union[str, Path]) -> "RunManifest":
        path = Path(run_dir)
        path = path / MANIFEST if path.is_dir() else path
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f)
        data["runs"] = [SeedRun(**run) for run in data.get("runs", [])]
        return cls(**data)


def _train_seed(config_data: dict, seed: int, out_dir: str) -> SeedRun:
    """One training run; module-level so process pools can pickle it."""
    config = validate_config(config_data, f"{out_dir}/config.yml")
    hyper = to_hyperparams(config)
    run_dir = Path(out_dir)
    seed_run = SeedRun(seed=seed, csv=f"seed_{seed}/episodes.csv", checkpoint=f"seed_{seed}/checkpoint.txt")
    writer = _RecordWriter(run_dir / seed_run.csv)
    checkpoint_path = run_dir / seed_run.checkpoint

    agent = SacAgent.build(
        config.actor.architecture,
        config.critic.architecture,
        hyper,
        seed,
        actor_activations=config.actor.activations,
        critic_activations=config.critic.activations,
        max_torque=config.env.max_torque,
    )
    log.info(f"{config.name}: starting seed {seed} ({hyper.max_episodes} episodes)")
    try:
        records = train_run(
            to_env_config(config),
            agent,
            seed,
            episode_callback=writer,
            checkpoint_callback=lambda a, episode: save_agent(checkpoint_path, a, config, episode),
            run_id=f"{config.name}-s{seed}",
            record_wall_time=config.sac.record_wall_time,
        )
    except QsacError as e:
        seed_run.error = f"{type(e).__name__}: {e}"
        seed_run.episodes = len(read_records(writer.path))
        log.warning(f"{config.name}: seed {seed} failed: {seed_run.error}")
        return seed_run
    save_agent(checkpoint_path, agent, config, len(records))
    seed_run.episodes = len(records)
    return seed_run


def run_experiment(
    config: ExperimentConfig,
    out_dir: Union[str, Path],
    seeds: Optional[Sequence[int]] = None,
    workers: int = 1,
) -> RunManifest:
    """Train every seed, then write the aggregated learning curve and the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = list(range(config.n_seeds)) if seeds is None else list(seeds)
    save_config(config, out_dir / "config.yml")
    data = as_dict(config)

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_train_seed, [data] * len(seeds), seeds, [str(out_dir)] * len(seeds)))
    else:
        runs = [_train_seed(data, seed, str(out_dir)) for seed in seeds]

    manifest = RunManifest(config_name=config.name, config_file="config.yml", seeds=seeds, runs=runs)
    completed = [run for run in runs if run.episodes > 0]
    if completed:
        returns = [[r.episode_return for r in read_records(out_dir / run.csv)] for run in completed]
        episodes, mean, std = aggregate_curves(returns)
        write_curve(out_dir / "curve.csv", config.name, episodes, mean, std)
        manifest.curve = "curve.csv"
    manifest.save(out_dir)
    return manifest


# --- learning curves ------------------------------------------------------------------------------------------


def aggregate_curves(
    per_seed_returns: Sequence[Sequence[float]], window: int = CURVE_WINDOW
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Moving average per seed, then mean and population std across seeds.

    Seeds with different lengths are cut to the shortest one.
    """
    if not per_seed_returns:
        raise ValueError("No runs to aggregate")
    lengths = {len(returns) for returns in per_seed_returns}
    common = min(lengths)
    if len(lengths) > 1:
        log.warning(f"Runs have {sorted(lengths)} episodes; truncating to the common {common}")
    smoothed = np.array([moving_average(returns[:common], window) for returns in per_seed_returns])
    return np.arange(1, common + 1), smoothed.mean(axis=0), smoothed.std(axis=0)


def write_curve(path: Union[str, Path], name: str, episodes, mean, std, mode: str = "w") -> Path:
    path = Path(path)
    with open(path, mode, newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        if mode == "w":
            writer.writerow(CURVE_COLUMNS)
        for episode, m, s in zip(episodes, mean, std):
            writer.writerow([name, int(episode), repr(float(m)), repr(float(s))])
    return path


def export_curves(
    run_dirs: Sequence[Union[str, Path]],
    out_path: Union[str, Path],
    benchmark_mean: float,
    benchmark_std: float = 0.0,
    window: int = CURVE_WINDOW,
) -> Path:
    """Overlay the learning curves of several runs plus a flat benchmark reference series."""
    if not run_dirs:
        raise ValueError("export_curves needs at least one run directory")
    series = []
    for run_dir in run_dirs:
        manifest = RunManifest.load(run_dir)
        base = Path(run_dir) if Path(run_dir).is_dir() else Path(run_dir).parent
        returns = [
            [r.episode_return for r in read_records(base / run.csv)] for run in manifest.runs if run.episodes > 0
        ]
        if not returns:
            raise ValueError(f"Run {run_dir} has no completed episodes")
        series.append((manifest.config_name, *aggregate_curves(returns, window)))

    lengths = {len(s[1]) for s in series}
    common = min(lengths)
    if len(lengths) > 1:
        log.warning(f"Configurations cover {sorted(lengths)} episodes; truncating to the common {common}")

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_curve(out_path, series[0][0], *(values[:common] for values in series[0][1:]))
    for name, episodes, mean, std in series[1:]:
        write_curve(out_path, name, episodes[:common], mean[:common], std[:common], mode="a")
    episodes = np.arange(1, common + 1)
    write_curve(out_path, "benchmark", episodes, np.full(common, benchmark_mean), np.full(common, benchmark_std), "a")
    return out_path


# --- convergence ----------------------------------------------------------------------------------------------


@dataclass
class ConvergenceResult:
    solved: bool
    episode_solved: Optional[int]
    reasons: List[str] = field(default_factory=list)


def convergence_check(
    records: Sequence[EpisodeRecord],
    benchmark_mean: float,
    benchmark_std: float,
    window: int = CONVERGENCE_WINDOW,
    max_failure_rate: float = MAX_FAILURE_RATE,
    deadline: int = EPISODE_DEADLINE,
) -> ConvergenceResult:
    """Solved once, by `deadline`, the trailing `window` episodes have a mean return in
    [mean - std, mean] of the benchmark and at most `max_failure_rate` unsolved episodes.
    """
    records = sorted(records, key=lambda r: r.episode)
    if len(records) < window:
        raise NotEvaluableError(f"Convergence needs {window} episodes, got {len(records)}")
    returns = np.array([r.episode_return for r in records])
    failures = np.array([not r.solved for r in records], dtype=float)
    ends = np.arange(window, len(records) + 1)
    summed = np.cumsum(np.concatenate(([0.0], returns)))
    failed = np.cumsum(np.concatenate(([0.0], failures)))
    mean_returns = (summed[ends] - summed[ends - window]) / window
    failed_in_window = failed[ends] - failed[ends - window]

    low, high = benchmark_mean - benchmark_std, benchmark_mean
    returns_ok = (mean_returns >= low) & (mean_returns <= high)
    failures_ok = failed_in_window <= math.floor(max_failure_rate * window + 1e-9)
    in_time = np.array([records[end - 1].episode <= deadline for end in ends])
    hits = np.flatnonzero(returns_ok & failures_ok & in_time)
    if hits.size:
        return ConvergenceResult(solved=True, episode_solved=records[ends[hits[0]] - 1].episode)

    last = int(np.flatnonzero(in_time)[-1]) if in_time.any() else len(ends) - 1
    reasons = []
    if not returns_ok[last]:
        reasons.append(f"mean return {mean_returns[last]:.3f} outside [{low:.3f}, {high:.3f}]")
    if not failures_ok[last]:
        reasons.append(f"{int(failed_in_window[last])} failed episodes in the last {window}")
    if not in_time.any():
        reasons.append(f"no complete window ends by episode {deadline}")
    if not reasons:
        reasons.append(f"criteria never held together within {deadline} episodes")
    return ConvergenceResult(solved=False, episode_solved=None, reasons=reasons)


# --- benchmark ------------------------------------------------------------------------------------------------


@dataclass
class BenchmarkStats:
    steps: Dict[str, float]
    returns: Dict[str, float]
    solve_rate: float
    max_residual: float


def benchmark_targets(config: EnvConfig, n_episodes: int, seed: int) -> List[Tuple[float, float]]:
    rng = spawn_generators(seed, 1)[0]
    return [sample_target(config, rng) for _ in range(n_episodes)]


def benchmark_stats(
    config: EnvConfig, gains: GainConstants, n_episodes: int, seed: int, csv_path: Optional[Union[str, Path]] = None
) -> BenchmarkStats:
    """Roll out the closed-form controller and summarize steps and returns."""
    episodes = rollout(config, gains, benchmark_targets(config, n_episodes, seed))
    if csv_path is not None:
        csv_path = Path(csv_path)
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        with open(csv_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(BENCHMARK_COLUMNS)
            for i, e in enumerate(episodes, start=1):
                target_x, target_y = e.target
                writer.writerow([i, repr(target_x), repr(target_y), e.steps, repr(e.episode_return), int(e.solved)])
    solved = sum(e.solved for e in episodes)
    return BenchmarkStats(
        steps=describe([e.steps for e in episodes]),
        returns=describe([e.episode_return for e in episodes]),
        solve_rate=solved / len(episodes),
        max_residual=max(e.residual for e in episodes),
    )


def format_summary(steps: Dict[str, float], returns: Dict[str, float]) -> str:
    """Two-column table with count/mean/std/min/quartiles/max rows."""
    lines = [f"{'':>6} {'Steps':>10} {'Return':>10}"]
    for row in DESCRIBE_ROWS:
        lines.append(f"{row:>6} {steps[row]:>10.3f} {returns[row]:>10.3f}")
    return "\n".join(lines)


def load_benchmark_reference(path: Union[str, Path]) -> Tuple[float, float]:
    """(mean, std) of benchmark returns from a stats.yml written by `qsac benchmark`."""
    with open(path, encoding="utf-8") as f:
        data = yaml.safe_load(f)
    return float(data["return"]["mean"]), float(data["return"]["std"])


# --- evaluation and reports -----------------------------------------------------------------------------------


def evaluate_policy(agent: SacAgent, config: EnvConfig, n_episodes: int, seed: int) -> List[Tuple[int, float, bool]]:
    """(steps, return, solved) of the deterministic policy on seeded targets."""
    env = ArmEnv(config, spawn_generators(seed, 1)[0])
    outcomes = []
    for _ in range(n_episodes):
        obs, total, result = env.reset(), 0.0, None
        while result is None or not result.done:
            result = env.step(agent.act_deterministic(obs))
            obs, total = result.observation, total + result.reward
        outcomes.append((result.steps_used, total, result.reached))
    return outcomes


def random_policy_returns(config: EnvConfig, n_episodes: int, seed: int) -> List[float]:
    """Returns of uniformly random torques, the baseline a learning run has to beat."""
    env_rng, action_rng = spawn_generators(seed, 2)
    env = ArmEnv(config, env_rng)
    returns = []
    for _ in range(n_episodes):
        env.reset()
        total, result = 0.0, None
        while result is None or not result.done:
            result = env.step(action_rng.uniform(-config.max_torque, config.max_torque, size=2))
            total += result.reward
        returns.append(total)
    return returns


@dataclass
class ParameterReport:
    actor_built: int
    critic_built: int
    actor_reported: Optional[int]
    critic_reported: Optional[int]
    total_reported: Optional[int]

    @property
    def total_built(self) -> int:
        """Actor plus two critics and two target critics."""
        return self.actor_built + 4 * self.critic_built

    @property
    def total_table_convention(self) -> int:
        """Built actor plus four times the reported critic count."""
        critic = self.critic_reported if self.critic_reported is not None else self.critic_built
        return self.actor_built + 4 * critic


def relative_gap(built: int, reported: Optional[int]) -> Optional[float]:
    return None if reported is None else abs(built - reported) / reported


def parameter_report(config: ExperimentConfig) -> ParameterReport:
    actor, critic = architectures(config)
    report = ParameterReport(
        actor_built=parameter_count(actor),
        critic_built=parameter_count(critic),
        actor_reported=config.actor.reported_params,
        critic_reported=config.critic.reported_params,
        total_reported=config.reported_total_params,
    )
    for name, built, reported in (
        ("actor", report.actor_built, report.actor_reported),
        ("critic", report.critic_built, report.critic_reported),
        ("total", report.total_built, report.total_reported),
    ):
        gap = relative_gap(built, reported)
        if gap:
            log.warning(f"{config.name}: built {name} has {built} parameters, table lists {reported} ({gap:.1%} off)")
    return report
