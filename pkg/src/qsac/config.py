from pathlib import Path
from typing import Dict, Tuple, Union

# 3rd party imports
import yaml
from mkdocs.config import base, config_options
from mkdocs.config.base import ValidationError

from qsac.environment import EnvConfig
from qsac.exceptions import ConfigurationError
from qsac.networks import ArchitectureConfig, parse_architecture, tokenize_architecture
from qsac.sac import SacHyperparams
from qsac.utils import log

PRESET_DIR = Path(__file__).parent / "presets"
PRESETS = (
    "sac_classical",
    "qsac_hybrid_actor",
    "qsac_hybrid_actor_small_critic",
    "qsac_hybrid_critic",
    "sac_3000",
    "sac_270k",
    "full_qsac",
)


class Positive(config_options.OptionallyRequired[float]):
    """A real number > 0 (>= 0 with allow_zero)."""

    def __init__(self, default=None, allow_zero: bool = False):
        super().__init__(default=default)
        self.allow_zero = allow_zero

    def run_validation(self, value: object) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"Expected a number, got {value!r}")
        if value < 0 or (value == 0 and not self.allow_zero):
            raise ValidationError(f"Expected a {'non-negative' if self.allow_zero else 'positive'} number, got {value}")
        return float(value)


class UnitInterval(config_options.OptionallyRequired[float]):
    """A real number in [0, 1]."""

    def run_validation(self, value: object) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"Expected a number, got {value!r}")
        if not 0.0 <= value <= 1.0:
            raise ValidationError(f"Expected a value in [0, 1], got {value}")
        return float(value)


class ArchitectureString(config_options.OptionallyRequired[str]):
    """Table notation such as (6,7)(8,(1,1)) or (8,VQA(20 layers),8,1)."""

    def run_validation(self, value: object) -> str:
        if not isinstance(value, str):
            raise ValidationError(f"Expected an architecture string, got {value!r}")
        try:
            tokenize_architecture(value)
        except ConfigurationError as e:
            raise ValidationError(str(e))
        return value


class NetworkConfig(base.Config):
    """One network of the agent.

    Options:
        architecture (string): the network that is built, in table notation
        activations (string, optional): activation list aligned with the last dense stages
        reported_architecture (string, optional): architecture as listed in the reference table
        reported_params (int, optional): parameter count as listed in the reference table
    """

    architecture = ArchitectureString()
    activations = config_options.Optional(config_options.Type(str))
    reported_architecture = config_options.Optional(config_options.Type(str))
    reported_params = config_options.Optional(config_options.Type(int))


class SacConfig(base.Config):
    gamma = UnitInterval(default=0.99)
    entropy_alpha = Positive(default=0.2, allow_zero=True)
    lr = Positive(default=0.0003)
    memory_size = config_options.Type(int, default=1_000_000)
    optimizer = config_options.Choice(("Adam",), default="Adam")
    rho = UnitInterval(default=0.995)
    batch_size = config_options.Type(int, default=64)
    warmup_steps = config_options.Type(int, default=1000)
    max_episodes = config_options.Type(int, default=5000)
    updates_per_step = config_options.Type(int, default=1)
    bootstrap_on_truncation = config_options.Type(bool, default=False)
    checkpoint_every = config_options.Type(int, default=0)
    record_wall_time = config_options.Type(bool, default=False)


class EnvSection(base.Config):
    link_mass = Positive(default=0.01)
    link_length = Positive(default=0.5)
    link_width = Positive(default=0.1)
    max_steps = config_options.Type(int, default=250)
    fps = config_options.Type(int, default=50)
    distance_threshold = Positive(default=0.25)
    max_joint_velocity = Positive(default=2.5)
    max_torque = Positive(default=1000.0)
    gravity = Positive(default=9.81)
    substeps = config_options.Type(int, default=20)


class BenchmarkConfig(base.Config):
    """Reference statistics for the convergence check.

    Options:
        return_mean, return_std (float): benchmark return statistics used when no
            `qsac benchmark` stats.yml is supplied
    """

    return_mean = config_options.Type((int, float), default=-17.397)
    return_std = Positive(default=11.528)


class ExperimentConfig(base.Config):
    """A training experiment: agent architecture, SAC hyperparameters and environment.

    Options:
        name (string): identifier used for run directories and curve series
        n_seeds (int): independent training runs
        reported_total_params (int, optional): total count listed in the reference table
    """

    name = config_options.Type(str)
    description = config_options.Optional(config_options.Type(str))
    n_seeds = config_options.Type(int, default=10)
    reported_total_params = config_options.Optional(config_options.Type(int))

    actor = config_options.SubConfig(NetworkConfig)
    critic = config_options.SubConfig(NetworkConfig)
    sac = config_options.SubConfig(SacConfig)
    env = config_options.SubConfig(EnvSection)
    benchmark = config_options.SubConfig(BenchmarkConfig)


def _resolve(path_or_preset: Union[str, Path]) -> Path:
    path = Path(path_or_preset)
    if path.is_file():
        return path
    preset = PRESET_DIR / f"{path_or_preset}.yml"
    if preset.is_file():
        return preset
    raise ConfigurationError(f"No config file or preset named {str(path_or_preset)!r}; presets: {', '.join(PRESETS)}")


def validate_config(data: dict, source: str = "<dict>") -> ExperimentConfig:
    """Validate a raw mapping; unknown keys are errors."""
    config = ExperimentConfig(config_file_path=source)
    config.load_dict(data)
    failed, warnings = config.validate()
    problems = [f"{key}: {error}" for key, error in failed + warnings]
    if problems:
        raise ConfigurationError(f"Invalid configuration {source}:\n  " + "\n  ".join(problems))
    architectures(config)
    return config


def load_config(path_or_preset: Union[str, Path]) -> ExperimentConfig:
    """Load a YAML experiment file, or a shipped preset by name."""
    path = _resolve(path_or_preset)
    log.debug(f"Loading configuration from {path}")
    try:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Cannot parse {path}: {e}") from e
    return validate_config(data, str(path))


def as_dict(config: base.Config) -> dict:
    """Plain nested mapping of a validated config."""
    return {key: as_dict(value) if isinstance(value, base.Config) else value for key, value in config.items()}


def save_config(config: ExperimentConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(as_dict(config), f, sort_keys=False)
    return path


def with_overrides(config: ExperimentConfig, overrides: Dict[str, object]) -> ExperimentConfig:
    """Re-validated copy with dotted-key overrides, e.g. {"sac.max_episodes": 50}."""
    data = as_dict(config)
    for dotted, value in overrides.items():
        *sections, key = dotted.split(".")
        target = data
        for section in sections:
            target = target[section]
        target[key] = value
    return validate_config(data, config.config_file_path or "<overrides>")


def architectures(config: ExperimentConfig) -> Tuple[ArchitectureConfig, ArchitectureConfig]:
    actor = parse_architecture(config.actor.architecture, "actor", config.actor.activations)
    critic = parse_architecture(config.critic.architecture, "critic", config.critic.activations)
    return actor, critic


def to_hyperparams(config: ExperimentConfig) -> SacHyperparams:
    sac = config.sac
    return SacHyperparams(
        gamma=sac.gamma,
        entropy_alpha=sac.entropy_alpha,
        lr=sac.lr,
        rho=sac.rho,
        batch_size=sac.batch_size,
        warmup_steps=sac.warmup_steps,
        max_episodes=sac.max_episodes,
        memory_size=sac.memory_size,
        updates_per_step=sac.updates_per_step,
        bootstrap_on_truncation=sac.bootstrap_on_truncation,
        checkpoint_every=sac.checkpoint_every,
    )


def to_env_config(config: ExperimentConfig) -> EnvConfig:
    return EnvConfig(**dict(config.env.items()))


def reported_values(config: ExperimentConfig) -> Dict[str, object]:
    """Reference-table values carried by a preset."""
    return {
        "actor_architecture": config.actor.reported_architecture,
        "actor_params": config.actor.reported_params,
        "critic_architecture": config.critic.reported_architecture,
        "critic_params": config.critic.reported_params,
        "total_params": config.reported_total_params,
    }
