"""
Plain-text checkpoints.

    qsac-checkpoint 1
    @config sac_classical
    @episode 250
    actor.pre.0.weights 7x6 0.1 -0.25 ...
    actor.pre.0.bias 7 0.0 0.0 ...

Values are written with repr() so they read back bit-identical.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Union

import numpy as np

from qsac.utils import log

HEADER = "qsac-checkpoint"
VERSION = 1


@dataclass
class Checkpoint:
    metadata: Dict[str, str] = field(default_factory=dict)
    groups: Dict[str, np.ndarray] = field(default_factory=dict)


def _format_shape(shape) -> str:
    return "x".join(str(d) for d in shape)


def save_checkpoint(path: Union[str, Path], checkpoint: Checkpoint) -> Path:
    path = Path(path)
    lines = [f"{HEADER} {VERSION}"]
    for key, value in checkpoint.metadata.items():
        text = str(value)
        if not key or any(c.isspace() for c in key) or "\n" in text:
            raise ValueError(f"Metadata entry {key!r} cannot be stored on one line")
        lines.append(f"@{key} {text}")
    for name, values in checkpoint.groups.items():
        values = np.asarray(values, dtype=float)
        if values.ndim == 0 or any(c.isspace() for c in name):
            raise ValueError(f"Cannot store parameter group {name!r} with shape {values.shape}")
        body = " ".join(repr(float(v)) for v in values.ravel())
        lines.append(f"{name} {_format_shape(values.shape)} {body}".rstrip())
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    log.debug(f"Wrote checkpoint with {len(checkpoint.groups)} groups to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].split() != [HEADER, str(VERSION)]:
        raise ValueError(f"{path} is not a version {VERSION} checkpoint")
    checkpoint = Checkpoint()
    for number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("@"):
            key, _, value = line[1:].partition(" ")
            checkpoint.metadata[key] = value
            continue
        name, _, rest = line.partition(" ")
        try:
            shape_text, *values = rest.split()
            shape = tuple(int(d) for d in shape_text.split("x"))
            array = np.array([float(v) for v in values], dtype=float)
        except ValueError as e:
            raise ValueError(f"{path}:{number}: malformed group {name!r}") from e
        if array.size != int(np.prod(shape)):
            raise ValueError(f"{path}:{number}: group {name!r} has {array.size} values for shape {shape_text}")
        checkpoint.groups[name] = array.reshape(shape)
    return checkpoint
