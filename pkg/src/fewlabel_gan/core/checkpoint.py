"""Checkpoint save/restore: model tensors, buffers and Adam moments in one npz."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import torch
import torch.nn as nn

from fewlabel_gan.core.gan_models import (
    from_reference_layout,
    load_state_arrays,
    named_reference_tensors,
    state_arrays,
    to_reference_layout,
)
from fewlabel_gan.utils.logger import setup_logger
from fewlabel_gan.utils.validators import StateError

logger = setup_logger(__name__)

CHECKPOINT_PREFIX = "ckpt"
_STEP_KEY = "meta/step"


@dataclass
class CheckpointInfo:
    path: Path
    step: int
    metadata: Dict[str, Any] = field(default_factory=dict)


def _optimizer_arrays(
    model: nn.Module, optimizer: torch.optim.Optimizer, scope: str
) -> Dict[str, np.ndarray]:
    arrays: Dict[str, np.ndarray] = {}
    for name, param, module, leaf in named_reference_tensors(model, scope):
        state = optimizer.state.get(param)
        if not state:
            continue
        for key, short in (("exp_avg", "m"), ("exp_avg_sq", "v")):
            moment = to_reference_layout(state[key].detach(), module, leaf)
            arrays[f"optimizer/{name}/{short}"] = moment.cpu().numpy()
        arrays[f"optimizer/{name}/step"] = np.asarray(float(state["step"]), dtype=np.float64)
    return arrays


def _load_optimizer(
    model: nn.Module,
    optimizer: torch.optim.Optimizer,
    arrays: Dict[str, np.ndarray],
    scope: str,
) -> None:
    for name, param, module, leaf in named_reference_tensors(model, scope):
        key = f"optimizer/{name}"
        if f"{key}/m" not in arrays:
            continue
        optimizer.state[param] = {
            "step": torch.tensor(float(arrays[f"{key}/step"])),
            "exp_avg": from_reference_layout(torch.from_numpy(arrays[f"{key}/m"]), module, leaf)
            .to(param.dtype)
            .clone(),
            "exp_avg_sq": from_reference_layout(
                torch.from_numpy(arrays[f"{key}/v"]), module, leaf
            )
            .to(param.dtype)
            .clone(),
        }


def checkpoint_path(directory: Path, step: int) -> Path:
    return Path(directory) / f"{CHECKPOINT_PREFIX}-{step:07d}.npz"


def save_checkpoint(
    directory: Path,
    step: int,
    generator: nn.Module,
    discriminator: nn.Module,
    g_optimizer: torch.optim.Optimizer,
    d_optimizer: torch.optim.Optimizer,
    metadata: Optional[Dict[str, Any]] = None,
) -> CheckpointInfo:
    """
    Write `ckpt-<step>.npz` plus a JSON sidecar with run metadata.

    Returns:
        CheckpointInfo for the written file.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays: Dict[str, np.ndarray] = {}
    arrays.update(state_arrays(generator, "generator"))
    arrays.update(state_arrays(discriminator, "discriminator"))
    arrays.update(_optimizer_arrays(generator, g_optimizer, "generator"))
    arrays.update(_optimizer_arrays(discriminator, d_optimizer, "discriminator"))
    arrays[_STEP_KEY] = np.asarray(step, dtype=np.int64)

    path = checkpoint_path(directory, step)
    np.savez(path, **arrays)
    meta = dict(metadata or {})
    meta["step"] = step
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    logger.info(f"Saved checkpoint at step {step} to {path}")
    return CheckpointInfo(path=path, step=step, metadata=meta)


def latest_checkpoint(directory: Path) -> Optional[Path]:
    candidates = sorted(Path(directory).glob(f"{CHECKPOINT_PREFIX}-*.npz"))
    return candidates[-1] if candidates else None


def load_checkpoint(
    path: Path,
    generator: nn.Module,
    discriminator: nn.Module,
    g_optimizer: Optional[torch.optim.Optimizer] = None,
    d_optimizer: Optional[torch.optim.Optimizer] = None,
) -> CheckpointInfo:
    """
    Restore models (and optimizers when given) in place.

    Raises:
        FileNotFoundError: If the checkpoint does not exist.
        StateError: If the file is not a checkpoint.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    with np.load(path) as data:
        arrays = {key: data[key] for key in data.files}
    if _STEP_KEY not in arrays:
        raise StateError(f"{path} is not a training checkpoint")

    load_state_arrays(generator, arrays, "generator")
    load_state_arrays(discriminator, arrays, "discriminator")
    if g_optimizer is not None:
        _load_optimizer(generator, g_optimizer, arrays, "generator")
    if d_optimizer is not None:
        _load_optimizer(discriminator, d_optimizer, arrays, "discriminator")

    sidecar = path.with_suffix(".json")
    metadata = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    step = int(arrays[_STEP_KEY])
    logger.info(f"Restored checkpoint {path} (step {step})")
    return CheckpointInfo(path=path, step=step, metadata=metadata)
