"""
Checkpoint Contract - versioned model files
A checkpoint is a torch blob {"header": {...}, "state_dict": {...}}; the header
is validated before any weights are touched.
"""

from pathlib import Path
from typing import Any, Dict, Optional, Set, Tuple

import torch
import torch.nn as nn

from ..errors import CheckpointError
from ..utils.io import PathLike, save_torch_atomic
from ..utils.logger import get_logger

logger = get_logger("checkpoint")

FORMAT_VERSION = 1


class CheckpointContract:
    """Header schema shared by denoiser and classifier checkpoints."""

    REQUIRED_HEADER_FIELDS: Set[str] = {
        "format_version",
        "kind",
        "arch",
        "arch_kwargs",
        "input_shape",
        "schedule_T",
        "seed",
    }

    KINDS: Set[str] = {"denoiser", "classifier"}

    @classmethod
    def header(cls, kind: str, model: nn.Module, seed: int, schedule_T: Optional[int] = None) -> Dict[str, Any]:
        if kind not in cls.KINDS:
            raise CheckpointError(f"unknown checkpoint kind: {kind}")
        return {
            "format_version": FORMAT_VERSION,
            "kind": kind,
            "arch": model.arch,
            "arch_kwargs": model.arch_kwargs(),
            "input_shape": list(model.input_shape),
            "schedule_T": schedule_T,
            "seed": int(seed),
        }

    @classmethod
    def validate(cls, header: Any, expected_kind: Optional[str] = None) -> Dict[str, Any]:
        if not isinstance(header, dict):
            raise CheckpointError("checkpoint header missing")
        missing = cls.REQUIRED_HEADER_FIELDS - set(header)
        if missing:
            raise CheckpointError(f"checkpoint header missing fields: {sorted(missing)}")
        if header["format_version"] != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format_version {header['format_version']}")
        if expected_kind is not None and header["kind"] != expected_kind:
            raise CheckpointError(f"expected a {expected_kind} checkpoint, got {header['kind']}")
        return header


def save_checkpoint(path: PathLike, kind: str, model: nn.Module, seed: int, schedule_T: Optional[int] = None) -> Path:
    header = CheckpointContract.header(kind, model, seed, schedule_T)
    state = {k: v.detach().cpu().clone() for k, v in model.state_dict().items()}
    written = save_torch_atomic(path, {"header": header, "state_dict": state})
    logger.info("Checkpoint saved", path=str(written), kind=kind, arch=header["arch"])
    return written


def read_checkpoint(path: PathLike, expected_kind: Optional[str] = None) -> Tuple[Dict[str, Any], Dict[str, torch.Tensor]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if not isinstance(blob, dict) or "state_dict" not in blob:
        raise CheckpointError(f"malformed checkpoint {path}")
    header = CheckpointContract.validate(blob.get("header"), expected_kind)
    return header, blob["state_dict"]


def load_denoiser(path: PathLike):
    from ..diffusion.nets import build_denoiser

    header, state = read_checkpoint(path, expected_kind="denoiser")
    model = build_denoiser(header["arch"], header["schedule_T"], **header["arch_kwargs"])
    model.load_state_dict(state)
    model.to(dtype=next(iter(state.values())).dtype).eval()
    return model, header


def load_classifier(path: PathLike):
    from ..harness.classifier import build_classifier

    header, state = read_checkpoint(path, expected_kind="classifier")
    model = build_classifier(header["arch"], **header["arch_kwargs"])
    model.load_state_dict(state)
    model.to(dtype=next(iter(state.values())).dtype).eval()
    return model, header
