"""Atomic file persistence and canonical JSON."""

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Optional, Union

import pandas as pd
import torch

from .logger import get_logger

logger = get_logger("io")

PathLike = Union[str, os.PathLike]


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def config_hash(payload: Any) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def _atomic_write(path: PathLike, write) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            write(handle)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_text_atomic(path: PathLike, text: str) -> Path:
    return _atomic_write(path, lambda h: h.write(text.encode("utf-8")))


def write_bytes_atomic(path: PathLike, data: bytes) -> Path:
    return _atomic_write(path, lambda h: h.write(data))


def write_json_atomic(path: PathLike, payload: Any) -> Path:
    return write_text_atomic(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def write_csv_atomic(path: PathLike, frame: pd.DataFrame) -> Path:
    return write_text_atomic(path, frame.to_csv(index=False))


def save_torch_atomic(path: PathLike, obj: Any) -> Path:
    return _atomic_write(path, lambda h: torch.save(obj, h))


def read_json(path: PathLike) -> Any:
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def resolve_output_dir(out: Optional[PathLike]) -> Path:
    """Explicit directory wins; otherwise the configured output root."""
    from ..config import settings

    directory = Path(out) if out is not None else settings.runtime.output_root
    directory.mkdir(parents=True, exist_ok=True)
    return directory
