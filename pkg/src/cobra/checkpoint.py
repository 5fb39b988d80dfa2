"""Binary checkpoint: "CBRA" magic, version, model-config record, named parameter blocks."""

import logging
import struct
from pathlib import Path
from typing import BinaryIO, Dict, Optional, Tuple

import numpy as np

from .config import ModelConfig, model_config_from_text, model_config_to_text
from .errors import CheckpointMismatchError, ConfigError, DataError, InputPathError
from .model import CobraModel

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"CBRA"
CHECKPOINT_VERSION = 1


def check_compatible(expected: ModelConfig, found: ModelConfig) -> None:
    """Raise when two configs disagree on any field that shapes the parameters."""
    a, b = expected.shape_signature(), found.shape_signature()
    diffs = [f"{key}: config={a[key]} checkpoint={b[key]}" for key in a if a[key] != b[key]]
    if diffs:
        raise CheckpointMismatchError("checkpoint does not match configuration: " + "; ".join(diffs))


def _write_block(f: BinaryIO, name: str, values: np.ndarray) -> None:
    raw = name.encode("utf-8")
    f.write(struct.pack("<H", len(raw)))
    f.write(raw)
    f.write(struct.pack("<B", values.ndim))
    f.write(struct.pack(f"<{values.ndim}I", *values.shape))
    f.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def _read(f: BinaryIO, n: int, path: Path) -> bytes:
    chunk = f.read(n)
    if len(chunk) != n:
        raise DataError(f"{path}: truncated checkpoint")
    return chunk


def save_checkpoint(model: CobraModel, path: Path) -> Path:
    path = Path(path)
    params = model.parameters()
    header = model_config_to_text(model.cfg).encode("utf-8")
    try:
        with open(path, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(struct.pack("<HI", CHECKPOINT_VERSION, len(header)))
            f.write(header)
            f.write(struct.pack("<I", len(params)))
            for name, tensor in params.items():
                _write_block(f, name, tensor.data)
    except OSError as e:
        raise InputPathError(f"cannot write checkpoint {path}: {e}") from e
    logger.info(f"Checkpoint saved to {path} ({len(params)} tensors)")
    return path


def read_checkpoint(path: Path) -> Tuple[ModelConfig, Dict[str, np.ndarray]]:
    path = Path(path)
    try:
        f = open(path, "rb")
    except OSError as e:
        raise InputPathError(f"cannot read checkpoint {path}: {e}") from e
    with f:
        if _read(f, 4, path) != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: not a cobra checkpoint")
        version, header_len = struct.unpack("<HI", _read(f, 6, path))
        if version != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        try:
            cfg = model_config_from_text(_read(f, header_len, path).decode("utf-8"))
        except ConfigError as e:
            raise DataError(f"{path}: {e}") from e
        (count,) = struct.unpack("<I", _read(f, 4, path))
        blocks: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read(f, 2, path))
            name = _read(f, name_len, path).decode("utf-8")
            (rank,) = struct.unpack("<B", _read(f, 1, path))
            shape = struct.unpack(f"<{rank}I", _read(f, 4 * rank, path))
            size = int(np.prod(shape)) if rank else 1
            blocks[name] = np.frombuffer(_read(f, 8 * size, path), dtype="<f8").astype(np.float64).reshape(shape)
    return cfg, blocks


def load_checkpoint(path: Path, expected: Optional[ModelConfig] = None) -> CobraModel:
    """Rebuild the model recorded in the checkpoint and copy its parameters in.

    With `expected`, the recorded config must agree with it on every shape field.
    """
    cfg, blocks = read_checkpoint(path)
    if expected is not None:
        check_compatible(expected, cfg)
    model = CobraModel(cfg)
    params = model.parameters()
    missing = sorted(set(params) - set(blocks))
    extra = sorted(set(blocks) - set(params))
    if missing or extra:
        raise CheckpointMismatchError(f"{path}: parameter names differ (missing={missing}, unexpected={extra})")
    for name, tensor in params.items():
        if blocks[name].shape != tensor.data.shape:
            raise CheckpointMismatchError(
                f"{path}: {name} has shape {blocks[name].shape}, model expects {tensor.data.shape}"
            )
        tensor.data = blocks[name].copy()
    logger.info(f"Checkpoint loaded from {path} ({cfg.variant.value}, {cfg.strategy.value})")
    return model
