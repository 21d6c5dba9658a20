"""
Functions about reading and writing model checkpoints.

Checkpoint layout (all integers unsigned 32-bit little-endian)::

    b"TPCK" | version | config length | config JSON (UTF-8)
    | tensor count
    | per tensor: name length | name (UTF-8) | ndim | dims... | float32 LE data
    | extra length | extra JSON (UTF-8)

Tensors named ``adam.exp_avg.<parameter>`` and ``adam.exp_avg_sq.<parameter>``
carry optimizer moments for resuming; the extra JSON carries the training
state (epoch, scheduler state, random seed).
"""

from __future__ import annotations

import json
import logging
import pathlib as pl
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from . import constants as cs
from .errors import ConfigError, FormatError, ShapeError
from .model import ModelConfig, Transpotter, init_parameters

logger = logging.getLogger(__name__)

U32 = struct.Struct("<I")
OPTIMIZER_PREFIX = "adam."


@dataclass
class Checkpoint:
    """
    A loaded checkpoint: the model, its config, any optimizer tensors, and
    the extra training state.
    """

    model: Transpotter
    config: ModelConfig
    optimizer_tensors: dict[str, torch.Tensor] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            raise FormatError(f"Checkpoint truncated while reading {what}", self.offset)
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def u32(self, what: str) -> int:
        return U32.unpack(self.take(4, what))[0]

    def text(self, what: str) -> str:
        n = self.u32(f"{what} length")
        start = self.offset
        try:
            return self.take(n, what).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"Invalid UTF-8 in {what}", start) from None


def _pack_text(s: str) -> bytes:
    b = s.encode("utf-8")
    return U32.pack(len(b)) + b


def _pack_tensor(name: str, tensor: torch.Tensor) -> bytes:
    values = tensor.detach().cpu().numpy().astype("<f4")
    parts = [_pack_text(name), U32.pack(values.ndim)]
    parts += [U32.pack(n) for n in values.shape]
    parts.append(values.tobytes(order="C"))
    return b"".join(parts)


def serialize_checkpoint(
    model: Transpotter,
    optimizer_tensors: dict[str, torch.Tensor] | None = None,
    extra: dict | None = None,
) -> bytes:
    """
    Return the checkpoint bytes of the given model, optionally with optimizer
    tensors and a JSON-serializable dictionary of extra training state.
    """
    config = json.dumps(model.config.to_dict(), sort_keys=True)
    tensors = dict(model.state_dict())
    for name, t in (optimizer_tensors or {}).items():
        tensors[OPTIMIZER_PREFIX + name] = t
    parts = [cs.CHECKPOINT_MAGIC, U32.pack(cs.CHECKPOINT_VERSION), _pack_text(config)]
    parts.append(U32.pack(len(tensors)))
    parts += [_pack_tensor(name, t) for name, t in tensors.items()]
    parts.append(_pack_text(json.dumps(extra or {}, sort_keys=True)))
    return b"".join(parts)


def save_checkpoint(
    path: str | pl.Path,
    model: Transpotter,
    optimizer_tensors: dict[str, torch.Tensor] | None = None,
    extra: dict | None = None,
) -> None:
    """
    Write the model (and optional resume state) to the given path via a
    temporary file, so a crash never leaves a half-written checkpoint.
    """
    path = pl.Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(serialize_checkpoint(model, optimizer_tensors, extra))
    tmp.replace(path)
    logger.debug("Saved checkpoint %s", path)


def deserialize_checkpoint(data: bytes, config: ModelConfig | None = None) -> Checkpoint:
    """
    Parse checkpoint bytes and return a Checkpoint.

    If ``config`` is given, then raise a ConfigError if the stored config
    differs from it.
    Raise a FormatError with a byte offset on a bad magic, an unsupported
    version, truncation, or a missing or unexpected parameter, and a
    ShapeError if a stored tensor shape differs from the one the config
    implies.
    """
    r = _Reader(data)
    magic = r.take(4, "magic")
    if magic != cs.CHECKPOINT_MAGIC:
        raise FormatError(f"Bad checkpoint magic {magic!r}", 0)
    version = r.u32("version")
    if version != cs.CHECKPOINT_VERSION:
        raise FormatError(f"Unsupported checkpoint version {version}", 4)

    offset = r.offset
    try:
        stored = ModelConfig.from_dict(json.loads(r.text("config")))
    except json.JSONDecodeError as e:
        raise FormatError(f"Invalid config JSON: {e.msg}", offset) from None
    if config is not None and config != stored:
        raise ConfigError(
            f"Checkpoint config {stored.to_dict()} does not match {config.to_dict()}"
        )

    model = init_parameters(stored, seed=0)
    expected = {name: tuple(t.shape) for name, t in model.state_dict().items()}
    state, optimizer_tensors = {}, {}
    for _ in range(r.u32("tensor count")):
        offset = r.offset
        name = r.text("tensor name")
        ndim = r.u32(f"{name} ndim")
        shape = tuple(r.u32(f"{name} dims") for _ in range(ndim))
        count = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(r.take(4 * count, f"{name} values"), dtype="<f4")
        tensor = torch.from_numpy(values.reshape(shape).copy())
        if name.startswith(OPTIMIZER_PREFIX):
            optimizer_tensors[name[len(OPTIMIZER_PREFIX) :]] = tensor
            continue
        if name not in expected:
            raise FormatError(f"Unexpected parameter {name!r}", offset)
        if shape != expected[name]:
            raise ShapeError(
                f"Parameter {name!r} has shape {shape}; the config implies {expected[name]}"
            )
        state[name] = tensor

    missing = sorted(set(expected) - set(state))
    if missing:
        raise FormatError(f"Checkpoint lacks parameters {missing}", r.offset)

    offset = r.offset
    try:
        extra = json.loads(r.text("extra")) if r.offset < len(data) else {}
    except json.JSONDecodeError as e:
        raise FormatError(f"Invalid extra JSON: {e.msg}", offset) from None

    model.load_state_dict(state)
    return Checkpoint(model, stored, optimizer_tensors, extra)


def load_checkpoint(path: str | pl.Path, config: ModelConfig | None = None) -> Checkpoint:
    """
    Read a checkpoint file; see :func:`deserialize_checkpoint`.
    """
    checkpoint = deserialize_checkpoint(pl.Path(path).read_bytes(), config)
    logger.debug("Loaded %s checkpoint from %s", checkpoint.config.variant, path)
    return checkpoint
