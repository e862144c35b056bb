"""Binary checkpoint format.

Layout (all integers little-endian u32)::

    b"DAFT" | version | metadata length | metadata (UTF-8 JSON)
    then, until end of file, one record per tensor:
    name length | name (UTF-8) | rank | dims[rank] | dtype code | raw values

dtype code 1 is little-endian float32. The metadata lists every tensor name;
the loader rejects files whose table disagrees with it.
"""

import io
import json
import logging
import os
import struct
import tempfile
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Dict, List, Optional, Union

import numpy as np

from ..config import config
from ..errors import (
    BadMagicError,
    CheckpointError,
    DuplicateParameterError,
    MissingParameterError,
    TruncatedCheckpointError,
    UnexpectedParameterError,
    UnsupportedVersionError,
)
from ..models.schemas import CheckpointMetadata, EpochRecord, ModelConfig, OptimizerSnapshot
from .audit import audit_logger

log = logging.getLogger(__name__)

DTYPE_CODES = {1: np.dtype("<f4")}
_U32 = struct.Struct("<I")

OPTIMIZER_PREFIX = "optim."


@dataclass
class Checkpoint:
    metadata: CheckpointMetadata
    tensors: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)

    @property
    def kind(self) -> str:
        return self.metadata.kind

    @property
    def config(self) -> ModelConfig:
        return self.metadata.model_config_record()

    @property
    def history(self) -> List[EpochRecord]:
        return self.metadata.history

    def parameters(self, prefix: str = "") -> "OrderedDict[str, np.ndarray]":
        """Model tensors under ``prefix`` with the prefix stripped (optimizer buffers excluded)."""
        return OrderedDict(
            (name[len(prefix):], value)
            for name, value in self.tensors.items()
            if name.startswith(prefix) and not name.startswith(OPTIMIZER_PREFIX)
        )

    def optimizer_buffers(self) -> Dict[str, np.ndarray]:
        return {n[len(OPTIMIZER_PREFIX):]: v for n, v in self.tensors.items() if n.startswith(OPTIMIZER_PREFIX)}

    @classmethod
    def from_module(
        cls,
        module,
        history: Optional[List[EpochRecord]] = None,
        optimizer: Optional[OptimizerSnapshot] = None,
        optimizer_buffers: Optional[Dict[str, np.ndarray]] = None,
        frozen_prefixes: Optional[List[str]] = None,
    ) -> "Checkpoint":
        """Snapshot a backbone or an assembled model (anything with ``checkpoint_kind`` and ``config``)."""
        tensors = OrderedDict((n, np.asarray(v, dtype=np.float32)) for n, v in module.state_dict().items())
        for name, value in (optimizer_buffers or {}).items():
            tensors[OPTIMIZER_PREFIX + name] = np.asarray(value, dtype=np.float32)
        metadata = CheckpointMetadata(
            kind=module.checkpoint_kind,
            config=module.config.model_dump(mode="json"),
            tensor_names=list(tensors),
            frozen_prefixes=list(frozen_prefixes or getattr(module, "frozen_prefixes", [])),
            history=list(history or []),
            optimizer=optimizer,
        )
        return cls(metadata, tensors)


def _encode(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    meta = ckpt.metadata.model_copy(update={"tensor_names": list(ckpt.tensors)})
    meta_bytes = json.dumps(meta.model_dump(mode="json"), sort_keys=True).encode("utf-8")
    buf.write(config.CHECKPOINT_MAGIC)
    buf.write(_U32.pack(config.CHECKPOINT_VERSION))
    buf.write(_U32.pack(len(meta_bytes)))
    buf.write(meta_bytes)
    for name, value in ckpt.tensors.items():
        arr = np.ascontiguousarray(value, dtype=DTYPE_CODES[1])
        encoded = name.encode("utf-8")
        buf.write(_U32.pack(len(encoded)))
        buf.write(encoded)
        buf.write(_U32.pack(arr.ndim))
        for dim in arr.shape:
            buf.write(_U32.pack(dim))
        buf.write(_U32.pack(1))
        buf.write(arr.tobytes())
    return buf.getvalue()


def save_checkpoint(obj, path: Union[str, Path]) -> Path:
    """Write a ``Checkpoint`` (or snapshot a module first) to ``path`` atomically."""
    ckpt = obj if isinstance(obj, Checkpoint) else Checkpoint.from_module(obj)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = _encode(ckpt)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    audit_logger.log_checkpoint_event("write", str(path), ckpt.kind, len(ckpt.tensors), len(payload))
    return path


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedCheckpointError(f"truncated checkpoint: expected {n} bytes of {what}, got {len(data)}")
    return data


def _read_u32(fh: BinaryIO, what: str) -> int:
    return _U32.unpack(_read_exact(fh, 4, what))[0]


def read_checkpoint(fh: BinaryIO) -> Checkpoint:
    magic = fh.read(4)
    if len(magic) < 4 and config.CHECKPOINT_MAGIC.startswith(magic):
        raise TruncatedCheckpointError("truncated checkpoint: file ends inside the magic number")
    if magic != config.CHECKPOINT_MAGIC:
        raise BadMagicError(f"not a checkpoint: magic {magic!r} != {config.CHECKPOINT_MAGIC!r}")
    version = _read_u32(fh, "version")
    if version not in config.SUPPORTED_CHECKPOINT_VERSIONS:
        raise UnsupportedVersionError(f"checkpoint version {version} is not supported")
    meta_len = _read_u32(fh, "metadata length")
    raw_meta = _read_exact(fh, meta_len, "metadata")
    try:
        metadata = CheckpointMetadata.model_validate(json.loads(raw_meta.decode("utf-8")))
    except ValueError as e:
        raise CheckpointError(f"checkpoint metadata is unreadable: {e}") from e

    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    while True:
        head = fh.read(4)
        if not head:
            break
        if len(head) < 4:
            raise TruncatedCheckpointError("truncated checkpoint: partial tensor record")
        name_len = _U32.unpack(head)[0]
        raw_name = _read_exact(fh, name_len, "tensor name")
        try:
            name = raw_name.decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"tensor name {raw_name[:32]!r} is not valid UTF-8") from e
        rank = _read_u32(fh, f"rank of {name}")
        shape = tuple(_read_u32(fh, f"dims of {name}") for _ in range(rank))
        code = _read_u32(fh, f"dtype of {name}")
        if code not in DTYPE_CODES:
            raise CheckpointError(f"tensor {name} has unknown dtype code {code}")
        dtype = DTYPE_CODES[code]
        count = int(np.prod(shape, dtype=np.int64))
        payload = _read_exact(fh, count * dtype.itemsize, f"values of {name}")
        if name in tensors:
            raise DuplicateParameterError(name)
        tensors[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).astype(np.float32)

    expected = metadata.tensor_names
    missing = [n for n in expected if n not in tensors]
    if missing:
        raise MissingParameterError(missing)
    extra = [n for n in tensors if n not in set(expected)]
    if extra:
        raise UnexpectedParameterError(extra)
    return Checkpoint(metadata, tensors)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            ckpt = read_checkpoint(fh)
    except CheckpointError as e:
        audit_logger.log_error("load_checkpoint", e, {"path": str(path)})
        raise
    audit_logger.log_checkpoint_event("read", str(path), ckpt.kind, len(ckpt.tensors), path.stat().st_size)
    return ckpt
