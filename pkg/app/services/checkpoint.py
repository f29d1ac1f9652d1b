"""
Binary checkpoint format.

Layout (all integers little-endian):

    b'MMHC'                 magic
    u32                     format version
    u32 + bytes             config snapshot, JSON with sorted keys
    u32 + bytes             architecture hash (hex, ascii)
    u64                     training step
    u32 + bytes             RNG state, JSON ('null' when absent)
    u32                     parameter count, then per parameter:
        u16 + bytes         name (utf-8)
        u8                  dtype code (0 = f32, 1 = f64)
        u8 + u32 * ndim     shape
        raw                 values, little-endian, row-major

Serialisation is deterministic, so save -> load -> save reproduces the same bytes.
"""

import json
import logging
import os
import struct

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, BinaryIO, Optional

import numpy as np

from app.models.layers import Module
from app.utils.exceptions import CheckpointError, ConfigHashMismatchError


logger = logging.getLogger(__name__)

MAGIC = b'MMHC'
FORMAT_VERSION = 1

_DTYPE_CODES = {np.dtype('<f4'): 0, np.dtype('<f8'): 1}
_CODE_DTYPES = {code: dtype for dtype, code in _DTYPE_CODES.items()}


@dataclass
class Checkpoint:
    config: dict[str, Any]
    architecture_hash: str
    step: int
    parameters: dict[str, np.ndarray]
    rng_state: Optional[dict[str, Any]] = None
    version: int = FORMAT_VERSION

    def restore_rng(self) -> np.random.Generator:
        """Generator continuing from the saved state (fresh PCG64 when none was saved)."""
        generator = np.random.default_rng()
        if self.rng_state is not None:
            generator.bit_generator.state = self.rng_state
        return generator

    def apply_to(self, model: Module, expected_hash: Optional[str] = None, force: bool = False) -> None:
        """
        Load the parameter table into `model`.

        Raises:
            ConfigHashMismatchError: If `expected_hash` differs from the stored hash and not `force`.
        """
        if expected_hash is not None and expected_hash != self.architecture_hash:
            if not force:
                raise ConfigHashMismatchError(expected_hash, self.architecture_hash)
            logger.warning('Loading checkpoint despite architecture hash mismatch (force=True)')
        try:
            model.load_state_dict(self.parameters)
        except (KeyError, ValueError) as e:
            raise CheckpointError(f'checkpoint does not fit the model: {e}') from e


@dataclass
class _Writer:
    chunks: list[bytes] = field(default_factory=list)

    def pack(self, fmt: str, *values) -> None:
        self.chunks.append(struct.pack('<' + fmt, *values))

    def blob(self, data: bytes) -> None:
        self.pack('I', len(data))
        self.chunks.append(data)


def _json_bytes(value: Any) -> bytes:
    return json.dumps(value, sort_keys=True, separators=(',', ':')).encode('utf-8')


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    w = _Writer()
    w.chunks.append(MAGIC)
    w.pack('I', checkpoint.version)
    w.blob(_json_bytes(checkpoint.config))
    w.blob(checkpoint.architecture_hash.encode('ascii'))
    w.pack('Q', checkpoint.step)
    w.blob(_json_bytes(checkpoint.rng_state))
    w.pack('I', len(checkpoint.parameters))
    for name, values in checkpoint.parameters.items():
        array = np.asarray(values)
        dtype = array.dtype.newbyteorder('<')
        if dtype not in _DTYPE_CODES:
            raise CheckpointError(f'parameter {name} has unsupported dtype {array.dtype}')
        encoded = name.encode('utf-8')
        w.pack('H', len(encoded))
        w.chunks.append(encoded)
        w.pack('BB', _DTYPE_CODES[dtype], array.ndim)
        if array.ndim:
            w.pack(f'{array.ndim}I', *array.shape)
        w.chunks.append(np.ascontiguousarray(array, dtype=dtype).tobytes())
    return b''.join(w.chunks)


def _read_exact(handle: BinaryIO, n: int, what: str) -> bytes:
    data = handle.read(n)
    if len(data) != n:
        raise CheckpointError(f'checkpoint truncated while reading {what}')
    return data


def _unpack(handle: BinaryIO, fmt: str, what: str) -> tuple:
    return struct.unpack('<' + fmt, _read_exact(handle, struct.calcsize('<' + fmt), what))


def _read_blob(handle: BinaryIO, what: str) -> bytes:
    (n,) = _unpack(handle, 'I', what)
    return _read_exact(handle, n, what)


def decode_checkpoint(handle: BinaryIO) -> Checkpoint:
    if _read_exact(handle, 4, 'magic') != MAGIC:
        raise CheckpointError('not a checkpoint file (bad magic)')
    (version,) = _unpack(handle, 'I', 'version')
    if version != FORMAT_VERSION:
        raise CheckpointError(f'unsupported checkpoint version {version} (expected {FORMAT_VERSION})')
    try:
        config = json.loads(_read_blob(handle, 'config'))
        arch_hash = _read_blob(handle, 'architecture hash').decode('ascii')
        (step,) = _unpack(handle, 'Q', 'step')
        rng_state = json.loads(_read_blob(handle, 'rng state'))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointError(f'corrupt checkpoint header: {e}') from e

    (count,) = _unpack(handle, 'I', 'parameter count')
    parameters: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = _unpack(handle, 'H', 'parameter name')
        name = _read_exact(handle, name_len, 'parameter name').decode('utf-8')
        code, ndim = _unpack(handle, 'BB', f'{name} header')
        if code not in _CODE_DTYPES:
            raise CheckpointError(f'parameter {name}: unknown dtype code {code}')
        shape = _unpack(handle, f'{ndim}I', f'{name} shape') if ndim else ()
        dtype = _CODE_DTYPES[code]
        raw = _read_exact(handle, int(np.prod(shape, dtype=np.int64)) * dtype.itemsize, f'{name} values')
        parameters[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder('='))
    if handle.read(1):
        raise CheckpointError('trailing bytes after parameter table')
    return Checkpoint(
        config=config, architecture_hash=arch_hash, step=step, parameters=parameters, rng_state=rng_state, version=version
    )


def save_checkpoint(path: Path, checkpoint: Checkpoint) -> Path:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + '.tmp')
    tmp.write_bytes(encode_checkpoint(checkpoint))
    os.replace(tmp, path)
    logger.info(f'Checkpoint saved to {path} (step {checkpoint.step}, {path.stat().st_size:,} bytes)')
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f'checkpoint not found: {path}')
    with open(path, 'rb') as handle:
        return decode_checkpoint(handle)


def snapshot(
    model: Module,
    config: dict[str, Any],
    architecture_hash: str,
    step: int,
    rng: Optional[np.random.Generator] = None,
) -> Checkpoint:
    """Capture the model's parameters and buffers in a Checkpoint."""
    return Checkpoint(
        config=config,
        architecture_hash=architecture_hash,
        step=step,
        parameters=model.state_dict(),
        rng_state=rng.bit_generator.state if rng is not None else None,
    )
