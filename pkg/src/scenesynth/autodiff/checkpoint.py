"""Binary parameter checkpoints.

Layout: magic, u32 version, u32 record count, then per parameter
u32 name length, UTF-8 name, u32 rank, u32 dims, little-endian float32 data.
"""

import logging
import struct
from pathlib import Path

import numpy as np

from ..errors import AutodiffError, ShapeError
from .nn import Module

logger = logging.getLogger(__name__)

MAGIC = b"SSYNCKPT"
VERSION = 1


def encode_checkpoint(state: dict[str, np.ndarray]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(state))]
    for name, array in state.items():
        encoded = name.encode("utf-8")
        array = np.asarray(array)
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return b"".join(chunks)


def decode_checkpoint(blob: bytes, source: str = "<bytes>") -> dict[str, np.ndarray]:
    if blob[: len(MAGIC)] != MAGIC:
        raise AutodiffError(f"Not a checkpoint file: {source}")
    offset = len(MAGIC)
    try:
        version, count = struct.unpack_from("<II", blob, offset)
        offset += 8
        if version != VERSION:
            raise AutodiffError(f"Unsupported checkpoint version {version}: {source}")
        state = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            shape = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            data = np.frombuffer(blob, dtype="<f4", count=size, offset=offset)
            offset += 4 * size
            state[name] = data.astype(np.float32).reshape(shape)
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        raise AutodiffError(f"Truncated or corrupt checkpoint {source}: {e}") from e
    if offset != len(blob):
        raise AutodiffError(f"Trailing bytes in checkpoint {source}")
    return state


def save_checkpoint(path: Path, module: Module) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(module.state_dict()))
    logger.debug("Saved checkpoint %s", path)


def read_checkpoint(path: Path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise AutodiffError(f"Checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes(), str(path))


def load_checkpoint(path: Path, module: Module) -> Module:
    """Load parameters into module, checking names and shapes."""
    state = read_checkpoint(path)
    try:
        module.load_state_dict(state)
    except (AutodiffError, ShapeError) as e:
        raise type(e)(f"{path}: {e}") from e
    return module
