"""Tensor validation, seeded generation and the LFTN binary tensor format.

Library tensors are plain ``torch.Tensor`` objects of dtype float32 with
positive dims and finite values. On disk they are stored as::

    b"LFTN" | version u32 | rank u32 | dims u64 * rank | payload f32 * prod(dims)

all little-endian, row-major, no padding and no footer.
"""
import logging
import math
import pathlib

import numpy as np
import torch

from .errors import FormatError, TruncationError, ValidationError

logger = logging.getLogger(__name__)

MAGIC = b"LFTN"
VERSION = 1
DISTRIBUTIONS = ("standard_normal", "uniform01")

_U32 = np.dtype("<u4")
_U64 = np.dtype("<u8")
_F32 = np.dtype("<f4")


def check_tensor(t, name="tensor", rank=None):
    """Raise ValidationError unless ``t`` is a finite float32 tensor with positive dims."""
    if not isinstance(t, torch.Tensor):
        raise ValidationError(f"{name} must be a torch.Tensor, got {type(t).__name__}")
    if t.dtype != torch.float32:
        raise ValidationError(f"{name} must be float32, got {t.dtype}")
    if rank is not None and t.dim() != rank:
        raise ValidationError(f"{name} must have rank {rank}, got shape {tuple(t.shape)}")
    if any(d <= 0 for d in t.shape):
        raise ValidationError(f"{name} has a non-positive dim: {tuple(t.shape)}")
    if not bool(torch.isfinite(t).all()):
        raise ValidationError(f"{name} contains NaN or Inf")
    return t


def _check_seed(seed):
    if int(seed) != seed or seed < 0 or seed >= 2 ** 64:
        raise ValidationError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return int(seed)


def make_generator(seed):
    """The pinned generator behind every seeded operation: numpy PCG64."""
    return np.random.Generator(np.random.PCG64(_check_seed(seed)))


def random_tensor(dims, seed, dist="standard_normal"):
    """Deterministic float32 tensor drawn from PCG64(seed).

    ``standard_normal`` uses ``Generator.standard_normal(dtype=float32)`` and
    ``uniform01`` uses ``Generator.random(dtype=float32)`` (values in [0, 1)).
    """
    dims = [int(d) for d in dims]
    if not dims:
        raise ValidationError("dims must not be empty")
    if any(d <= 0 for d in dims):
        raise ValidationError(f"dims must all be positive, got {dims}")
    rng = make_generator(seed)
    if dist == "standard_normal":
        data = rng.standard_normal(dims, dtype=np.float32)
    elif dist == "uniform01":
        data = rng.random(dims, dtype=np.float32)
    else:
        raise ValidationError(f"unknown distribution {dist!r}, expected one of {DISTRIBUTIONS}")
    return torch.from_numpy(np.ascontiguousarray(data))


def encode_tensor(t):
    check_tensor(t)
    dims = np.asarray(t.shape, dtype=_U64)
    header = MAGIC + np.asarray([VERSION, t.dim()], dtype=_U32).tobytes() + dims.tobytes()
    payload = t.detach().cpu().contiguous().numpy().astype(_F32, copy=False).tobytes()
    return header + payload


def decode_tensor(buf):
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise FormatError("not an LFTN file (bad magic)")
    version, rank = np.frombuffer(buf, dtype=_U32, count=2, offset=4)
    if version != VERSION:
        raise FormatError(f"unsupported LFTN version {int(version)}")
    rank = int(rank)
    header_len = 12 + 8 * rank
    if len(buf) < header_len:
        raise TruncationError(f"header declares rank {rank} but the file ends early")
    dims = [int(d) for d in np.frombuffer(buf, dtype=_U64, count=rank, offset=12)]
    if any(d == 0 for d in dims):
        raise ValidationError(f"LFTN dims must be positive, got {dims}")
    count = math.prod(dims)
    if len(buf) - header_len != 4 * count:
        raise TruncationError(
            f"header declares {count} values but payload carries {(len(buf) - header_len) / 4:g}")
    data = np.frombuffer(buf, dtype=_F32, count=count, offset=header_len).astype(np.float32)
    t = torch.from_numpy(data.reshape(dims))
    if not bool(torch.isfinite(t).all()):
        raise ValidationError("LFTN payload contains NaN or Inf")
    return t


def write_tensor(t, path):
    path = pathlib.Path(path)
    path.write_bytes(encode_tensor(t))
    logger.debug("wrote %s %s", path, tuple(t.shape))


def read_tensor(path):
    path = pathlib.Path(path)
    t = decode_tensor(path.read_bytes())
    logger.debug("read %s %s", path, tuple(t.shape))
    return t
