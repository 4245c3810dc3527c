"""Little-endian binary formats for checkpoints, GradSum caches and datasets.

Checkpoint (``EFCKPT01``)::

    magic[8] | version u32 | n_dims u32 | dims u32 * n_dims | params f64 * P

GradSum cache (``EFGSUM01``)::

    magic[8] | version u32 | round u32 | class u32 | path u8 | batch_size u32
    | sample_count u32 | failed_count u32 | succeeded_count u32
    | length u64 | values f64 * length

``path`` is 0 for per-sample and 1 for mini-batch (``batch_size`` is 0 for
per-sample).

Dataset (``EFDATA01``)::

    magic[8] | version u32 | n u64 | d u32 | n_classes u32
    | ids i64 * n | labels u32 * n | features f64 * (n * d)

Loaders compare the declared sizes against the file length before reading
the payload.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .data import Dataset
from .errors import FormatError, LengthError
from .estimator import GradSumRecord
from .nn import MlpNetwork, ParamVector, flatten_params, param_count

VERSION = 1
CKPT_MAGIC = b"EFCKPT01"
GSUM_MAGIC = b"EFGSUM01"
DATA_MAGIC = b"EFDATA01"

_GSUM_HEAD = struct.Struct("<8sIIIBIIIIQ")
_DATA_HEAD = struct.Struct("<8sIQII")


def _atomic_write(path, payload: bytes):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(payload)
    os.replace(tmp, path)


def _read_all(path) -> bytes:
    with open(path, "rb") as f:
        return f.read()


def _check_magic(buf, magic, path):
    if len(buf) < 12:
        raise LengthError(f"{path}: truncated header")
    if buf[:8] != magic:
        raise FormatError(f"{path}: bad magic {buf[:8]!r}, expected {magic!r}")
    (version,) = struct.unpack_from("<I", buf, 8)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")


def _check_length(buf, expected, path):
    if len(buf) != expected:
        raise LengthError(f"{path}: {len(buf)} bytes on disk, header implies {expected}")


# -- parameter vectors / checkpoints ----------------------------------------

def save_params(path, vector: ParamVector):
    dims = vector.layout
    head = CKPT_MAGIC + struct.pack(f"<II{len(dims)}I", VERSION, len(dims), *dims)
    _atomic_write(path, head + vector.values.astype("<f8").tobytes())


def load_params(path) -> ParamVector:
    buf = _read_all(path)
    _check_magic(buf, CKPT_MAGIC, path)
    if len(buf) < 16:
        raise LengthError(f"{path}: truncated header")
    (n_dims,) = struct.unpack_from("<I", buf, 12)
    head = 16 + 4 * n_dims
    if len(buf) < head:
        raise LengthError(f"{path}: truncated layer dims")
    dims = struct.unpack_from(f"<{n_dims}I", buf, 16)
    if n_dims < 2 or min(dims) < 1:
        raise FormatError(f"{path}: invalid layer dims {dims}")
    _check_length(buf, head + 8 * param_count(dims), path)
    return ParamVector(np.frombuffer(buf, dtype="<f8", offset=head).astype(np.float64), dims)


def save_checkpoint(path, net: MlpNetwork):
    save_params(path, flatten_params(net))


def load_checkpoint(path) -> MlpNetwork:
    vec = load_params(path)
    return MlpNetwork.from_vector(vec.layout, vec)


# -- GradSum caches ------------------------------------------------------------

def save_gradsum(path, rec: GradSumRecord):
    head = _GSUM_HEAD.pack(
        GSUM_MAGIC, VERSION, rec.round, rec.k,
        0 if rec.batch_size is None else 1,
        0 if rec.batch_size is None else rec.batch_size,
        rec.sample_count, rec.failed_count, rec.succeeded_count,
        len(rec.vector),
    )
    _atomic_write(path, head + rec.vector.values.astype("<f8").tobytes())


def load_gradsum(path, layout) -> GradSumRecord:
    """Load a GradSum cache; ``layout`` (layer dims) is checked against its length."""
    buf = _read_all(path)
    _check_magic(buf, GSUM_MAGIC, path)
    if len(buf) < _GSUM_HEAD.size:
        raise LengthError(f"{path}: truncated header")
    _, _, rnd, k, tag, bs, n, nf, nt, length = _GSUM_HEAD.unpack_from(buf)
    if tag not in (0, 1) or (tag == 1 and bs < 1):
        raise FormatError(f"{path}: bad path tag {tag} / batch size {bs}")
    _check_length(buf, _GSUM_HEAD.size + 8 * length, path)
    values = np.frombuffer(buf, dtype="<f8", offset=_GSUM_HEAD.size).astype(np.float64)
    return GradSumRecord(rnd, k, ParamVector(values, layout), n, nf, nt, bs if tag == 1 else None)


# -- datasets --------------------------------------------------------------------

def save_dataset(path, ds: Dataset):
    n, d = ds.features.shape
    parts = [
        _DATA_HEAD.pack(DATA_MAGIC, VERSION, n, d, ds.n_classes),
        ds.ids.astype("<i8").tobytes(),
        ds.labels.astype("<u4").tobytes(),
        ds.features.astype("<f8").tobytes(),
    ]
    _atomic_write(path, b"".join(parts))


def load_dataset(path) -> Dataset:
    buf = _read_all(path)
    _check_magic(buf, DATA_MAGIC, path)
    if len(buf) < _DATA_HEAD.size:
        raise LengthError(f"{path}: truncated header")
    _, _, n, d, c = _DATA_HEAD.unpack_from(buf)
    _check_length(buf, _DATA_HEAD.size + n * (8 + 4 + 8 * d), path)
    off = _DATA_HEAD.size
    ids = np.frombuffer(buf, "<i8", n, off)
    labels = np.frombuffer(buf, "<u4", n, off + 8 * n)
    feats = np.frombuffer(buf, "<f8", n * d, off + 12 * n).reshape(n, d)
    return Dataset(ids.astype(np.int64), feats.astype(np.float64), labels.astype(np.int64), c)
