"""Bit-exact model checkpoint and prototype-file serialization.

Checkpoint layout (all little-endian):

    magic   4s   "DCK1"
    version u16  (currently 1)
    config  u32 x7: d_in_img, d_in_txt, d_map, n_blocks, n_heads,
                    bottleneck_ratio, n_classes
            f64 x2: lambda_init, sigma_scale
            u8  x4: use_acar, use_dfa, use_sai, use_lp
    count   u32  number of tensor records
    records name length u16 + UTF-8 name, dtype tag u8 (0=f64, 1=f32),
            rank u8, one u64 per dimension, raw row-major values

Prototype files carry the same tensor records under their own magic:

    magic "DPT1", version u16, count u32, records as above

Writes are canonical (fixed parameter order, f64 payloads), so
write -> read -> write reproduces files byte for byte.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .errors import DataFormatError
from .model import DarcModel, ModelConfig

CHECKPOINT_MAGIC = b"DCK1"
PROTOTYPE_MAGIC = b"DPT1"
FORMAT_VERSION = 1

_CONFIG = struct.Struct("<7I2d4B")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")

_DTYPE_TAGS = {0: np.dtype("<f8"), 1: np.dtype("<f4")}


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise DataFormatError(f"truncated file: expected {n} bytes for {what}, got {len(buf)}")
    return buf


def _write_tensor(fh: BinaryIO, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    tag = 0 if arr.dtype == np.float64 else 1
    fh.write(_U16.pack(len(encoded)))
    fh.write(encoded)
    fh.write(bytes([tag, arr.ndim]))
    for dim in arr.shape:
        fh.write(_U64.pack(dim))
    fh.write(np.ascontiguousarray(arr, dtype=_DTYPE_TAGS[tag]).tobytes())


def _read_tensor(fh: BinaryIO) -> tuple[str, np.ndarray]:
    (name_len,) = _U16.unpack(_read_exact(fh, 2, "tensor name length"))
    name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
    tag, rank = _read_exact(fh, 2, f"tensor header of {name!r}")
    if tag not in _DTYPE_TAGS:
        raise DataFormatError(f"tensor {name!r}: unknown dtype tag {tag}")
    dims = tuple(_U64.unpack(_read_exact(fh, 8, f"dimension of {name!r}"))[0] for _ in range(rank))
    dtype = _DTYPE_TAGS[tag]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    raw = _read_exact(fh, count * dtype.itemsize, f"values of {name!r}")
    return name, np.frombuffer(raw, dtype=dtype).reshape(dims).copy()


def save_checkpoint(model: DarcModel, path) -> None:
    """Write the model's config and parameters in canonical form."""
    cfg = model.config
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(_U16.pack(FORMAT_VERSION))
        fh.write(
            _CONFIG.pack(
                cfg.d_in_img,
                cfg.d_in_txt,
                cfg.d_map,
                cfg.n_blocks,
                cfg.n_heads,
                cfg.bottleneck_ratio,
                cfg.n_classes,
                cfg.lambda_init,
                cfg.sigma_scale,
                cfg.use_acar,
                cfg.use_dfa,
                cfg.use_sai,
                cfg.use_lp,
            )
        )
        params = model.named_parameters()
        fh.write(_U32.pack(len(params)))
        for name, tensor in params.items():
            _write_tensor(fh, name, tensor.data)


def load_checkpoint(path) -> DarcModel:
    """Reconstruct a model from a checkpoint, bit-exactly."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise DataFormatError(f"bad checkpoint magic: {magic!r} (expected {CHECKPOINT_MAGIC!r})")
        (version,) = _U16.unpack(_read_exact(fh, 2, "format version"))
        if version != FORMAT_VERSION:
            raise DataFormatError(f"unsupported checkpoint version {version}")
        raw = _CONFIG.unpack(_read_exact(fh, _CONFIG.size, "model config"))
        cfg = ModelConfig(
            d_in_img=raw[0],
            d_in_txt=raw[1],
            d_map=raw[2],
            n_blocks=raw[3],
            n_heads=raw[4],
            bottleneck_ratio=raw[5],
            n_classes=raw[6],
            lambda_init=raw[7],
            sigma_scale=raw[8],
            use_acar=bool(raw[9]),
            use_dfa=bool(raw[10]),
            use_sai=bool(raw[11]),
            use_lp=bool(raw[12]),
        )
        (count,) = _U32.unpack(_read_exact(fh, 4, "tensor count"))
        state = {}
        for _ in range(count):
            name, arr = _read_tensor(fh)
            if name in state:
                raise DataFormatError(f"duplicate tensor record {name!r}")
            state[name] = arr
        if fh.read(1):
            raise DataFormatError("trailing bytes after final tensor record")
    model = DarcModel(cfg, seed=0)
    model.load_state_dict(state)
    return model


def save_prototypes(prototypes: np.ndarray, path) -> None:
    """Write a class-prototype matrix [n_classes, d_map]."""
    arr = np.asarray(prototypes)
    if arr.ndim != 2:
        raise DataFormatError(f"prototype array must be 2-D, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(PROTOTYPE_MAGIC)
        fh.write(_U16.pack(FORMAT_VERSION))
        fh.write(_U32.pack(1))
        _write_tensor(fh, "prototypes", arr)


def load_prototypes(path) -> np.ndarray:
    """Read a prototype matrix written by :func:`save_prototypes`."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != PROTOTYPE_MAGIC:
            raise DataFormatError(f"bad prototype-file magic: {magic!r} (expected {PROTOTYPE_MAGIC!r})")
        (version,) = _U16.unpack(_read_exact(fh, 2, "format version"))
        if version != FORMAT_VERSION:
            raise DataFormatError(f"unsupported prototype-file version {version}")
        (count,) = _U32.unpack(_read_exact(fh, 4, "tensor count"))
        if count != 1:
            raise DataFormatError(f"prototype file must hold exactly one tensor, found {count}")
        name, arr = _read_tensor(fh)
        if fh.read(1):
            raise DataFormatError("trailing bytes after prototype record")
    if arr.ndim != 2:
        raise DataFormatError(f"prototype tensor {name!r} must be 2-D, got shape {arr.shape}")
    return arr.astype(np.float64)
