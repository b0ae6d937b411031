"""Binary interchange formats: PPM (P6), TensorFile ("SFTB") and checkpoints.

TensorFile layout (little-endian)::

    b"SFTB" | u32 version=1 | u32 rank | u32 extent * rank | f32 payload (row-major)

Checkpoint layout::

    b"SFTC" | u32 version=1 | u32 entry count
    entry: u32 name length | UTF-8 name | TensorFile blob
    trailer: u64 iteration | u64 config hash
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TENSOR_MAGIC = b"SFTB"
CHECKPOINT_MAGIC = b"SFTC"
VERSION = 1


class FormatError(ValueError):
    """Raised for malformed PPM, TensorFile or checkpoint bytes."""


# ---------------------------------------------------------------------------
# PPM


def encode_ppm(img: np.ndarray) -> bytes:
    """Encode an HxWx3 uint8 array as binary PPM."""
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise FormatError(f"PPM needs an HxWx3 uint8 array, got {img.dtype} {img.shape}")
    h, w, _ = img.shape
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(img).tobytes()


def _ppm_tokens(buf: bytes, count: int) -> tuple[list[int], int]:
    tokens: list[int] = []
    pos = 2
    while len(tokens) < count:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and buf[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError("truncated or malformed PPM header")
        tokens.append(int(buf[start:pos]))
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise FormatError("PPM header not terminated by whitespace")
    return tokens, pos + 1


def decode_ppm(buf: bytes) -> np.ndarray:
    if buf[:2] != b"P6":
        raise FormatError("not a binary PPM (missing P6 magic)")
    (w, h, maxval), pos = _ppm_tokens(buf, 3)
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    payload = buf[pos:]
    if len(payload) != w * h * 3:
        raise FormatError(f"PPM payload has {len(payload)} bytes, expected {w * h * 3}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).copy()


def read_ppm(path) -> np.ndarray:
    return decode_ppm(Path(path).read_bytes())


def write_ppm(path, img: np.ndarray) -> None:
    _atomic_write(path, encode_ppm(img))


def image_to_uint8(chw: np.ndarray) -> np.ndarray:
    """3xHxW float image in [0, 1] -> HxWx3 uint8 (clipped, rounded)."""
    return (np.clip(chw, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8).transpose(1, 2, 0)


def uint8_to_image(hwc: np.ndarray) -> np.ndarray:
    return (hwc.astype(np.float32) / 255.0).transpose(2, 0, 1).copy()


# ---------------------------------------------------------------------------
# TensorFile


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    head = TENSOR_MAGIC + struct.pack("<II", VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _read_exact(stream: io.BufferedIOBase, n: int, what: str) -> bytes:
    data = stream.read(n)
    if len(data) != n:
        raise FormatError(f"truncated {what}: wanted {n} bytes, got {len(data)}")
    return data


def read_tensor_from(stream) -> np.ndarray:
    if _read_exact(stream, 4, "tensor magic") != TENSOR_MAGIC:
        raise FormatError("bad TensorFile magic")
    version, rank = struct.unpack("<II", _read_exact(stream, 8, "tensor header"))
    if version != VERSION:
        raise FormatError(f"unsupported TensorFile version {version}")
    shape = struct.unpack(f"<{rank}I", _read_exact(stream, 4 * rank, "tensor extents"))
    count = int(np.prod(shape, dtype=np.int64))
    payload = _read_exact(stream, 4 * count, "tensor payload")
    return np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)


def decode_tensor(buf: bytes) -> np.ndarray:
    stream = io.BytesIO(buf)
    arr = read_tensor_from(stream)
    if stream.read(1):
        raise FormatError("trailing bytes after TensorFile payload")
    return arr


def write_tensor(path, arr: np.ndarray) -> None:
    _atomic_write(path, encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    iteration: int = 0
    config_hash: int = 0
    meta: dict[str, str] = field(default_factory=dict)


# Metadata rides in the name table as zero-extent tensors named "@key=value".
_META_PREFIX = "@"


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    entries = [(f"{_META_PREFIX}{k}={v}", np.zeros((0,), np.float32)) for k, v in ckpt.meta.items()]
    entries += list(ckpt.tensors.items())
    out = [CHECKPOINT_MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, arr in entries:
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw + encode_tensor(arr))
    out.append(struct.pack("<QQ", ckpt.iteration, ckpt.config_hash))
    return b"".join(out)


def decode_checkpoint(buf: bytes) -> Checkpoint:
    stream = io.BytesIO(buf)
    if _read_exact(stream, 4, "checkpoint magic") != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic")
    version, count = struct.unpack("<II", _read_exact(stream, 8, "checkpoint header"))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    tensors: dict[str, np.ndarray] = {}
    meta: dict[str, str] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", _read_exact(stream, 4, "entry name length"))
        try:
            name = _read_exact(stream, nlen, "entry name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("entry name is not UTF-8") from exc
        arr = read_tensor_from(stream)
        if name.startswith(_META_PREFIX):
            key, _, value = name[1:].partition("=")
            meta[key] = value
        else:
            tensors[name] = arr
    iteration, config_hash = struct.unpack("<QQ", _read_exact(stream, 16, "checkpoint trailer"))
    if stream.read(1):
        raise FormatError("trailing bytes after checkpoint trailer")
    return Checkpoint(tensors=tensors, iteration=iteration, config_hash=config_hash, meta=meta)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    _atomic_write(path, encode_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
