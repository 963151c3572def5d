"""Binary file formats: checkpoints (``NPT1``) and raw tensors (``NPTR``).

Both are little-endian and end in a CRC32 of every preceding byte.

Checkpoint layout::

    b"NPT1" | version u32 | tensor count u32
    per tensor: name length u16 | UTF-8 name | rank u8 | dims u32 x rank | float32 data
    state block: JSON length u32 | UTF-8 JSON | momentum count u32 | tensors as above
    CRC32 u32

Raw tensor layout::

    b"NPTR" | version u32 | dtype code u8 | rank u8 | dims u32 x rank | data | CRC32 u32
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_MAGIC = b"NPT1"
CHECKPOINT_VERSION = 1
TENSOR_MAGIC = b"NPTR"
TENSOR_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<i4"), 2: np.dtype("u1"), 3: np.dtype("<i8")}


class FormatError(ValueError):
    pass


class BadMagicError(FormatError):
    pass


class BadCRCError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


@dataclass
class Checkpoint:
    architecture: dict
    params: dict  # name -> float32 ndarray, insertion order preserved
    epoch: int = 0
    momentum: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype="<f4", order="C")
    raw = name.encode("utf-8")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


class _Reader:
    def __init__(self, buf: bytes, pos: int = 0):
        self.buf, self.pos = buf, pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError("unexpected end of data")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def tensor(self) -> tuple:
        (nlen,) = self.unpack("<H")
        name = self.take(nlen).decode("utf-8")
        (rank,) = self.unpack("<B")
        dims = self.unpack(f"<{rank}I")
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(dims)
        return name, arr.astype(np.float32)


def _check_frame(buf: bytes, magic: bytes, version: int, what: str) -> None:
    if buf[:4] != magic:
        raise BadMagicError(f"not a {what} file (magic {buf[:4]!r})")
    if len(buf) < 12 or zlib.crc32(buf[:-4]) != struct.unpack("<I", buf[-4:])[0]:
        raise BadCRCError(f"{what} CRC mismatch (truncated or corrupted)")
    (found,) = struct.unpack("<I", buf[4:8])
    if found != version:
        raise VersionMismatchError(f"{what} version {found}, expected {version}")


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    body = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(ckpt.params))]
    body += [_pack_tensor(k, v) for k, v in ckpt.params.items()]
    state = {"architecture": ckpt.architecture, "epoch": int(ckpt.epoch), "manifest": ckpt.manifest}
    js = json.dumps(state, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body += [struct.pack("<I", len(js)), js, struct.pack("<I", len(ckpt.momentum))]
    body += [_pack_tensor(k, v) for k, v in ckpt.momentum.items()]
    data = b"".join(body)
    return data + struct.pack("<I", zlib.crc32(data))


def decode_checkpoint(buf: bytes) -> Checkpoint:
    _check_frame(buf, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, "checkpoint")
    r = _Reader(buf[:-4], 8)
    (count,) = r.unpack("<I")
    params = dict(r.tensor() for _ in range(count))
    (jlen,) = r.unpack("<I")
    state = json.loads(r.take(jlen).decode("utf-8"))
    (mcount,) = r.unpack("<I")
    momentum = dict(r.tensor() for _ in range(mcount))
    return Checkpoint(state["architecture"], params, state["epoch"], momentum, state["manifest"])


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


def checkpoint_from_net(net, epoch: int = 0, momentum: dict | None = None,
                        manifest: dict | None = None) -> Checkpoint:
    return Checkpoint(net.descriptor(), {k: v.data for k, v in net.params.items()}, epoch,
                      dict(momentum or {}), dict(manifest or {}))


def net_from_checkpoint(ckpt: Checkpoint):
    from .model import SmallConvNet
    from .tensorcore import Tensor

    net = SmallConvNet.from_descriptor(ckpt.architecture)
    expected = net.param_shapes()
    if list(expected) != list(ckpt.params) or any(
            tuple(expected[k]) != ckpt.params[k].shape for k in expected):
        raise FormatError("checkpoint tensors do not match the architecture descriptor")
    net.params = {k: Tensor(v.copy(), requires_grad=True) for k, v in ckpt.params.items()}
    return net


# ---------------------------------------------------------------------------
# raw tensors


def encode_tensor(arr: np.ndarray) -> bytes:
    """Serialise an array; floats are stored as float32, other ints as int64."""
    arr = np.asarray(arr)
    if arr.dtype.kind == "f":
        code = 0
    elif arr.dtype == np.uint8:
        code = 2
    elif arr.dtype == np.int32:
        code = 1
    elif arr.dtype.kind in "iub":
        code = 3
    else:
        raise FormatError(f"unsupported tensor dtype {arr.dtype}")
    arr = np.asarray(arr, dtype=_DTYPES[code], order="C")
    data = TENSOR_MAGIC + struct.pack("<IBB", TENSOR_VERSION, code, arr.ndim)
    data += struct.pack(f"<{arr.ndim}I", *arr.shape) + arr.tobytes()
    return data + struct.pack("<I", zlib.crc32(data))


def decode_tensor(buf: bytes) -> np.ndarray:
    _check_frame(buf, TENSOR_MAGIC, TENSOR_VERSION, "tensor")
    r = _Reader(buf[:-4], 8)
    code, rank = r.unpack("<BB")
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    dims = r.unpack(f"<{rank}I")
    dt = _DTYPES[code]
    count = int(np.prod(dims)) if rank else 1
    return np.frombuffer(r.take(dt.itemsize * count), dtype=dt).reshape(dims).copy()


def write_tensor(path, arr) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())
