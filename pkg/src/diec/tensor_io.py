"""Binary tensor (DTF1) and checkpoint (DCK1) formats, plus CSV emitters.

DTF1 layout: b"DTF1", u8 rank, rank x u32 LE dims, float32 LE payload.
DCK1 layout: b"DCK1", u32 version, u32 header length, canonical JSON header,
u32 record count, then per record: u16 name length, UTF-8 name, DTF1 blob.
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError

DTF_MAGIC = b"DTF1"
DCK_MAGIC = b"DCK1"
DCK_VERSION = 1


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def encode_dtf(array) -> bytes:
    a = np.ascontiguousarray(np.asarray(array, dtype="<f4"))
    if a.ndim > 255:
        raise ShapeError("DTF1 supports rank <= 255")
    if not np.all(np.isfinite(a)):
        raise FormatError("DTF1 payload must be finite")
    head = DTF_MAGIC + struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + a.tobytes()


def _decode_dtf_stream(buf: io.BufferedIOBase) -> np.ndarray:
    magic = buf.read(4)
    if magic != DTF_MAGIC:
        raise FormatError(f"bad DTF1 magic {magic!r}")
    raw = buf.read(1)
    if len(raw) != 1:
        raise FormatError("truncated DTF1 header")
    rank = raw[0]
    raw = buf.read(4 * rank)
    if len(raw) != 4 * rank:
        raise FormatError("truncated DTF1 dims")
    shape = struct.unpack(f"<{rank}I", raw)
    n = int(np.prod(shape, dtype=np.int64))
    payload = buf.read(4 * n)
    if len(payload) != 4 * n:
        raise FormatError("truncated DTF1 payload")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)


def decode_dtf(data: bytes) -> np.ndarray:
    buf = io.BytesIO(data)
    arr = _decode_dtf_stream(buf)
    if buf.read(1):
        raise FormatError("trailing bytes after DTF1 payload")
    return arr


def write_dtf(path, array) -> None:
    Path(path).write_bytes(encode_dtf(array))


def read_dtf(path) -> np.ndarray:
    return decode_dtf(Path(path).read_bytes())


def encode_checkpoint(header: dict, tensors: dict) -> bytes:
    hbytes = canonical_json(header).encode()
    out = [DCK_MAGIC, struct.pack("<II", DCK_VERSION, len(hbytes)), hbytes,
           struct.pack("<I", len(tensors))]
    for name in tensors:
        nb = name.encode()
        out.append(struct.pack("<H", len(nb)) + nb)
        out.append(encode_dtf(tensors[name]))
    return b"".join(out)


def decode_checkpoint(data: bytes):
    buf = io.BytesIO(data)
    if buf.read(4) != DCK_MAGIC:
        raise FormatError("bad DCK1 magic")
    raw = buf.read(8)
    if len(raw) != 8:
        raise FormatError("truncated DCK1 header")
    version, hlen = struct.unpack("<II", raw)
    if version != DCK_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    hbytes = buf.read(hlen)
    if len(hbytes) != hlen:
        raise FormatError("truncated DCK1 header")
    header = json.loads(hbytes)
    raw = buf.read(4)
    if len(raw) != 4:
        raise FormatError("truncated DCK1 record count")
    (count,) = struct.unpack("<I", raw)
    tensors = {}
    for _ in range(count):
        raw = buf.read(2)
        if len(raw) != 2:
            raise FormatError("truncated DCK1 record")
        (nlen,) = struct.unpack("<H", raw)
        name = buf.read(nlen).decode()
        tensors[name] = _decode_dtf_stream(buf)
    if buf.read(1):
        raise FormatError("trailing bytes after DCK1 records")
    return header, tensors


def write_checkpoint(path, header: dict, tensors: dict) -> None:
    Path(path).write_bytes(encode_checkpoint(header, tensors))


def read_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def tensor_to_csv(array) -> str:
    a = np.asarray(array)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ShapeError("CSV export supports 1-D and 2-D tensors only")
    return "".join(",".join(_fmt(v) for v in row) + "\n" for row in a.tolist())


def write_table(path, header: list[str], rows, comment: str | None = None) -> None:
    lines = [f"# {comment}"] if comment else []
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")
