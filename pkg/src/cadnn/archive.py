"""Binary weight archive.

Layout, little-endian throughout::

    magic    4 bytes  b"NNWA"
    version  u32      (1)
    layers   u32
    per layer:
        name_len u16, name (UTF-8), tensor_count u8
        per tensor: rank u8, dims u64 x rank, float32 values (row-major)
    crc32    u32      over every preceding byte

Only layers that own parameters are recorded, in model order.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from dataclasses import dataclass

import numpy as np

from .network import Sequential

MAGIC = b"NNWA"
VERSION = 1


class ArchiveError(ValueError):
    """Malformed, corrupted, or mismatched weight archive."""


class TruncatedArchive(ArchiveError):
    pass


@dataclass
class WeightArchive:
    version: int
    records: list[tuple[str, list[np.ndarray]]]


def encode(records) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<II", VERSION, len(records))
    for name, tensors in records:
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw + struct.pack("<B", len(tensors))
        for t in tensors:
            t = np.ascontiguousarray(t, dtype="<f4")
            out += struct.pack("<B", t.ndim) + struct.pack(f"<{t.ndim}Q", *t.shape)
            out += t.tobytes()
    out += struct.pack("<I", zlib.crc32(out))
    return bytes(out)


def save_weights(model: Sequential) -> bytes:
    return encode(model.state())


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedArchive(f"archive truncated at byte {self.pos} (needed {n} more)")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _parse(body: bytes) -> WeightArchive:
    r = _Reader(body)
    if r.take(4) != MAGIC:
        raise ArchiveError("not a weight archive (bad magic)")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise ArchiveError(f"unsupported archive version {version} (expected {VERSION})")
    records = []
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        try:
            name = r.take(name_len).decode("utf-8")
        except UnicodeDecodeError:
            raise ArchiveError("layer name is not valid UTF-8") from None
        (n_tensors,) = r.unpack("<B")
        tensors = []
        for _ in range(n_tensors):
            (rank,) = r.unpack("<B")
            dims = r.unpack(f"<{rank}Q")
            size = int(np.prod(dims, dtype=np.uint64)) if rank else 1
            values = np.frombuffer(r.take(4 * size), dtype="<f4")
            tensors.append(values.reshape(dims).astype(np.float32))
        records.append((name, tensors))
    if r.pos != len(body):
        raise ArchiveError(f"{len(body) - r.pos} unexpected trailing bytes")
    return WeightArchive(version, records)


def parse_archive(data: bytes) -> WeightArchive:
    if len(data) < 16:
        raise TruncatedArchive(f"archive truncated ({len(data)} bytes)")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        # Distinguish a short file from a corrupted one where possible.
        try:
            _parse(body)
        except TruncatedArchive:
            raise TruncatedArchive("checksum mismatch: stream ends early, archive truncated") from None
        except ArchiveError:
            pass
        raise ArchiveError("checksum mismatch: archive is corrupted")
    return _parse(body)


def load_weights(data: bytes, model: Sequential) -> Sequential:
    """Return a copy of ``model`` carrying the archive's weights.

    Everything is validated before any tensor is assigned, so a bad
    archive never yields a half-loaded model.
    """
    archive = parse_archive(data)
    expected = model.state()
    if len(archive.records) != len(expected):
        raise ArchiveError(f"archive has {len(archive.records)} layers, model has {len(expected)}")
    for (name, tensors), (want_name, want) in zip(archive.records, expected):
        if name != want_name:
            raise ArchiveError(f"layer name mismatch: archive {name!r}, model {want_name!r}")
        if len(tensors) != len(want):
            raise ArchiveError(f"layer {name!r}: {len(tensors)} tensors, expected {len(want)}")
        for t, w in zip(tensors, want):
            if t.shape != w.shape:
                raise ArchiveError(f"layer {name!r}: tensor shape {t.shape} != expected {w.shape}")
    loaded = model.copy()
    by_name = dict(archive.records)
    for leaf in loaded.leaves():
        if leaf.params:
            for key, value in zip(list(leaf.params), by_name[leaf.name]):
                leaf.params[key] = value.astype(leaf.params[key].dtype)
            leaf.zero_grads()
    return loaded


def atomic_write(path, data: bytes | str):
    """Write via a temp file in the same directory, then rename."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
