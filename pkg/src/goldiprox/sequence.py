"""Binary format for recorded selection sequences.

Layout (all little-endian)::

    offset size field
         0    4 magic b"GPSQ"
         4    4 format version (u32, currently 1)
         8    8 dataset fingerprint (u64)
        16    4 batch size |b| (u32)
        20    4 number of batches (u32)
        24    1 acquisition kind tag (u8)
        25    8 seed (u64)
        33  4·n example ids, n = |b| · batches (u32 each)
    33+4n   4 CRC-32 of every preceding byte (u32)

Example: one batch of ids ``[7, 1]`` with |b|=2, fingerprint 0x1122334455667788,
kind ``reducible`` (tag 3), seed 5::

    47505351 01000000 8877665544332211 02000000 01000000 03
    0500000000000000 07000000 01000000 <crc32>
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._io import atomic_write_bytes
from .acquisition import KIND_TAGS, AcquisitionKind

MAGIC = b"GPSQ"
VERSION = 1
_HEADER = struct.Struct("<4sIQIIBQ")
HEADER_SIZE = _HEADER.size  # 33
TRAILER_SIZE = 4
_TAG_KINDS = {v: k for k, v in KIND_TAGS.items()}


class SequenceFormatError(ValueError):
    pass


class BadMagicError(SequenceFormatError):
    pass


class UnsupportedVersionError(SequenceFormatError):
    pass


class LengthMismatchError(SequenceFormatError):
    pass


class ChecksumError(SequenceFormatError):
    pass


class UnknownKindError(SequenceFormatError):
    pass


@dataclass(frozen=True)
class SequenceHeader:
    dataset_fingerprint: int
    batch_size: int
    num_batches: int
    kind: AcquisitionKind
    seed: int
    format_version: int = VERSION


@dataclass
class SequenceFile:
    header: SequenceHeader
    batches: np.ndarray  # (num_batches, batch_size) uint32

    def __eq__(self, other):
        return (
            isinstance(other, SequenceFile)
            and self.header == other.header
            and np.array_equal(self.batches, other.batches)
        )


def _as_batches(batches, batch_size) -> np.ndarray:
    rows = [np.asarray(b) for b in batches] if not isinstance(batches, np.ndarray) else list(batches)
    for r in rows:
        if r.shape != (batch_size,):
            raise LengthMismatchError(f"ragged batch of length {r.size}; expected {batch_size}")
        if r.size and (r.min() < 0 or r.max() >= 2**32):
            raise ValueError("example ids must fit in an unsigned 32-bit integer")
    if not rows:
        return np.zeros((0, batch_size), dtype=np.uint32)
    return np.stack(rows).astype(np.uint32)


def encode(header: SequenceHeader, batches) -> bytes:
    arr = _as_batches(batches, header.batch_size)
    if arr.shape[0] != header.num_batches:
        raise LengthMismatchError(f"header says {header.num_batches} batches, got {arr.shape[0]}")
    kind = AcquisitionKind(header.kind)
    head = _HEADER.pack(
        MAGIC, header.format_version, header.dataset_fingerprint, header.batch_size, arr.shape[0],
        KIND_TAGS[kind], header.seed,
    )
    body = head + arr.astype("<u4").tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def decode(raw: bytes) -> SequenceFile:
    if len(raw) < HEADER_SIZE + TRAILER_SIZE:
        if raw[:4] != MAGIC[: len(raw[:4])]:
            raise BadMagicError("not a sequence file")
        raise LengthMismatchError(f"file has {len(raw)} bytes, shorter than the fixed header")
    magic, version, fp, b, nb, tag, seed = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"format version {version} is not supported")
    expected = HEADER_SIZE + 4 * b * nb + TRAILER_SIZE
    if len(raw) != expected:
        raise LengthMismatchError(f"file has {len(raw)} bytes; header implies {expected}")
    (crc,) = struct.unpack_from("<I", raw, len(raw) - TRAILER_SIZE)
    if crc != zlib.crc32(raw[:-TRAILER_SIZE]):
        raise ChecksumError("checksum mismatch")
    if tag not in _TAG_KINDS:
        raise UnknownKindError(f"unknown acquisition kind tag {tag}")
    ids = np.frombuffer(raw, dtype="<u4", count=b * nb, offset=HEADER_SIZE).astype(np.uint32)
    header = SequenceHeader(fp, b, nb, _TAG_KINDS[tag], seed, version)
    return SequenceFile(header, ids.reshape(nb, b))


def write(path, header: SequenceHeader, batches) -> None:
    """Atomically write a sequence file (temp file in the same directory + rename)."""
    atomic_write_bytes(path, encode(header, batches))


def read(path) -> SequenceFile:
    return decode(Path(path).read_bytes())
