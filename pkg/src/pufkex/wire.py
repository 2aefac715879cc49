"""Byte-level framing shared by certificates, protocol messages and the registry.

TLV record: tag (1 byte) | length (4 bytes, big-endian) | value.
Frame:      length (4 bytes, big-endian, counts everything after it) | body.
"""

from __future__ import annotations

import struct
from typing import BinaryIO, Iterable, Mapping

_LEN = struct.Struct(">I")
MAX_FRAME = 1 << 24


class MalformedTlv(ValueError):
    pass


class MalformedFrame(ValueError):
    pass


def encode_tlv(records: Mapping[int, bytes] | Iterable[tuple[int, bytes]]) -> bytes:
    items = sorted(records.items() if isinstance(records, Mapping) else records)
    out = bytearray()
    last = -1
    for tag, value in items:
        if tag == last:
            raise ValueError(f"duplicate tag {tag:#x}")
        last = tag
        out.append(tag)
        out += _LEN.pack(len(value))
        out += value
    return bytes(out)


def decode_tlv(data: bytes, allowed: Iterable[int]) -> dict[int, bytes]:
    """Parse canonical TLV: strictly ascending known tags, no trailing bytes."""
    allowed = set(allowed)
    records: dict[int, bytes] = {}
    pos = 0
    last = -1
    while pos < len(data):
        if pos + 5 > len(data):
            raise MalformedTlv("truncated record header")
        tag = data[pos]
        (length,) = _LEN.unpack_from(data, pos + 1)
        pos += 5
        if tag not in allowed:
            raise MalformedTlv(f"unknown tag {tag:#x}")
        if tag == last:
            raise MalformedTlv(f"duplicate tag {tag:#x}")
        if tag < last:
            raise MalformedTlv(f"tag {tag:#x} out of canonical order")
        if pos + length > len(data):
            raise MalformedTlv("truncated record value")
        records[tag] = bytes(data[pos : pos + length])
        pos += length
        last = tag
    return records


def frame(body: bytes) -> bytes:
    return _LEN.pack(len(body)) + body


def unframe(data: bytes) -> bytes:
    if len(data) < 4:
        raise MalformedFrame("frame shorter than its length prefix")
    (length,) = _LEN.unpack_from(data)
    if length != len(data) - 4:
        raise MalformedFrame(f"length prefix {length} does not match body of {len(data) - 4} bytes")
    return data[4:]


def split_frames(data: bytes) -> tuple[list[bytes], bytes]:
    """Split a byte stream into complete frame bodies plus the unparsed tail."""
    bodies = []
    pos = 0
    while pos + 4 <= len(data):
        (length,) = _LEN.unpack_from(data, pos)
        if pos + 4 + length > len(data):
            break
        bodies.append(data[pos + 4 : pos + 4 + length])
        pos += 4 + length
    return bodies, data[pos:]


def read_frame(stream: BinaryIO) -> bytes | None:
    """Read one frame body from a socket file; None on clean EOF."""
    header = stream.read(4)
    if not header:
        return None
    if len(header) < 4:
        raise MalformedFrame("connection closed inside length prefix")
    (length,) = _LEN.unpack(header)
    if length > MAX_FRAME:
        raise MalformedFrame(f"frame of {length} bytes exceeds limit")
    body = stream.read(length)
    if len(body) < length:
        raise MalformedFrame("connection closed inside frame body")
    return body
