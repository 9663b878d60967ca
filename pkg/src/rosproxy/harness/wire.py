"""Topic/service transport framing: key=value connection headers and
payload frames, every piece 4-byte little-endian length-prefixed.

The header lists fields like callerid/topic/type/md5sum; the payloads
that follow are opaque bytes. Nothing in here routes — which is exactly
why the proxy can carry this traffic without looking inside.
"""

from __future__ import annotations

import struct
from typing import Dict, Iterable, Tuple, Union

MAX_HEADER_BYTES = 1024 * 1024
MAX_FRAME_BYTES = 64 * 1024 * 1024

HeaderFields = Union[Dict[str, str], Iterable[Tuple[str, str]]]


class WireError(Exception):
    """Malformed header or frame on a topic/service connection."""


def encode_header(fields: HeaderFields) -> bytes:
    items = fields.items() if isinstance(fields, dict) else fields
    parts = []
    for key, value in items:
        blob = ("%s=%s" % (key, value)).encode("utf-8")
        parts.append(struct.pack("<I", len(blob)) + blob)
    body = b"".join(parts)
    return struct.pack("<I", len(body)) + body


def decode_header(body: bytes) -> Dict[str, str]:
    fields: Dict[str, str] = {}
    offset = 0
    while offset < len(body):
        if offset + 4 > len(body):
            raise WireError("truncated field length")
        (length,) = struct.unpack_from("<I", body, offset)
        offset += 4
        if offset + length > len(body):
            raise WireError("field overruns header")
        blob = body[offset:offset + length]
        offset += length
        key, sep, value = blob.partition(b"=")
        if not sep:
            raise WireError("field without '=': %r" % blob[:40])
        fields[key.decode("utf-8")] = value.decode("utf-8")
    return fields


async def read_header(reader) -> Dict[str, str]:
    (total,) = struct.unpack("<I", await reader.readexactly(4))
    if total > MAX_HEADER_BYTES:
        raise WireError("header of %d bytes exceeds limit" % total)
    return decode_header(await reader.readexactly(total))


def write_header(writer, fields: HeaderFields) -> None:
    writer.write(encode_header(fields))


def encode_frame(payload: bytes) -> bytes:
    return struct.pack("<I", len(payload)) + payload


async def read_frame(reader) -> bytes:
    (length,) = struct.unpack("<I", await reader.readexactly(4))
    if length > MAX_FRAME_BYTES:
        raise WireError("frame of %d bytes exceeds limit" % length)
    return await reader.readexactly(length)


def write_frame(writer, payload: bytes) -> None:
    writer.write(encode_frame(payload))
