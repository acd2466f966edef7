"""Byte-level encoding helpers shared by the pipeline stages.

Composite payloads use u32 length prefixes so arbitrary id bytes round-trip.
Numbers are encoded as ASCII text: integers stay integers end to end, which
keeps every summation exact regardless of aggregation order.
"""

from __future__ import annotations

import struct

_LEN = struct.Struct("<I")
_U64 = struct.Struct(">Q")


def pack_fields(*parts: bytes) -> bytes:
    out = bytearray()
    for part in parts:
        out += _LEN.pack(len(part))
        out += part
    return bytes(out)


def unpack_fields(buf: bytes) -> list[bytes]:
    parts = []
    off = 0
    end = len(buf)
    while off < end:
        if off + 4 > end:
            raise ValueError("truncated field header")
        (n,) = _LEN.unpack_from(buf, off)
        off += 4
        if off + n > end:
            raise ValueError("truncated field body")
        parts.append(buf[off:off + n])
        off += n
    return parts


def pack_u64(value: int) -> bytes:
    return _U64.pack(value & 0xFFFFFFFFFFFFFFFF)


def encode_number(x: int | float) -> bytes:
    if isinstance(x, bool):
        raise TypeError("bool is not a wire number")
    if isinstance(x, int):
        return b"%d" % x
    return repr(x).encode("ascii")


def decode_number(buf: bytes) -> int | float:
    text = buf.decode("ascii")
    try:
        return int(text)
    except ValueError:
        return float(text)


def encode_numbers(xs) -> bytes:
    return pack_fields(*(encode_number(x) for x in xs))


def decode_numbers(buf: bytes) -> tuple:
    return tuple(decode_number(p) for p in unpack_fields(buf))


def sum_number_vectors(key: bytes, values: list[bytes]) -> list[bytes]:
    """Combiner for stages whose values are equal-length number vectors."""
    totals: list | None = None
    for v in values:
        nums = decode_numbers(v)
        if totals is None:
            totals = list(nums)
        else:
            for i, x in enumerate(nums):
                totals[i] += x
    if totals is None:
        return []
    return [encode_numbers(totals)]
