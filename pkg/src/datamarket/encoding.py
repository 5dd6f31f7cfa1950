"""Canonical binary encoding primitives.

Wire format used everywhere bytes are hashed or signed: a one-byte message
type tag followed by each field in declared order as a 4-byte big-endian
length prefix plus the field bytes. Integers are 8-byte big-endian inside
their field; sets are sorted lexicographically before encoding.
"""

from __future__ import annotations

import struct

from .errors import EncodingError

_LEN = struct.Struct(">I")
_U64 = struct.Struct(">Q")


def encode_uint(value: int) -> bytes:
    if value < 0 or value > 0xFFFFFFFFFFFFFFFF:
        raise EncodingError(f"integer out of range: {value}")
    return _U64.pack(value)


def decode_uint(data: bytes) -> int:
    if len(data) != 8:
        raise EncodingError(f"expected 8-byte integer, got {len(data)} bytes")
    return _U64.unpack(data)[0]


def write_field(out: bytearray, data: bytes) -> None:
    out += _LEN.pack(len(data))
    out += data


def write_uint_field(out: bytearray, value: int) -> None:
    write_field(out, encode_uint(value))


class Reader:
    """Sequential reader over a canonical byte stream."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def read_byte(self) -> int:
        if self._pos >= len(self._data):
            raise EncodingError("truncated stream: expected tag byte")
        b = self._data[self._pos]
        self._pos += 1
        return b

    def read_field(self) -> bytes:
        if self._pos + 4 > len(self._data):
            raise EncodingError("truncated stream: expected length prefix")
        (n,) = _LEN.unpack_from(self._data, self._pos)
        self._pos += 4
        if self._pos + n > len(self._data):
            raise EncodingError("truncated stream: field shorter than prefix")
        out = self._data[self._pos : self._pos + n]
        self._pos += n
        return out

    def read_uint_field(self) -> int:
        return decode_uint(self.read_field())

    def remaining(self) -> int:
        return len(self._data) - self._pos

    def expect_end(self) -> None:
        if self._pos != len(self._data):
            raise EncodingError(f"{self.remaining()} trailing bytes after message")
