"""Canonical byte layout primitives.

Every structure in the package serializes through these helpers so both
chains, the sync wire format and the test fixtures agree bit-for-bit.
All integers are big-endian; variable-length fields carry a 32-bit
length prefix.
"""

from __future__ import annotations

import struct

_U8 = struct.Struct(">B")
_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")


class EncodeError(ValueError):
    pass


class DecodeError(ValueError):
    pass


def _check_range(value: int, bits: int) -> int:
    if not isinstance(value, int):
        raise EncodeError(f"expected int, got {type(value).__name__}")
    if value < 0 or value >> bits:
        raise EncodeError(f"value {value} does not fit in {bits} bits")
    return value


class Writer:
    """Accumulates a canonical byte string."""

    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def u8(self, value: int) -> "Writer":
        self._parts.append(_U8.pack(_check_range(value, 8)))
        return self

    def u16(self, value: int) -> "Writer":
        self._parts.append(_U16.pack(_check_range(value, 16)))
        return self

    def u32(self, value: int) -> "Writer":
        self._parts.append(_U32.pack(_check_range(value, 32)))
        return self

    def u64(self, value: int) -> "Writer":
        self._parts.append(_U64.pack(_check_range(value, 64)))
        return self

    def raw(self, data: bytes) -> "Writer":
        self._parts.append(bytes(data))
        return self

    def blob(self, data: bytes) -> "Writer":
        self.u32(len(data))
        self._parts.append(bytes(data))
        return self

    def text(self, value: str) -> "Writer":
        return self.blob(value.encode("utf-8"))

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    """Reads back a canonical byte string, validating bounds."""

    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0

    def _take(self, n: int) -> bytes:
        if n < 0 or self._pos + n > len(self._data):
            raise DecodeError(
                f"buffer underrun at offset {self._pos} (want {n} bytes)"
            )
        out = self._data[self._pos : self._pos + n]
        self._pos += n
        return out

    def u8(self) -> int:
        return _U8.unpack(self._take(1))[0]

    def u16(self) -> int:
        return _U16.unpack(self._take(2))[0]

    def u32(self) -> int:
        return _U32.unpack(self._take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self._take(8))[0]

    def raw(self, n: int) -> bytes:
        return self._take(n)

    def blob(self) -> bytes:
        return self._take(self.u32())

    def text(self) -> str:
        try:
            return self.blob().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(f"invalid utf-8 text field: {exc}") from exc

    @property
    def remaining(self) -> int:
        return len(self._data) - self._pos

    def expect_end(self) -> None:
        if self.remaining:
            raise DecodeError(f"{self.remaining} trailing bytes after decode")
