"""Primitive canonical byte encoding.

All multi-byte integers are big-endian and fixed width; variable-length
fields carry a 4-byte length prefix. Higher-level message formats are built
from these primitives so that encoding is deterministic and injective.
"""

from __future__ import annotations

from .errors import MalformedError

U32_MAX = 2**32 - 1
U64_MAX = 2**64 - 1


class Writer:
    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def u8(self, value: int) -> None:
        if not 0 <= value <= 0xFF:
            raise ValueError(f"u8 out of range: {value}")
        self._parts.append(value.to_bytes(1, "big"))

    def u32(self, value: int) -> None:
        if not 0 <= value <= U32_MAX:
            raise ValueError(f"u32 out of range: {value}")
        self._parts.append(value.to_bytes(4, "big"))

    def u64(self, value: int) -> None:
        if not 0 <= value <= U64_MAX:
            raise ValueError(f"u64 out of range: {value}")
        self._parts.append(value.to_bytes(8, "big"))

    def fixed(self, data: bytes, width: int) -> None:
        if len(data) != width:
            raise ValueError(f"expected {width} bytes, got {len(data)}")
        self._parts.append(data)

    def var_bytes(self, data: bytes) -> None:
        self.u32(len(data))
        self._parts.append(data)

    def raw(self, data: bytes) -> None:
        """Append a self-delimiting sub-encoding verbatim."""
        self._parts.append(data)

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise MalformedError("MALFORMED", "truncated input")
        out = self._data[self._pos : self._pos + n]
        self._pos += n
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u32(self) -> int:
        return int.from_bytes(self._take(4), "big")

    def u64(self) -> int:
        return int.from_bytes(self._take(8), "big")

    def fixed(self, width: int) -> bytes:
        return self._take(width)

    def var_bytes(self) -> bytes:
        return self._take(self.u32())

    @property
    def exhausted(self) -> bool:
        return self._pos == len(self._data)

    def expect_end(self) -> None:
        if not self.exhausted:
            raise MalformedError("MALFORMED", "trailing bytes")
