"""
Little-endian container primitives shared by the dataset and checkpoint formats.
"""

import struct
from typing import Tuple

import numpy as np

from src.core.exceptions import FormatError


class ByteReader:
    """Sequential reader over an in-memory buffer; every failure names its offset."""

    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    @property
    def remaining(self) -> int:
        return len(self.data) - self.offset

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.remaining < n:
            raise FormatError(f"truncated {what}: need {n} bytes, {self.remaining} left", self.offset)
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str, what: str) -> Tuple:
        size = struct.calcsize("<" + fmt)
        return struct.unpack("<" + fmt, self.take(size, what))

    def u8(self, what: str) -> int:
        return self.unpack("B", what)[0]

    def u16(self, what: str) -> int:
        return self.unpack("H", what)[0]

    def u32(self, what: str) -> int:
        return self.unpack("I", what)[0]

    def f64(self, what: str) -> float:
        return self.unpack("d", what)[0]

    def array(self, dtype: str, count: int, what: str) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        raw = self.take(count * dt.itemsize, what)
        return np.frombuffer(raw, dtype=dt).astype(dt.newbyteorder("="))

    def expect_end(self) -> None:
        if self.remaining:
            raise FormatError(f"{self.remaining} unexpected trailing bytes", self.offset)


class ByteWriter:
    def __init__(self):
        self.parts = []

    def raw(self, data: bytes) -> None:
        self.parts.append(data)

    def pack(self, fmt: str, *values) -> None:
        self.parts.append(struct.pack("<" + fmt, *values))

    def array(self, values: np.ndarray, dtype: str) -> None:
        self.parts.append(np.ascontiguousarray(values, dtype=np.dtype(dtype).newbyteorder("<")).tobytes())

    def getvalue(self) -> bytes:
        return b"".join(self.parts)
