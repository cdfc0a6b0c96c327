"""Little-endian binary encode/decode helpers shared by the on-disk formats."""
from __future__ import annotations

import struct


class FileFormatError(Exception):
    """A file does not match its expected format (magic, version, layout)."""


class TruncatedFileError(FileFormatError):
    """A file ended before a complete structure could be read."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


_FNV64_OFFSET = 0xCBF29CE484222325
_FNV64_PRIME = 0x100000001B3
_FNV64_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit hash of a byte string."""
    h = _FNV64_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV64_PRIME) & _FNV64_MASK
    return h


class ByteReader:
    """Sequential reader over an in-memory buffer, tracking the byte offset
    so truncation errors can name where the file ran out."""

    def __init__(self, data: bytes, context: str = "file"):
        self.data = data
        self.offset = 0
        self.context = context

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            raise TruncatedFileError(
                f"{self.context}: truncated while reading {what}", self.offset
            )
        out = self.data[self.offset : self.offset + n]
        self.offset += n
        return out

    def u8(self, what: str = "byte") -> int:
        return self.take(1, what)[0]

    def u16(self, what: str = "u16") -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str = "u32") -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def string_u16(self, what: str = "string") -> str:
        n = self.u16(f"{what} length")
        return self.take(n, what).decode("utf-8")

    def expect_magic(self, magic: bytes):
        got = self.take(len(magic), "magic")
        if got != magic:
            raise FileFormatError(
                f"{self.context}: bad magic {got!r}, expected {magic!r}"
            )

    def expect_version(self, version: int):
        got = self.u8("version")
        if got != version:
            raise FileFormatError(
                f"{self.context}: unsupported version {got}, expected {version}"
            )

    def remainder(self) -> bytes:
        out = self.data[self.offset :]
        self.offset = len(self.data)
        return out

    def expect_end(self):
        if self.offset != len(self.data):
            raise FileFormatError(
                f"{self.context}: {len(self.data) - self.offset} trailing bytes "
                f"after offset {self.offset}"
            )


class ByteWriter:
    """Append-only builder mirroring :class:`ByteReader`."""

    def __init__(self):
        self.buf = bytearray()

    def raw(self, data: bytes):
        self.buf += data

    def u8(self, value: int):
        self.buf.append(value)

    def u16(self, value: int):
        self.buf += struct.pack("<H", value)

    def u32(self, value: int):
        self.buf += struct.pack("<I", value)

    def string_u16(self, value: str):
        enc = value.encode("utf-8")
        if len(enc) > 0xFFFF:
            raise ValueError(f"string too long to encode: {len(enc)} bytes")
        self.u16(len(enc))
        self.buf += enc

    def getvalue(self) -> bytes:
        return bytes(self.buf)
