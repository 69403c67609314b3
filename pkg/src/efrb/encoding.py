"""Canonical byte encodings shared by every protocol message and digest.

The rules (documented in docs/encoding.md): unsigned integers are 8-byte
big-endian, scalars and group residues are 32-byte big-endian, variable
byte strings are length-prefixed with a u64, sequences are a u64 count
followed by the encoded items, and composite structures concatenate their
fields in declared order. Anything hashed or signed goes through these
helpers so that two nodes never disagree on a digest.
"""

from __future__ import annotations

from typing import Iterable

SCALAR_WIDTH = 32


class EncodingError(ValueError):
    """Malformed canonical encoding."""


def enc_u64(value: int) -> bytes:
    if value < 0 or value >= 1 << 64:
        raise EncodingError(f"u64 out of range: {value}")
    return value.to_bytes(8, "big")


def enc_scalar(value: int) -> bytes:
    """Fixed 32-byte big-endian; covers scalars mod q and group residues mod p."""
    if value < 0 or value >= 1 << 256:
        raise EncodingError(f"scalar out of range: {value}")
    return value.to_bytes(SCALAR_WIDTH, "big")


def enc_bytes(data: bytes) -> bytes:
    return enc_u64(len(data)) + data


def enc_str(text: str) -> bytes:
    return enc_bytes(text.encode("utf-8"))


def enc_seq(items: Iterable[bytes]) -> bytes:
    chunks = list(items)
    return enc_u64(len(chunks)) + b"".join(chunks)


class Reader:
    """Sequential decoder over one canonical byte string."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise EncodingError("truncated input")
        out = self._data[self._pos:self._pos + n]
        self._pos += n
        return out

    def u64(self) -> int:
        return int.from_bytes(self.take(8), "big")

    def scalar(self) -> int:
        return int.from_bytes(self.take(SCALAR_WIDTH), "big")

    def bytes_(self) -> bytes:
        return self.take(self.u64())

    def str_(self) -> str:
        try:
            return self.bytes_().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise EncodingError(f"invalid utf-8: {exc}") from exc

    def done(self) -> bool:
        return self._pos == len(self._data)

    def expect_done(self) -> None:
        if not self.done():
            raise EncodingError(f"{len(self._data) - self._pos} trailing bytes")
