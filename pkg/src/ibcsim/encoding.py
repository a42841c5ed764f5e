"""Canonical binary encoding shared by everything that gets hashed or proven.

Byte strings are length-prefixed with a 4-byte big-endian length, integers are
8-byte big-endian. Dataclasses deriving from :class:`Encodable` get a generic
field-by-field encoding in declaration order.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import struct
import types
import typing
from functools import lru_cache

U64_MAX = 2**64 - 1


class DecodeError(ValueError):
    pass


def sha256(*parts: bytes) -> bytes:
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
    return h.digest()


def u8(n: int) -> bytes:
    if not 0 <= n <= 0xFF:
        raise ValueError(f"u8 out of range: {n}")
    return bytes((n,))


def u32(n: int) -> bytes:
    if not 0 <= n <= 0xFFFFFFFF:
        raise ValueError(f"u32 out of range: {n}")
    return struct.pack(">I", n)


def u64(n: int) -> bytes:
    if not 0 <= n <= U64_MAX:
        raise ValueError(f"u64 out of range: {n}")
    return struct.pack(">Q", n)


def lp(b: bytes) -> bytes:
    return u32(len(b)) + b


def lp_str(s: str) -> bytes:
    return lp(s.encode("utf-8"))


class Reader:
    """Strict cursor over an encoded buffer."""

    def __init__(self, data: bytes):
        self.data = bytes(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise DecodeError("truncated input")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def lp(self) -> bytes:
        return self.take(self.u32())

    def lp_str(self) -> str:
        try:
            return self.lp().decode("utf-8")
        except UnicodeDecodeError as e:
            raise DecodeError("invalid utf-8") from e

    def done(self) -> None:
        if self.pos != len(self.data):
            raise DecodeError(f"{len(self.data) - self.pos} trailing bytes")


# -- generic dataclass codec ---------------------------------------------------

@lru_cache(maxsize=None)
def _fields(cls) -> tuple[tuple[str, typing.Any], ...]:
    hints = typing.get_type_hints(cls)
    return tuple((f.name, hints[f.name]) for f in dataclasses.fields(cls))


def _optional_arg(tp):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1 and len(typing.get_args(tp)) == 2:
            return args[0]
    return None


def _bool_dec(r: "Reader") -> bool:
    b = r.u8()
    if b > 1:
        raise DecodeError("bad bool")
    return bool(b)


@lru_cache(maxsize=None)
def _encoder(tp) -> typing.Callable[[typing.Any], bytes]:
    inner = _optional_arg(tp)
    if inner is not None:
        enc = _encoder(inner)
        return lambda v: b"\x00" if v is None else b"\x01" + enc(v)
    if typing.get_origin(tp) is tuple:
        (item_tp, _ellipsis) = typing.get_args(tp)
        enc = _encoder(item_tp)
        return lambda v: u32(len(v)) + b"".join(map(enc, v))
    if isinstance(tp, type):
        if issubclass(tp, enum.IntEnum):
            return lambda v: u8(int(v))
        if tp is bool:
            return lambda v: b"\x01" if v else b"\x00"
        if tp is int:
            return u64
        if tp is bytes:
            return lp
        if tp is str:
            return lp_str
        if issubclass(tp, Encodable):
            return lambda v: v.encode()
    raise TypeError(f"no canonical encoding for {tp!r}")


@lru_cache(maxsize=None)
def _decoder(tp) -> typing.Callable[["Reader"], typing.Any]:
    inner = _optional_arg(tp)
    if inner is not None:
        dec = _decoder(inner)

        def optional(r):
            flag = r.u8()
            if flag == 0:
                return None
            if flag != 1:
                raise DecodeError("bad option flag")
            return dec(r)
        return optional
    if typing.get_origin(tp) is tuple:
        (item_tp, _ellipsis) = typing.get_args(tp)
        dec = _decoder(item_tp)

        def sequence(r):
            n = r.u32()
            if n > len(r.data):
                raise DecodeError("implausible sequence length")
            return tuple(dec(r) for _ in range(n))
        return sequence
    if isinstance(tp, type):
        if issubclass(tp, enum.IntEnum):
            def member(r):
                try:
                    return tp(r.u8())
                except ValueError as e:
                    raise DecodeError(str(e)) from e
            return member
        if tp is bool:
            return _bool_dec
        if tp is int:
            return Reader.u64
        if tp is bytes:
            return Reader.lp
        if tp is str:
            return Reader.lp_str
        if issubclass(tp, Encodable):
            return tp.read
    raise TypeError(f"no canonical decoding for {tp!r}")


def encode_value(tp, value) -> bytes:
    return _encoder(tp)(value)


def decode_value(tp, r: Reader):
    return _decoder(tp)(r)


@lru_cache(maxsize=None)
def _plan(cls):
    return tuple((name, _encoder(tp), _decoder(tp)) for name, tp in _fields(cls))


@lru_cache(maxsize=1 << 16)
def _decode_cached(cls, data: bytes):
    r = Reader(data)
    obj = cls.read(r)
    r.done()
    return obj


class Encodable:
    """Mixin for frozen dataclasses with a canonical byte encoding."""

    def encode(self) -> bytes:
        return b"".join(enc(getattr(self, name)) for name, enc, _dec in _plan(type(self)))

    @classmethod
    def read(cls, r: Reader):
        values = {name: dec(r) for name, _enc, dec in _plan(cls)}
        try:
            return cls(**values)
        except (TypeError, ValueError) as e:
            raise DecodeError(str(e)) from e

    @classmethod
    def decode(cls, data: bytes):
        # values are immutable, so identical bytes can share one decoded object
        return _decode_cached(cls, bytes(data))
