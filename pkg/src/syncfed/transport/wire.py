"""Binary framing for the client/server protocol.

Frame layout (all integers little-endian)::

    magic  b"SFED"   4 bytes
    version u8       always 1
    variant u8       see ``Variant``
    length  u32      payload byte count
    payload          variant-specific

Timestamps are i64 nanoseconds, rounds u32, client ids u16, dataset sizes u64.
Parameter vectors are a u32 element count followed by float64 values.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import ClassVar, Union

import numpy as np

MAGIC = b"SFED"
VERSION = 1
HEADER = struct.Struct("<4sBBI")
HEADER_SIZE = HEADER.size  # 10
MAX_PARAMS = 2**32 - 1


class Variant(enum.IntEnum):
    SYNC_REQUEST = 1
    SYNC_RESPONSE = 2
    GLOBAL_MODEL = 3
    CLIENT_UPDATE = 4
    ROUND_DONE = 5


class WireError(ValueError):
    """Base class for every decode/encode failure."""


class BadMagicError(WireError):
    pass


class UnsupportedVersionError(WireError):
    pass


class UnknownVariantError(WireError):
    pass


class TruncatedError(WireError):
    pass


class TrailingBytesError(WireError):
    pass


class EncodeError(WireError):
    pass


def _params_equal(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and a.tobytes() == b.tobytes()


@dataclass(frozen=True)
class SyncRequest:
    variant: ClassVar[Variant] = Variant.SYNC_REQUEST
    t1: int


@dataclass(frozen=True)
class SyncResponse:
    variant: ClassVar[Variant] = Variant.SYNC_RESPONSE
    t1: int
    t2: int
    t3: int


@dataclass(frozen=True, eq=False)
class GlobalModel:
    variant: ClassVar[Variant] = Variant.GLOBAL_MODEL
    round: int
    params: np.ndarray

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GlobalModel):
            return NotImplemented
        return self.round == other.round and _params_equal(self.params, other.params)


@dataclass(frozen=True, eq=False)
class ClientUpdateMsg:
    variant: ClassVar[Variant] = Variant.CLIENT_UPDATE
    round: int
    client_id: int
    t_n: int
    m_n: int
    params: np.ndarray

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ClientUpdateMsg):
            return NotImplemented
        return (
            (self.round, self.client_id, self.t_n, self.m_n)
            == (other.round, other.client_id, other.t_n, other.m_n)
            and _params_equal(self.params, other.params)
        )


@dataclass(frozen=True)
class RoundDone:
    variant: ClassVar[Variant] = Variant.ROUND_DONE
    round: int


Message = Union[SyncRequest, SyncResponse, GlobalModel, ClientUpdateMsg, RoundDone]


def _pack_params(params: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(params, dtype="<f8").ravel()
    if arr.size > MAX_PARAMS:
        raise EncodeError(f"params element count {arr.size} exceeds u32 range")
    return struct.pack("<I", arr.size) + arr.tobytes()


def _check_range(name: str, value: int, lo: int, hi: int) -> None:
    if not lo <= value <= hi:
        raise EncodeError(f"{name}={value} outside [{lo}, {hi}]")


def encode_payload(msg: Message) -> bytes:
    i64 = (-(2**63), 2**63 - 1)
    if isinstance(msg, SyncRequest):
        _check_range("t1", msg.t1, *i64)
        return struct.pack("<q", msg.t1)
    if isinstance(msg, SyncResponse):
        for name in ("t1", "t2", "t3"):
            _check_range(name, getattr(msg, name), *i64)
        return struct.pack("<qqq", msg.t1, msg.t2, msg.t3)
    if isinstance(msg, GlobalModel):
        _check_range("round", msg.round, 0, 2**32 - 1)
        return struct.pack("<I", msg.round) + _pack_params(msg.params)
    if isinstance(msg, ClientUpdateMsg):
        _check_range("round", msg.round, 0, 2**32 - 1)
        _check_range("client_id", msg.client_id, 0, 2**16 - 1)
        _check_range("t_n", msg.t_n, *i64)
        _check_range("m_n", msg.m_n, 0, 2**64 - 1)
        head = struct.pack("<IHqQ", msg.round, msg.client_id, msg.t_n, msg.m_n)
        return head + _pack_params(msg.params)
    if isinstance(msg, RoundDone):
        _check_range("round", msg.round, 0, 2**32 - 1)
        return struct.pack("<I", msg.round)
    raise EncodeError(f"not a protocol message: {type(msg).__name__}")


def encode(msg: Message) -> bytes:
    payload = encode_payload(msg)
    return HEADER.pack(MAGIC, VERSION, int(msg.variant), len(payload)) + payload


class _Reader:
    def __init__(self, buf: bytes) -> None:
        self.buf = buf
        self.pos = 0

    def take(self, fmt: str) -> tuple:
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise TruncatedError(f"payload ends before {fmt!r} field at offset {self.pos}")
        out = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return out

    def params(self) -> np.ndarray:
        (count,) = self.take("<I")
        nbytes = 8 * count
        if self.pos + nbytes > len(self.buf):
            raise TruncatedError(f"declared {count} params but only {len(self.buf) - self.pos} bytes remain")
        arr = np.frombuffer(self.buf, dtype="<f8", count=count, offset=self.pos).astype(np.float64)
        self.pos += nbytes
        return arr


def parse_header(buf: bytes) -> tuple[Variant | int, int]:
    """Validate a 10-byte header; return (variant, payload_length)."""
    if not MAGIC.startswith(bytes(buf[:4])):
        raise BadMagicError(f"bad magic {bytes(buf[:4])!r}")
    if len(buf) < HEADER_SIZE:
        raise TruncatedError(f"need {HEADER_SIZE} header bytes, got {len(buf)}")
    _, version, variant, length = HEADER.unpack_from(buf, 0)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    try:
        return Variant(variant), length
    except ValueError:
        raise UnknownVariantError(f"unknown variant {variant}") from None


def decode_payload(variant: Variant, payload: bytes) -> Message:
    r = _Reader(payload)
    msg: Message
    if variant is Variant.SYNC_REQUEST:
        msg = SyncRequest(*r.take("<q"))
    elif variant is Variant.SYNC_RESPONSE:
        msg = SyncResponse(*r.take("<qqq"))
    elif variant is Variant.GLOBAL_MODEL:
        (rnd,) = r.take("<I")
        msg = GlobalModel(rnd, r.params())
    elif variant is Variant.CLIENT_UPDATE:
        rnd, cid, t_n, m_n = r.take("<IHqQ")
        msg = ClientUpdateMsg(rnd, cid, t_n, m_n, r.params())
    else:
        msg = RoundDone(*r.take("<I"))
    if r.pos != len(payload):
        raise TrailingBytesError(f"{len(payload) - r.pos} unused bytes inside {variant.name} payload")
    return msg


def decode(buf: bytes) -> Message:
    """Decode exactly one frame; any surplus after the frame is an error."""
    buf = bytes(buf)
    variant, length = parse_header(buf)
    end = HEADER_SIZE + length
    if end > len(buf):
        raise TruncatedError(f"payload_length {length} exceeds {len(buf) - HEADER_SIZE} available bytes")
    if end < len(buf):
        raise TrailingBytesError(f"{len(buf) - end} bytes after frame end")
    return decode_payload(variant, buf[HEADER_SIZE:end])


def iter_frames(buf: bytes):
    """Split a concatenated transcript into decoded messages."""
    pos = 0
    while pos < len(buf):
        variant, length = parse_header(buf[pos : pos + HEADER_SIZE])
        end = pos + HEADER_SIZE + length
        if end > len(buf):
            raise TruncatedError(f"frame at offset {pos} runs past end of transcript")
        yield decode_payload(variant, buf[pos + HEADER_SIZE : end])
        pos = end
