from __future__ import annotations

import struct

import numpy as np
import pytest
from conftest import expected_decode_error
from hypothesis import given, settings
from hypothesis import strategies as st

from syncfed.transport import wire
from syncfed.transport.wire import (
    ClientUpdateMsg,
    GlobalModel,
    RoundDone,
    SyncRequest,
    SyncResponse,
    decode,
    encode,
    iter_frames,
)

i64 = st.integers(-(2**63), 2**63 - 1)
u32 = st.integers(0, 2**32 - 1)
params = st.lists(st.floats(allow_nan=False, width=64), max_size=40).map(lambda v: np.array(v, dtype=np.float64))

messages = st.one_of(
    st.builds(SyncRequest, i64),
    st.builds(SyncResponse, i64, i64, i64),
    st.builds(GlobalModel, u32, params),
    st.builds(ClientUpdateMsg, u32, st.integers(0, 2**16 - 1), i64, st.integers(0, 2**64 - 1), params),
    st.builds(RoundDone, u32),
)


class TestEncode:
    def test_round_done_bytes(self):
        frame = encode(RoundDone(0))
        assert frame == b"SFED" + bytes([1, 5]) + (4).to_bytes(4, "little") + b"\x00\x00\x00\x00"
        assert len(frame) == 14

    def test_params_encoding_of_one(self):
        frame = encode(ClientUpdateMsg(3, 2, 123, 50, np.array([1.0])))
        payload = frame[wire.HEADER_SIZE :]
        # round u32 | client_id u16 | T_n i64 | m_n u64 | count u32 | values
        assert payload[22:26] == (1).to_bytes(4, "little")
        assert payload[26:34] == bytes.fromhex("000000000000F03F")

    def test_field_layout(self):
        frame = encode(ClientUpdateMsg(7, 258, -5, 2**40, np.array([])))
        assert frame[:6] == b"SFED\x01\x04"
        length, body = frame[6:10], frame[10:]
        assert int.from_bytes(length, "little") == len(body) == 26
        assert struct.unpack("<IHqQI", body) == (7, 258, -5, 2**40, 0)

    def test_sync_response_layout(self):
        frame = encode(SyncResponse(1, -2, 3))
        assert frame[5] == wire.Variant.SYNC_RESPONSE
        assert struct.unpack("<qqq", frame[10:]) == (1, -2, 3)

    @pytest.mark.parametrize(
        "msg",
        [RoundDone(-1), RoundDone(2**32), SyncRequest(2**63), ClientUpdateMsg(0, 2**16, 0, 1, np.array([])),
         ClientUpdateMsg(0, 0, 0, -1, np.array([]))],
    )
    def test_out_of_range(self, msg):
        with pytest.raises(wire.EncodeError):
            encode(msg)

    @settings(max_examples=500, deadline=None)
    @given(messages)
    def test_round_trip(self, msg):
        assert decode(encode(msg)) == msg

    def test_nan_params_survive_bitwise(self):
        vals = np.array([np.nan, -0.0, np.inf])
        assert decode(encode(GlobalModel(1, vals))) == GlobalModel(1, vals)


class TestDecode:
    def test_bad_magic(self):
        with pytest.raises(wire.BadMagicError):
            decode(b"XFED" + encode(RoundDone(0))[4:])

    def test_bad_version(self):
        frame = bytearray(encode(RoundDone(0)))
        frame[4] = 2
        with pytest.raises(wire.UnsupportedVersionError):
            decode(bytes(frame))

    def test_unknown_variant(self):
        frame = bytearray(encode(RoundDone(0)))
        frame[5] = 9
        with pytest.raises(wire.UnknownVariantError):
            decode(bytes(frame))

    def test_declared_length_too_long(self):
        frame = encode(RoundDone(0))
        with pytest.raises(wire.TruncatedError):
            decode(frame[:-1])

    def test_trailing_bytes(self):
        with pytest.raises(wire.TrailingBytesError):
            decode(encode(RoundDone(0)) + b"\x00")

    def test_params_count_exceeds_payload(self):
        frame = bytearray(encode(GlobalModel(0, np.array([1.0]))))
        frame[14:18] = (5).to_bytes(4, "little")
        with pytest.raises(wire.TruncatedError):
            decode(bytes(frame))

    def test_unused_payload_bytes(self):
        body = struct.pack("<I", 0) + b"\x00"
        frame = b"SFED\x01\x05" + struct.pack("<I", len(body)) + body
        with pytest.raises(wire.TrailingBytesError):
            decode(frame)

    def test_short_prefix(self):
        with pytest.raises(wire.TruncatedError):
            decode(b"SF")
        with pytest.raises(wire.BadMagicError):
            decode(b"Q")
        with pytest.raises(wire.TruncatedError):
            decode(b"")

    def test_error_kinds_are_distinct(self):
        kinds = {wire.BadMagicError, wire.UnsupportedVersionError, wire.UnknownVariantError,
                 wire.TruncatedError, wire.TrailingBytesError}
        assert len(kinds) == 5
        assert all(issubclass(k, wire.WireError) for k in kinds)

    def test_transcript_split(self):
        msgs = [SyncRequest(1), SyncResponse(1, 2, 3), GlobalModel(0, np.arange(3.0)), RoundDone(0)]
        assert list(iter_frames(b"".join(encode(m) for m in msgs))) == msgs


def mutate(rng: np.random.Generator, frame: bytes) -> bytes:
    buf = bytearray(frame)
    op = rng.integers(6)
    if op == 0 and buf:
        buf[rng.integers(len(buf))] ^= 1 << int(rng.integers(8))
    elif op == 1:
        buf = buf[: rng.integers(len(buf) + 1)]
    elif op == 2:
        buf += rng.bytes(int(rng.integers(1, 16)))
    elif op == 3:
        buf[6:10] = int(rng.integers(0, 2**32)).to_bytes(4, "little")
    elif op == 4 and len(buf) > 10:
        buf[5] = int(rng.integers(256))
    elif op == 5 and len(buf) > 4:
        buf[4] = int(rng.integers(256))
    return bytes(buf)


def fuzz_inputs(n: int, seed: int) -> list[bytes]:
    rng = np.random.default_rng(seed)
    templates = [
        encode(SyncRequest(5)),
        encode(SyncResponse(1, 2, 3)),
        encode(GlobalModel(4, rng.normal(size=3))),
        encode(ClientUpdateMsg(1, 2, 3, 4, rng.normal(size=2))),
        encode(RoundDone(9)),
    ]
    out = []
    for i in range(n):
        if i % 4 == 0:
            out.append(rng.bytes(int(rng.integers(0, 64))))
        elif i % 4 == 1:
            out.append(b"SFED" + rng.bytes(int(rng.integers(0, 40))))
        else:
            out.append(mutate(rng, templates[i % len(templates)]))
    return out


def check_fuzz(inputs: list[bytes]) -> int:
    """Decode every input; return how many were classified as the oracle predicts."""
    agree = 0
    for buf in inputs:
        expected = expected_decode_error(buf)
        try:
            msg = decode(buf)
            got = None
            assert encode(msg) == buf
        except wire.WireError as e:
            got = type(e).__name__
        agree += got == expected
    return agree


def test_fuzz_classification():
    inputs = fuzz_inputs(3000, 0)
    assert check_fuzz(inputs) == len(inputs)


@settings(max_examples=500, deadline=None)
@given(st.binary(max_size=80))
def test_arbitrary_bytes(buf):
    expected = expected_decode_error(buf)
    try:
        decode(buf)
        assert expected is None
    except wire.WireError as e:
        assert type(e).__name__ == expected
