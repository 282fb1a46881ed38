from __future__ import annotations

import json

import numpy as np
import pytest

from syncfed.aggregation import ClientUpdate
from syncfed.config import parse_config
from syncfed.learner import ModelParams


def vec_params(values) -> ModelParams:
    """Wrap an arbitrary vector; a length-L vector fits layer sizes (L-1, 1)."""
    v = np.asarray(values, dtype=np.float64)
    return ModelParams((len(v) - 1, 1), v)


def make_update(client_id, values, generated_at=0.0, m_n=1, round_=0) -> ClientUpdate:
    return ClientUpdate(client_id, round_, vec_params(values), generated_at, m_n)


def tiny_config(**overrides) -> dict:
    """A small, fast experiment as a JSON-able dict."""
    cfg = {
        "rounds": 3,
        "seed": 7,
        "gamma": 0.1,
        "latency_scale": 100,
        "clients": [
            {"name": "a", "ping_ms": 10.0, "samples": 60, "lag": {"p_lag": 0.3, "max_lag_rounds": 2, "compute_s": 1.0}},
            {"name": "b", "ping_ms": 200.0, "samples": 80, "lag": {"p_lag": 0.3, "max_lag_rounds": 2, "compute_s": 1.0}},
        ],
        "model": {"hidden": [8]},
        "data": {"n_classes": 3, "d_in": 4, "drift_rate": 0.1, "validation_samples": 90},
        "sync": {"samples": 4},
    }
    cfg.update(overrides)
    return cfg


@pytest.fixture
def tiny_cfg():
    return parse_config(json.dumps(tiny_config()))


# fixed payload sizes and the byte offset of the params count, per variant tag
_FIXED = {1: 8, 2: 24, 5: 4}
_PARAMS_AT = {3: 4, 4: 22}


def expected_decode_error(buf: bytes) -> str | None:
    """Reference classification of a frame, written independently of the codec.

    Returns the name of the error class decode should raise, or None if the
    frame is well formed.
    """
    if not b"SFED".startswith(buf[:4]):
        return "BadMagicError"
    if len(buf) < 10:
        return "TruncatedError"
    if buf[4] != 1:
        return "UnsupportedVersionError"
    tag = buf[5]
    if tag not in (1, 2, 3, 4, 5):
        return "UnknownVariantError"
    declared = int.from_bytes(buf[6:10], "little")
    if declared > len(buf) - 10:
        return "TruncatedError"
    if declared < len(buf) - 10:
        return "TrailingBytesError"
    payload = buf[10:]
    if tag in _FIXED:
        need = _FIXED[tag]
    else:
        at = _PARAMS_AT[tag]
        if len(payload) < at + 4:
            return "TruncatedError"
        need = at + 4 + 8 * int.from_bytes(payload[at : at + 4], "little")
    if len(payload) < need:
        return "TruncatedError"
    if len(payload) > need:
        return "TrailingBytesError"
    return None
