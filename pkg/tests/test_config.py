from __future__ import annotations

import json
from importlib import resources

import pytest
from conftest import tiny_config
from hypothesis import given, settings
from hypothesis import strategies as st

from syncfed.config import (
    ConfigSyntaxError,
    ExperimentConfig,
    InvalidValueError,
    OutOfRangeError,
    UnknownKeyError,
    default_timeout,
    load_config,
    parse_config,
)

MINIMAL = {"rounds": 1, "clients": [{"name": "solo", "ping_ms": 20}], "gamma": 0.1, "seed": 7}


def load_testbed() -> ExperimentConfig:
    return parse_config(resources.files("syncfed.configs").joinpath("paper-testbed.json").read_bytes())


class TestParse:
    def test_minimal_gets_defaults(self):
        cfg = parse_config(json.dumps(MINIMAL))
        assert cfg.rounds == 1 and cfg.seed == 7 and cfg.gamma == 0.1
        assert cfg.latency_scale == 100.0
        assert cfg.strategy == "both"
        assert cfg.model.hidden == [32, 16]
        assert cfg.layer_sizes == [8, 32, 16, 6]
        c = cfg.clients[0]
        assert c.downlink_ms == c.uplink_ms == 10.0
        assert c.class_mix == pytest.approx([1 / 6] * 6)
        assert cfg.round_timeout_s == default_timeout(cfg) >= 5.0
        # every default is explicit in the echo
        echo = json.loads(cfg.to_json())
        assert echo["train"] == {"learning_rate": 0.1, "local_epochs": 1, "batch_size": None}
        assert echo["clients"][0]["lag"]["p_lag"] == 0.0

    def test_negative_gamma(self):
        with pytest.raises(OutOfRangeError) as info:
            parse_config(json.dumps({**MINIMAL, "gamma": -1}))
        assert info.value.field == "gamma"
        assert "gamma" in str(info.value)

    def test_testbed_one_way_delays(self):
        cfg = load_testbed()
        assert [c.name for c in cfg.clients] == ["paris", "barcelona", "tokyo"]
        unscaled = [c.downlink_ms / 1000 for c in cfg.clients]
        assert unscaled == pytest.approx([0.004425, 0.0116745, 0.1190085], abs=1e-15)
        assert [c.uplink_ms for c in cfg.clients] == [c.downlink_ms for c in cfg.clients]
        scaled = [cfg.one_way_delays(c) for c in cfg.clients]
        assert [d for d, _ in scaled] == pytest.approx([100 * u for u in unscaled], rel=1e-12)

    def test_testbed_experiment_settings(self):
        cfg = load_testbed()
        assert cfg.rounds == 20 and cfg.gamma == 0.1 and cfg.latency_scale == 100
        assert cfg.data.drift_rate > 0
        assert all(c.lag.p_lag == 0.3 and c.lag.max_lag_rounds == 3 for c in cfg.clients)
        assert cfg.clients[2].clock.drift_ppm == -21.667

    def test_syntax_error_position(self):
        with pytest.raises(ConfigSyntaxError) as info:
            parse_config('{\n  "rounds": 3,\n  "gamma": ,\n}')
        assert (info.value.line, info.value.column) == (3, 12)

    def test_unknown_key(self):
        with pytest.raises(UnknownKeyError) as info:
            parse_config(json.dumps({**MINIMAL, "gama": 0.2}))
        assert info.value.field == "gama"

    def test_unknown_nested_key(self):
        bad = {**MINIMAL, "clients": [{"name": "x", "ping_ms": 1, "lag": {"p": 0.1}}]}
        with pytest.raises(UnknownKeyError) as info:
            parse_config(json.dumps(bad))
        assert info.value.field == "clients.0.lag.p"

    @pytest.mark.parametrize(
        "patch, field",
        [
            ({"rounds": -1}, "rounds"),
            ({"latency_scale": -0.5}, "latency_scale"),
            ({"clients": []}, "clients"),
            ({"clients": [{"name": "x", "ping_ms": 1, "lag": {"p_lag": 1.0}}]}, "clients.0.lag.p_lag"),
            ({"train": {"learning_rate": 0}}, "train.learning_rate"),
        ],
    )
    def test_out_of_range_fields(self, patch, field):
        with pytest.raises(OutOfRangeError) as info:
            parse_config(json.dumps({**MINIMAL, **patch}))
        assert info.value.field == field

    @pytest.mark.parametrize(
        "text",
        [
            '{"rounds": "3", "clients": [{"name": "x", "ping_ms": 1}]}',
            '{"rounds": 3.5, "clients": [{"name": "x", "ping_ms": 1}]}',
            '{"strategy": "async", "clients": [{"name": "x", "ping_ms": 1}]}',
            '{"gamma": NaN, "clients": [{"name": "x", "ping_ms": 1}]}',
            '{"rounds": 1, "rounds": 2, "clients": [{"name": "x", "ping_ms": 1}]}',
            '{"clients": [{"name": "x", "ping_ms": 1}, {"name": "x", "ping_ms": 2}]}',
            '{"clients": [{"name": "x", "ping_ms": 1, "class_mix": [0.5, 0.5]}]}',
            "[1, 2]",
        ],
    )
    def test_invalid_values(self, text):
        with pytest.raises(InvalidValueError):
            parse_config(text)

    def test_missing_required(self):
        with pytest.raises(InvalidValueError) as info:
            parse_config('{"rounds": 1}')
        assert info.value.field == "clients"

    def test_non_utf8(self):
        with pytest.raises(ConfigSyntaxError):
            parse_config(b'{"rounds": \xff}')

    def test_explicit_asymmetric_link(self):
        cfg = parse_config(json.dumps({**MINIMAL, "clients": [{"name": "x", "ping_ms": 30, "uplink_ms": 25}]}))
        assert (cfg.clients[0].downlink_ms, cfg.clients[0].uplink_ms) == (15.0, 25.0)

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps(MINIMAL))
        assert load_config(path) == parse_config(json.dumps(MINIMAL))


configs = st.fixed_dictionaries(
    {"clients": st.lists(
        st.fixed_dictionaries(
            {"ping_ms": st.floats(0, 500, allow_nan=False)},
            optional={
                "jitter_ms": st.floats(0, 5, allow_nan=False),
                "samples": st.integers(1, 500),
                "lag": st.fixed_dictionaries({}, optional={"p_lag": st.floats(0, 0.99), "max_lag_rounds": st.integers(1, 5)}),
                "clock": st.fixed_dictionaries({}, optional={"offset_s": st.floats(-5, 5), "drift_ppm": st.floats(-100, 100)}),
            },
        ),
        min_size=1,
        max_size=4,
    )},
    optional={
        "rounds": st.integers(0, 100),
        "seed": st.integers(0, 2**31),
        "gamma": st.floats(0, 10, allow_nan=False),
        "latency_scale": st.floats(0, 1000, allow_nan=False),
        "strategy": st.sampled_from(["syncfed", "fedavg", "both"]),
        "train": st.fixed_dictionaries({}, optional={"learning_rate": st.floats(1e-4, 1), "batch_size": st.integers(1, 64)}),
        "round_timeout_s": st.floats(0.1, 100),
    },
)


@settings(max_examples=150, deadline=None)
@given(configs)
def test_echo_round_trip(raw):
    for i, c in enumerate(raw["clients"]):
        c["name"] = f"c{i}"
    first = parse_config(json.dumps(raw))
    second = parse_config(first.to_json())
    assert second == first
    assert parse_config(second.to_json()) == first


def test_tiny_fixture_is_valid():
    assert parse_config(json.dumps(tiny_config())).rounds == 3
