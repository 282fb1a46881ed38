"""Experiment configuration: strict JSON in, fully explicit model out."""

from __future__ import annotations

import json
import math
import statistics
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator


class ConfigError(ValueError):
    """Base for configuration problems (CLI exit code 1)."""


class ConfigSyntaxError(ConfigError):
    def __init__(self, msg: str, line: int, column: int) -> None:
        super().__init__(f"JSON syntax error at line {line}, column {column}: {msg}")
        self.line = line
        self.column = column


class UnknownKeyError(ConfigError):
    def __init__(self, field: str) -> None:
        super().__init__(f"unknown key {field!r}")
        self.field = field


class OutOfRangeError(ConfigError):
    def __init__(self, field: str, detail: str) -> None:
        super().__init__(f"{field}: out of range ({detail})")
        self.field = field


class InvalidValueError(ConfigError):
    def __init__(self, field: str, detail: str) -> None:
        super().__init__(f"{field}: {detail}")
        self.field = field


_RANGE_ERRORS = {"greater_than", "greater_than_equal", "less_than", "less_than_equal", "too_short", "too_long"}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True)


class ClockConfig(_Strict):
    offset_s: float = 0.0
    drift_ppm: float = Field(0.0, gt=-1e6)
    jitter_s: float = Field(0.0, ge=0)


class LagConfig(_Strict):
    p_lag: float = Field(0.0, ge=0, lt=1)
    max_lag_rounds: int = Field(1, ge=1)
    compute_s: float = Field(1.0, ge=0)
    compute_jitter_s: float = Field(0.0, ge=0)


class ClientConfig(_Strict):
    name: str = Field(min_length=1)
    ping_ms: float = Field(ge=0)
    # one-way delays before latency_scale; default ping/2 each way
    downlink_ms: Optional[float] = Field(None, ge=0)
    uplink_ms: Optional[float] = Field(None, ge=0)
    jitter_ms: float = Field(0.0, ge=0)
    drop_probability: float = Field(0.0, ge=0, lt=1)
    samples: int = Field(200, ge=1)
    class_mix: Optional[list[float]] = None
    lag: LagConfig = Field(default_factory=LagConfig)
    clock: ClockConfig = Field(default_factory=ClockConfig)

    @model_validator(mode="after")
    def _fill(self) -> "ClientConfig":
        if self.downlink_ms is None:
            self.downlink_ms = self.ping_ms / 2
        if self.uplink_ms is None:
            self.uplink_ms = self.ping_ms / 2
        return self


class ModelConfig(_Strict):
    hidden: list[int] = Field(default_factory=lambda: [32, 16])


class TrainSettings(_Strict):
    learning_rate: float = Field(0.1, gt=0)
    local_epochs: int = Field(1, ge=1)
    batch_size: Optional[int] = Field(None, ge=1)  # null = full local dataset


class DataConfig(_Strict):
    n_classes: int = Field(6, ge=2)
    d_in: int = Field(8, ge=1)
    separation: float = Field(3.0, ge=0)
    noise_scale: float = Field(1.0, ge=0)
    drift_rate: float = Field(0.0, ge=0)
    validation_samples: int = Field(600, ge=1)


class SyncConfig(_Strict):
    samples: int = Field(8, ge=1)
    poll_gap_s: float = Field(0.0, ge=0)
    report_rounds: int = Field(16, ge=1)
    report_interval_s: float = Field(2.0, gt=0)


class ExperimentConfig(_Strict):
    rounds: int = Field(20, ge=0, le=2**32 - 1)
    seed: int = Field(0, ge=0)
    gamma: float = Field(0.1, ge=0)
    latency_scale: float = Field(100.0, ge=0)
    strategy: Literal["syncfed", "fedavg", "both"] = "both"
    clients: list[ClientConfig] = Field(min_length=1, max_length=2**16)
    server_clock: ClockConfig = Field(default_factory=ClockConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainSettings = Field(default_factory=TrainSettings)
    data: DataConfig = Field(default_factory=DataConfig)
    sync: SyncConfig = Field(default_factory=SyncConfig)
    round_timeout_s: Optional[float] = Field(None, gt=0)
    accuracy_threshold: float = Field(0.5, ge=0, le=1)
    output_dir: str = "results"

    @model_validator(mode="after")
    def _resolve(self) -> "ExperimentConfig":
        names = [c.name for c in self.clients]
        if len(set(names)) != len(names):
            raise ValueError("client names must be unique")
        for c in self.clients:
            if c.class_mix is None:
                c.class_mix = [1.0 / self.data.n_classes] * self.data.n_classes
            elif len(c.class_mix) != self.data.n_classes:
                raise ValueError(f"client {c.name!r}: class_mix needs {self.data.n_classes} entries")
            elif min(c.class_mix) < 0 or abs(math.fsum(c.class_mix) - 1.0) > 1e-9:
                raise ValueError(f"client {c.name!r}: class_mix must be non-negative and sum to 1")
        if any(h < 1 for h in self.model.hidden):
            raise ValueError("model.hidden sizes must be >= 1")
        if self.round_timeout_s is None:
            self.round_timeout_s = default_timeout(self)
        return self

    @property
    def layer_sizes(self) -> list[int]:
        return [self.data.d_in, *self.model.hidden, self.data.n_classes]

    def one_way_delays(self, client: ClientConfig) -> tuple[float, float]:
        """(downlink, uplink) one-way delays in seconds after scaling."""
        k = self.latency_scale / 1000.0
        return client.downlink_ms * k, client.uplink_ms * k

    def to_json(self) -> str:
        return self.model_dump_json(indent=2) + "\n"


def default_timeout(cfg: ExperimentConfig) -> float:
    """Ten times the median expected round trip, never below 5 s."""
    trips = []
    for c in cfg.clients:
        down, up = cfg.one_way_delays(c)
        trips.append(down + up + c.lag.compute_s + c.lag.compute_jitter_s)
    return max(10.0 * statistics.median(trips), 5.0)


def _no_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise InvalidValueError(k, "duplicate key")
        out[k] = v
    return out


def _reject_constant(name: str):
    raise InvalidValueError(name, "non-finite numbers are not allowed")


def _field_path(loc) -> str:
    return ".".join(str(p) for p in loc) or "<root>"


def parse_config(text: str | bytes) -> ExperimentConfig:
    """Parse JSON config text, raising a :class:`ConfigError` subclass on any problem."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ConfigSyntaxError(f"not UTF-8 ({e.reason})", 1, e.start + 1) from None
    try:
        data = json.loads(text, object_pairs_hook=_no_duplicates, parse_constant=_reject_constant)
    except json.JSONDecodeError as e:
        raise ConfigSyntaxError(e.msg, e.lineno, e.colno) from None
    if not isinstance(data, dict):
        raise InvalidValueError("<root>", "config must be a JSON object")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        errors = e.errors()
        # report an unknown key ahead of anything it may have caused downstream
        err = next((x for x in errors if x["type"] == "extra_forbidden"), errors[0])
        path = _field_path(err["loc"])
        if err["type"] == "extra_forbidden":
            raise UnknownKeyError(path) from None
        if err["type"] in _RANGE_ERRORS:
            raise OutOfRangeError(path, err["msg"]) from None
        raise InvalidValueError(path, err["msg"]) from None


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        return parse_config(fh.read())
