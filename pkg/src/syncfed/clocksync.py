"""Simulated node clocks and an NTP-style offset estimator.

Clocks are modelled as ``reading = true + offset + elapsed * drift + noise``.
Everything is held in integer nanoseconds; public helpers that take or return
seconds convert at the edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from syncfed.transport.simnet import NS_PER_S, LatencyModel, to_ns, to_seconds


@dataclass
class ClockState:
    """A node's physical clock.

    ``base_offset_ns`` is the reading minus true time at ``epoch_ns``;
    ``drift_ppm`` > 0 means the clock runs fast. The jitter generator lives on
    the instance, so readings are deterministic given seed and call order.
    """

    base_offset_ns: int = 0
    drift_ppm: float = 0.0
    jitter_stddev_ns: float = 0.0
    epoch_ns: int = 0
    rng_seed: int = 0
    _rng: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self._rng = np.random.default_rng(self.rng_seed)

    @classmethod
    def create(
        cls,
        offset: float = 0.0,
        drift_ppm: float = 0.0,
        jitter_stddev: float = 0.0,
        epoch: float = 0.0,
        seed: int = 0,
    ) -> "ClockState":
        """Build a clock from values in seconds."""
        if jitter_stddev < 0:
            raise ValueError("jitter_stddev must be >= 0")
        return cls(to_ns(offset), float(drift_ppm), jitter_stddev * NS_PER_S, to_ns(epoch), seed)

    @property
    def base_offset(self) -> float:
        return to_seconds(self.base_offset_ns)

    @property
    def epoch_true_time(self) -> float:
        return to_seconds(self.epoch_ns)

    def ideal_offset_ns(self, true_ns: int) -> int:
        """Noise-free clock error at ``true_ns``."""
        return self.base_offset_ns + round((true_ns - self.epoch_ns) * self.drift_ppm * 1e-6)


def read_clock_ns(clock: ClockState, true_ns: int) -> int:
    if true_ns < clock.epoch_ns:
        raise ValueError(f"true time {true_ns} ns precedes clock epoch {clock.epoch_ns} ns")
    reading = true_ns + clock.ideal_offset_ns(true_ns)
    if clock.jitter_stddev_ns > 0:
        reading += round(clock._rng.normal(0.0, clock.jitter_stddev_ns))
    return reading


def read_clock(clock: ClockState, true_time: float) -> float:
    """Clock reading in seconds at ``true_time`` (seconds)."""
    return to_seconds(read_clock_ns(clock, to_ns(true_time)))


def step_correct(clock: ClockState, offset_ns: int, at_true_ns: int) -> ClockState:
    """Return ``clock`` stepped by ``-offset_ns`` at ``at_true_ns``.

    Only the offset and epoch move; drift and the jitter stream carry over.
    """
    if at_true_ns < clock.epoch_ns:
        raise ValueError("correction instant precedes clock epoch")
    new = replace(clock, base_offset_ns=clock.ideal_offset_ns(at_true_ns) - offset_ns, epoch_ns=at_true_ns)
    new._rng = clock._rng
    return new


@dataclass(frozen=True)
class SyncSample:
    """One four-timestamp exchange, in integer nanoseconds.

    t1/t4 are read on the client clock, t2/t3 on the server clock.
    """

    t1: int
    t2: int
    t3: int
    t4: int

    @classmethod
    def from_seconds(cls, t1: float, t2: float, t3: float, t4: float) -> "SyncSample":
        return cls(to_ns(t1), to_ns(t2), to_ns(t3), to_ns(t4))

    @property
    def offset_ns(self) -> float:
        # client minus server, so a positive value means the client is ahead
        return ((self.t1 - self.t2) + (self.t4 - self.t3)) / 2

    @property
    def delay_ns(self) -> int:
        return (self.t4 - self.t1) - (self.t3 - self.t2)


@dataclass(frozen=True)
class SyncEstimate:
    offset: float  # seconds, client clock minus server clock
    round_trip_delay: float  # seconds
    sample_count: int


def estimate_offset_delay(sample: SyncSample) -> SyncEstimate:
    """Offset and round-trip delay from a single exchange.

    The standard NTP formula is written server-minus-client,
    ``((t2 - t1) + (t3 - t4)) / 2``; this returns its negation so that the
    result is the client's error, which is what gets subtracted on correction.
    A negative delay is returned as-is; filtering happens in :func:`combine`.
    """
    return SyncEstimate(sample.offset_ns / NS_PER_S, sample.delay_ns / NS_PER_S, 1)


class SyncFailure(RuntimeError):
    """Synchronization could not complete; ``samples`` holds what was collected."""

    def __init__(self, message: str, samples: Sequence[SyncSample]) -> None:
        super().__init__(message)
        self.samples = list(samples)


def best_half(samples: Sequence[SyncSample]) -> list[SyncSample]:
    """Drop negative-delay samples, then keep the ceil(n/2) lowest-delay ones."""
    valid = [s for s in samples if s.delay_ns >= 0]
    if not valid:
        return []
    keep = math.ceil(len(valid) / 2)
    # stable sort keeps exchange order among equal delays
    return sorted(valid, key=lambda s: s.delay_ns)[:keep]


def combine(samples: Sequence[SyncSample]) -> tuple[SyncEstimate, int]:
    """Filter samples and average the survivors.

    Returns the estimate and the integer-nanosecond offset used for correction.
    """
    kept = best_half(samples)
    if not kept:
        raise SyncFailure("no usable sync samples", samples)
    total = sum((s.t1 - s.t2) + (s.t4 - s.t3) for s in kept)
    offset_ns = round(total / (2 * len(kept)))
    delay_ns = sum(s.delay_ns for s in kept) / len(kept)
    est = SyncEstimate(total / (2 * len(kept)) / NS_PER_S, delay_ns / NS_PER_S, len(kept))
    return est, offset_ns


def exchange(
    client: ClockState,
    server: ClockState,
    link: LatencyModel,
    start_ns: int,
    processing_ns: int = 0,
) -> tuple[SyncSample | None, int]:
    """Run one request/response through ``link`` starting at true time ``start_ns``.

    Returns ``(sample, end_ns)``; the sample is ``None`` if either leg was dropped.
    The request travels client to server, i.e. the link's reverse direction.
    """
    t1 = read_clock_ns(client, start_ns)
    out = link.sample(reverse=True)
    if out is None:
        return None, start_ns
    arrive = start_ns + to_ns(out)
    t2 = read_clock_ns(server, arrive)
    depart = arrive + processing_ns
    t3 = read_clock_ns(server, depart)
    back = link.sample(reverse=False)
    if back is None:
        return None, depart
    end = depart + to_ns(back)
    t4 = read_clock_ns(client, end)
    return SyncSample(t1, t2, t3, t4), end


def sync_round(
    client: ClockState,
    server: ClockState,
    link: LatencyModel,
    true_time: float,
    n_samples: int,
    poll_gap: float = 0.0,
    samples_out: list[SyncSample] | None = None,
) -> tuple[SyncEstimate, ClockState, float]:
    """Run ``n_samples`` exchanges, filter, and step-correct the client clock.

    Returns the estimate, the corrected clock and the true time (seconds) at
    which the last exchange completed, which is also the correction instant.
    Raises :class:`SyncFailure` on any dropped message. Raw samples are
    appended to ``samples_out`` when given.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    samples: list[SyncSample] = [] if samples_out is None else samples_out
    now = to_ns(true_time)
    gap = to_ns(poll_gap)
    for i in range(n_samples):
        sample, now = exchange(client, server, link, now)
        if sample is None:
            raise SyncFailure(f"message dropped during exchange {i + 1}/{n_samples}", samples)
        samples.append(sample)
        if i + 1 < n_samples:
            now += gap
    est, offset_ns = combine(samples)
    return est, step_correct(client, offset_ns, now), to_seconds(now)


@dataclass(frozen=True)
class SyncReport:
    """Chrony-style status summary for one client."""

    name: str
    hop_count: int
    last_offset: float
    rms_offset: float
    residual_drift_ppm: float
    round_trip_delay: float
    rounds: int


def sync_history(
    client: ClockState,
    server: ClockState,
    link: LatencyModel,
    start: float,
    rounds: int,
    interval: float,
    n_samples: int,
) -> tuple[list[tuple[float, SyncEstimate]], ClockState]:
    """Repeat :func:`sync_round` every ``interval`` seconds; failed rounds are skipped.

    A round that takes longer than ``interval`` pushes the next one back to
    its completion time.
    """
    history: list[tuple[float, SyncEstimate]] = []
    t = start
    for _ in range(rounds):
        try:
            est, client, end = sync_round(client, server, link, t, n_samples)
            history.append((end, est))
            t = max(t + interval, end)
        except SyncFailure:
            t += interval
    return history, client


def summarize_history(name: str, history: Sequence[tuple[float, SyncEstimate]]) -> SyncReport:
    """Summarize a correction history.

    After the first step the measured offsets are what accumulated since the
    previous correction, so offset / elapsed estimates the residual drift.
    """
    if not history:
        nan = float("nan")
        return SyncReport(name, 1, nan, nan, nan, nan, 0)
    offsets = np.array([e.offset for _, e in history])
    rates = [
        est.offset / (t - t_prev) * 1e6
        for (t_prev, _), (t, est) in zip(history, history[1:])
        if t > t_prev
    ]
    window = offsets[1:] if len(offsets) > 1 else offsets
    return SyncReport(
        name=name,
        hop_count=1,
        last_offset=float(offsets[-1]),
        rms_offset=float(np.sqrt(np.mean(window**2))),
        residual_drift_ppm=float(np.mean(rates)) if rates else float("nan"),
        round_trip_delay=history[-1][1].round_trip_delay,
        rounds=len(history),
    )
