from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from syncfed.clocksync import (
    ClockState,
    SyncFailure,
    SyncSample,
    best_half,
    combine,
    estimate_offset_delay,
    exchange,
    read_clock,
    read_clock_ns,
    step_correct,
    summarize_history,
    sync_history,
    sync_round,
)
from syncfed.transport.simnet import LatencyModel, to_ns


def true_error(clock: ClockState, server: ClockState, at_ns: int) -> float:
    """Noise-free client-minus-server clock difference in seconds."""
    return (clock.ideal_offset_ns(at_ns) - server.ideal_offset_ns(at_ns)) / 1e9


class TestReadClock:
    def test_identity_clock(self):
        assert read_clock(ClockState.create(), 100.0) == 100.0

    def test_slow_drift(self):
        clock = ClockState.create(drift_ppm=-21.667)
        assert read_clock(clock, 1000.0) == pytest.approx(999.978333, abs=1e-9)

    def test_pure_offset(self):
        assert read_clock(ClockState.create(offset=0.5), 10.0) == 10.5

    def test_rejects_time_before_epoch(self):
        clock = ClockState.create(epoch=5.0)
        with pytest.raises(ValueError):
            read_clock(clock, 4.0)

    def test_jitter_is_seeded(self):
        a = ClockState.create(jitter_stddev=1e-3, seed=3)
        b = ClockState.create(jitter_stddev=1e-3, seed=3)
        ra = [read_clock_ns(a, t) for t in range(0, 10**9, 10**8)]
        rb = [read_clock_ns(b, t) for t in range(0, 10**9, 10**8)]
        assert ra == rb
        assert ra != list(range(0, 10**9, 10**8))

    @settings(max_examples=300, deadline=None)
    @given(
        drift=st.floats(-999_999.0, 1e5, allow_nan=False),
        t1=st.integers(0, 10**13),
        dt=st.integers(1, 10**12),
        offset=st.integers(-10**10, 10**10),
    )
    def test_rate_and_monotonicity(self, drift, t1, dt, offset):
        clock = ClockState(base_offset_ns=offset, drift_ppm=drift)
        r1, r2 = read_clock_ns(clock, t1), read_clock_ns(clock, t1 + dt)
        ideal = dt * (1 + drift * 1e-6)
        # nanosecond rounding of the drift term is the only source of error
        assert abs((r2 - r1) - ideal) <= 1.0
        assert r2 >= r1
        if ideal > 1.0:
            assert r2 > r1

    def test_step_correction_keeps_drift(self):
        clock = ClockState.create(offset=0.3, drift_ppm=12.0, jitter_stddev=1e-6, seed=1)
        fixed = step_correct(clock, to_ns(0.3), to_ns(50.0))
        assert fixed.drift_ppm == clock.drift_ppm
        assert fixed.jitter_stddev_ns == clock.jitter_stddev_ns
        assert fixed.epoch_ns == to_ns(50.0)
        # the drift accumulated since epoch 0 (600 us) remains as offset
        assert fixed.base_offset_ns == 600_000


class TestEstimate:
    def test_four_timestamp_example(self):
        est = estimate_offset_delay(SyncSample.from_seconds(0, 15, 25, 30))
        assert est.round_trip_delay == 20
        # client-minus-server: the server clock reads 5 ahead of the client
        assert est.offset == -5

    def test_symmetric_delay_recovers_offset(self):
        client = ClockState.create(offset=0.005)
        server = ClockState.create()
        link = LatencyModel(base_delay=0.010)
        sample, _ = exchange(client, server, link, to_ns(1.0))
        assert estimate_offset_delay(sample).offset == pytest.approx(0.005, abs=1e-15)
        assert estimate_offset_delay(sample).round_trip_delay == pytest.approx(0.020, abs=1e-15)

    def test_asymmetric_delay_error(self):
        # 10 ms client->server, 20 ms back; error is half the asymmetry
        link = LatencyModel(base_delay=0.020, reverse_base_delay=0.010)
        sample, _ = exchange(ClockState.create(), ClockState.create(), link, 0)
        assert estimate_offset_delay(sample).offset == pytest.approx(0.005, abs=1e-15)

    @settings(max_examples=300, deadline=None)
    @given(
        theta=st.integers(-10**10, 10**10),
        d_out=st.integers(0, 10**9),
        d_ret=st.integers(0, 10**9),
    )
    def test_asymmetry_bound(self, theta, d_out, d_ret):
        client = ClockState(base_offset_ns=theta)
        link = LatencyModel(base_delay=d_ret / 1e9, reverse_base_delay=d_out / 1e9)
        sample, _ = exchange(client, ClockState(), link, 10**9)
        assert sample.offset_ns - theta == (d_ret - d_out) / 2
        assert sample.delay_ns == d_out + d_ret

    @settings(max_examples=200, deadline=None)
    @given(theta=st.floats(-100, 100, allow_nan=False), d=st.floats(0, 5, allow_nan=False))
    def test_symmetric_exactness(self, theta, d):
        client = ClockState.create(offset=theta)
        sample, _ = exchange(client, ClockState.create(), LatencyModel(base_delay=d), to_ns(10.0))
        assert sample.offset_ns == to_ns(theta)

    def test_negative_delay_is_returned(self):
        est = estimate_offset_delay(SyncSample(0, 10, 20, 5))
        assert est.round_trip_delay < 0


class TestFilter:
    def test_keeps_lowest_half(self):
        samples = [SyncSample(0, 0, 0, d) for d in (50, 10, 40, 20, 30)]
        assert [s.delay_ns for s in best_half(samples)] == [10, 20, 30]

    def test_drops_negative_delays(self):
        samples = [SyncSample(0, 10, 20, 5), SyncSample(0, 0, 0, 7)]
        assert [s.delay_ns for s in best_half(samples)] == [7]

    def test_nothing_usable(self):
        with pytest.raises(SyncFailure):
            combine([SyncSample(0, 10, 20, 5)])


class TestSyncRound:
    def test_lossless_recovery(self):
        client = ClockState.create(offset=1.0)
        server = ClockState.create()
        est, fixed, end = sync_round(client, server, LatencyModel(base_delay=0.0), 2.0, 1)
        assert est.offset == 1.0
        assert est.sample_count == 1
        for t in (end, end + 1.0, end + 100.0):
            assert read_clock(fixed, t) == read_clock(server, t)

    @pytest.mark.parametrize("d", [0.0, 0.001, 0.1190085, 3.0])
    @pytest.mark.parametrize("theta", [-2.5, 0.0, 0.35, 1.2])
    def test_symmetric_delay(self, d, theta):
        est, _, _ = sync_round(ClockState.create(offset=theta), ClockState.create(), LatencyModel(base_delay=d), 0.0, 4)
        assert est.offset == pytest.approx(theta, abs=1e-9)

    def test_idempotent_at_zero_drift(self):
        client, server = ClockState.create(offset=0.7), ClockState.create(offset=-0.2)
        link = LatencyModel(base_delay=0.02, reverse_base_delay=0.05)
        _, fixed, end = sync_round(client, server, link, 0.0, 8)
        est2, _, _ = sync_round(fixed, server, link, end + 1.0, 8)
        assert abs(est2.offset) <= 1e-12

    def test_drop_raises_with_partial_samples(self):
        link = LatencyModel(base_delay=0.01, drop_probability=0.5, seed=4)
        collected = []
        with pytest.raises(SyncFailure) as info:
            sync_round(ClockState.create(), ClockState.create(), link, 0.0, 50, samples_out=collected)
        assert len(info.value.samples) < 50
        assert info.value.samples == collected

    def test_dead_link(self):
        with pytest.raises(SyncFailure) as info:
            sync_round(ClockState.create(), ClockState.create(), LatencyModel(0.0, drop_probability=1.0), 0.0, 3)
        assert info.value.samples == []

    def test_rejects_zero_samples(self):
        with pytest.raises(ValueError):
            sync_round(ClockState.create(), ClockState.create(), LatencyModel(0.0), 0.0, 0)

    def test_jitter_bound_matches_independent_oracle(self):
        # independent model of the estimator: per-sample error is (back - out) / 2,
        # keep the lower-delay half, average
        rng = np.random.default_rng(12345)
        d, sd, n, trials = 0.010, 0.001, 8, 10_000
        out = np.maximum(0, d + rng.normal(0, sd, (trials, n)))
        back = np.maximum(0, d + rng.normal(0, sd, (trials, n)))
        order = np.argsort(out + back, axis=1, kind="stable")[:, : n // 2]
        err = np.take_along_axis((back - out) / 2, order, axis=1).mean(axis=1)
        oracle = np.mean(np.abs(err) <= 0.003)
        assert oracle >= 0.99

        hits = 0
        for seed in range(2000):
            client = ClockState.create(offset=0.0)
            server = ClockState.create()
            link = LatencyModel(base_delay=d, jitter_stddev=sd, seed=seed)
            est, fixed, end = sync_round(client, server, link, 0.0, n)
            hits += abs(true_error(fixed, server, to_ns(end))) <= 0.003
        assert hits / 2000 >= 0.99


class TestReport:
    def test_residual_drift_is_recovered(self):
        client = ClockState.create(offset=0.4, drift_ppm=10.0)
        server = ClockState.create()
        history, _ = sync_history(client, server, LatencyModel(base_delay=0.005), 0.0, 10, 2.0, 4)
        report = summarize_history("c", history)
        assert report.rounds == 10
        assert report.hop_count == 1
        assert report.residual_drift_ppm == pytest.approx(10.0, rel=0.02)
        # measured on the client clock, so stretched by its 10 ppm drift
        assert report.round_trip_delay == pytest.approx(0.010 * (1 + 10e-6), abs=1e-9)
        # first step removes the 0.4 s offset; afterwards only drift accumulates
        assert history[0][1].offset == pytest.approx(0.4, abs=1e-5)
        assert report.rms_offset < 1e-4

    def test_slow_rounds_do_not_overlap(self):
        # each round takes 8 x 2 s, longer than the 1 s interval
        history, _ = sync_history(
            ClockState.create(drift_ppm=5.0), ClockState.create(), LatencyModel(base_delay=1.0), 0.0, 4, 1.0, 8
        )
        assert len(history) == 4
        assert all(b[0] > a[0] for a, b in zip(history, history[1:]))

    def test_empty_history(self):
        r = summarize_history("x", [])
        assert r.rounds == 0 and math.isnan(r.last_offset)
