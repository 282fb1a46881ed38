"""Client and server state machines shared by the simulated and socket drivers."""

from __future__ import annotations

import enum
import hashlib
import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from syncfed import aggregation
from syncfed.aggregation import ClientUpdate
from syncfed.clocksync import ClockState, SyncEstimate, read_clock, read_clock_ns
from syncfed.learner import (
    Dataset,
    ModelParams,
    SyntheticSpec,
    TrainConfig,
    evaluate,
    generate_synthetic,
    local_train,
)
from syncfed.transport.simnet import to_ns, to_seconds

log = logging.getLogger(__name__)


class Strategy(str, enum.Enum):
    SYNCFED = "syncfed"
    FEDAVG = "fedavg"


def derive_seed(*keys: int) -> int:
    """Independent 32-bit seed for a named random stream."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def compute_staleness(server_time: float, generated_at: float) -> tuple[float, bool]:
    """Staleness in seconds, clamped at zero; the flag is set when clamping happened."""
    return aggregation.staleness(server_time, generated_at)


@dataclass(frozen=True)
class LagDraw:
    lag_rounds: int  # 0 = train on the current global model
    compute_delay: float  # seconds


@dataclass
class LagModel:
    """Seeded source of stale training bases and compute time.

    Every draw consumes the same three variates so streams stay aligned
    between paired runs.
    """

    p_lag: float = 0.0
    max_lag_rounds: int = 1
    compute_s: float = 0.0
    compute_jitter_s: float = 0.0
    seed: int = 0
    _rng: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        # 1.0 (always lag) is accepted for tests; configs cap it below 1
        if not 0.0 <= self.p_lag <= 1.0:
            raise ValueError("p_lag must be in [0, 1]")
        if self.max_lag_rounds < 1:
            raise ValueError("max_lag_rounds must be >= 1")
        self._rng = np.random.default_rng(self.seed)

    def draw(self) -> LagDraw:
        u, k, v = self._rng.random(), self._rng.integers(1, self.max_lag_rounds + 1), self._rng.random()
        lag = int(k) if u < self.p_lag else 0
        return LagDraw(lag, self.compute_s + v * self.compute_jitter_s)


@dataclass
class ClientState:
    client_id: int
    name: str
    clock: ClockState
    data_spec: SyntheticSpec
    data_seed: int
    train: TrainConfig
    lag: LagModel
    models: dict[int, ModelParams] = field(default_factory=dict)
    stamps: dict[int, int] = field(default_factory=dict)  # round -> T_n in clock ns
    sync: SyncEstimate | None = None
    synced: bool = False

    def receive(self, round_: int, params: ModelParams) -> None:
        self.models[round_] = params


@dataclass(frozen=True)
class StepInfo:
    update: ClientUpdate
    base_round: int
    lag_rounds: int
    lag_fallback: bool
    data_digest: str


def client_step(state: ClientState, round_: int, params: ModelParams, true_time: float, draw: LagDraw) -> StepInfo:
    """Train for ``round_`` and stamp the result.

    ``true_time`` is the instant training completes. A lagged step models work
    that finished in an earlier round and is only now being delivered: it
    starts from that round's cached global model and data, and carries the
    timestamp taken when that work completed.
    """
    state.receive(round_, params)
    state.stamps[round_] = read_clock_ns(state.clock, to_ns(true_time))

    base = round_
    fallback = False
    if draw.lag_rounds:
        want = round_ - draw.lag_rounds
        if want in state.models:
            base = want
        else:
            base = min(state.models)
            fallback = True
    data = generate_synthetic(state.data_spec, base, state.data_seed)
    cfg = replace(state.train, seed=derive_seed(state.train.seed, base))
    trained = local_train(state.models[base], data, cfg)
    update = ClientUpdate(
        client_id=state.client_id,
        round=round_,
        params=trained,
        generated_at=to_seconds(state.stamps[base]),
        m_n=data.m,
    )
    keep = round_ - state.lag.max_lag_rounds
    for r in [r for r in state.models if r < keep]:
        del state.models[r]
        state.stamps.pop(r, None)
    digest = hashlib.sha256(data.features.tobytes() + data.labels.tobytes()).hexdigest()[:16]
    return StepInfo(update, base, round_ - base, fallback, digest)


@dataclass(frozen=True)
class ClientRecord:
    client_id: int
    name: str
    generated_at: float
    arrived_at: float  # server clock
    staleness: float
    freshness: float
    weight: float
    m_n: int
    clamped: bool
    lag_rounds: int | None = None
    lag_fallback: bool = False


@dataclass(frozen=True)
class RoundRecord:
    round: int
    server_time: float
    accuracy: float  # drifted validation sample for this round
    stationary_accuracy: float
    effective_aoi: float  # under the strategy's own weights
    reference_aoi: float  # under FedAvg weights
    clients: tuple[ClientRecord, ...]
    timed_out: tuple[str, ...] = ()
    skipped: bool = False
    underflow: bool = False
    late_updates: int = 0


@dataclass
class Validation:
    stationary: Dataset
    spec: SyntheticSpec
    seed: int

    def drifted(self, round_: int) -> Dataset:
        return generate_synthetic(self.spec, round_, self.seed)


@dataclass
class ServerState:
    global_params: ModelParams
    gamma: float
    strategy: Strategy
    clock: ClockState
    validation: Validation
    client_names: dict[int, str]
    round_timeout: float
    round: int = 0
    late_updates: int = 0


def server_round(
    state: ServerState,
    updates: Sequence[tuple[ClientUpdate, float]],
    true_time: float,
) -> RoundRecord:
    """Aggregate this round's updates at ``true_time`` and advance the round.

    ``updates`` pairs each update with its arrival time on the server clock.
    Mutates ``state`` (params, round) and returns the round's telemetry.
    """
    t_s = read_clock(state.clock, true_time)
    missing = tuple(
        state.client_names[c] for c in sorted(state.client_names) if c not in {u.client_id for u, _ in updates}
    )
    rnd = state.round
    late, state.late_updates = state.late_updates, 0
    if not updates:
        log.warning("round %d: no updates before timeout, keeping previous global model", rnd)
        acc = evaluate(state.global_params, state.validation.drifted(rnd))
        st_acc = evaluate(state.global_params, state.validation.stationary)
        state.round += 1
        nan = float("nan")
        return RoundRecord(rnd, t_s, acc, st_acc, nan, nan, (), missing, skipped=True, late_updates=late)

    arrivals = {u.client_id: a for u, a in updates}
    ordered, sync_w = aggregation.syncfed_weights([u for u, _ in updates], t_s, state.gamma)
    fed_w = aggregation.fedavg_weights(ordered)
    if state.strategy is Strategy.SYNCFED:
        new_params, weights = aggregation.syncfed(ordered, t_s, state.gamma)[0], list(sync_w.weights)
    else:
        new_params, weights = aggregation.fedavg(ordered), fed_w
    if sync_w.underflow and state.strategy is Strategy.SYNCFED:
        log.warning("round %d: freshness weights underflowed, fell back to FedAvg weights", rnd)
    if not np.all(np.isfinite(new_params.values)):
        raise FloatingPointError(f"round {rnd}: aggregated params are not finite")

    clients = []
    for u, lam, w, clamped in zip(ordered, sync_w.freshness, weights, sync_w.clamped):
        s, _ = compute_staleness(t_s, u.generated_at)
        if clamped:
            log.info("round %d: client %s timestamp is ahead of server time, staleness clamped", rnd, u.client_id)
        clients.append(
            ClientRecord(
                client_id=u.client_id,
                name=state.client_names[u.client_id],
                generated_at=u.generated_at,
                arrived_at=arrivals[u.client_id],
                staleness=s,
                freshness=lam,
                weight=w,
                m_n=u.m_n,
                clamped=clamped,
            )
        )

    state.global_params = new_params
    record = RoundRecord(
        round=rnd,
        server_time=t_s,
        accuracy=evaluate(new_params, state.validation.drifted(rnd)),
        stationary_accuracy=evaluate(new_params, state.validation.stationary),
        effective_aoi=aggregation.effective_aoi(ordered, weights, t_s),
        reference_aoi=aggregation.effective_aoi(ordered, fed_w, t_s),
        clients=tuple(clients),
        timed_out=missing,
        underflow=sync_w.underflow and state.strategy is Strategy.SYNCFED,
        late_updates=late,
    )
    state.round += 1
    return record
