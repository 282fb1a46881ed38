"""Build seeded client/server state from an :class:`ExperimentConfig`.

Every random stream is derived from the master seed and a fixed stream id,
so two strategies run from the same config consume identical draws.
"""

from __future__ import annotations

from dataclasses import dataclass

from syncfed.clocksync import ClockState
from syncfed.config import ClockConfig, ExperimentConfig
from syncfed.learner import (
    ModelParams,
    SyntheticSpec,
    TrainConfig,
    generate_synthetic,
    init_model,
    make_class_geometry,
)
from syncfed.orchestrator.core import (
    ClientState,
    LagModel,
    ServerState,
    Strategy,
    Validation,
    derive_seed,
)
from syncfed.transport.simnet import LatencyModel

# stream ids
GEOMETRY, INIT, VALID_STATIONARY, VALID_DRIFT, SERVER_CLOCK = 1, 2, 3, 4, 5
CLIENT_DATA, CLIENT_TRAIN, CLIENT_LAG, CLIENT_LINK, CLIENT_CLOCK = 10, 11, 12, 13, 14


@dataclass
class World:
    server: ServerState
    clients: list[ClientState]
    links: list[LatencyModel]  # forward = server -> client
    initial_params: ModelParams


def make_clock(cc: ClockConfig, seed: int) -> ClockState:
    return ClockState.create(offset=cc.offset_s, drift_ppm=cc.drift_ppm, jitter_stddev=cc.jitter_s, seed=seed)


def build_world(cfg: ExperimentConfig, strategy: Strategy | str) -> World:
    s = cfg.seed
    strategy = Strategy(strategy)
    means, dirs = make_class_geometry(cfg.data.n_classes, cfg.data.d_in, cfg.data.separation, derive_seed(s, GEOMETRY))
    base_spec = SyntheticSpec(
        means=means,
        directions=dirs,
        noise_scale=cfg.data.noise_scale,
        drift_rate=cfg.data.drift_rate,
        samples=cfg.data.validation_samples,
    )
    validation = Validation(
        stationary=generate_synthetic(base_spec, 0, derive_seed(s, VALID_STATIONARY)),
        spec=base_spec,
        seed=derive_seed(s, VALID_DRIFT),
    )
    params = init_model(cfg.layer_sizes, derive_seed(s, INIT))

    clients, links = [], []
    scale = cfg.latency_scale / 1000.0
    for i, cc in enumerate(cfg.clients):
        down, up = cfg.one_way_delays(cc)
        links.append(
            LatencyModel(
                base_delay=down,
                jitter_stddev=cc.jitter_ms * scale,
                drop_probability=cc.drop_probability,
                seed=derive_seed(s, CLIENT_LINK, i),
                reverse_base_delay=up,
            )
        )
        clients.append(
            ClientState(
                client_id=i,
                name=cc.name,
                clock=make_clock(cc.clock, derive_seed(s, CLIENT_CLOCK, i)),
                data_spec=base_spec.replace_mix(cc.class_mix, cc.samples),
                data_seed=derive_seed(s, CLIENT_DATA, i),
                train=TrainConfig(
                    learning_rate=cfg.train.learning_rate,
                    local_epochs=cfg.train.local_epochs,
                    batch_size=cfg.train.batch_size,
                    seed=derive_seed(s, CLIENT_TRAIN, i),
                ),
                lag=LagModel(
                    p_lag=cc.lag.p_lag,
                    max_lag_rounds=cc.lag.max_lag_rounds,
                    compute_s=cc.lag.compute_s,
                    compute_jitter_s=cc.lag.compute_jitter_s,
                    seed=derive_seed(s, CLIENT_LAG, i),
                ),
            )
        )
    server = ServerState(
        global_params=params,
        gamma=cfg.gamma,
        strategy=strategy,
        clock=make_clock(cfg.server_clock, derive_seed(s, SERVER_CLOCK)),
        validation=validation,
        client_names={c.client_id: c.name for c in clients},
        round_timeout=cfg.round_timeout_s,
    )
    return World(server, clients, links, params)
