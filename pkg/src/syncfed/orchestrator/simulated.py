"""Run an experiment over the deterministic discrete-event network."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from syncfed.aggregation import ClientUpdate
from syncfed.clocksync import SyncEstimate, SyncFailure, SyncSample, read_clock, sync_round
from syncfed.config import ExperimentConfig
from syncfed.learner import ModelParams
from syncfed.orchestrator.core import (
    RoundRecord,
    StepInfo,
    Strategy,
    client_step,
    server_round,
)
from syncfed.orchestrator.result import DrawDigest, ExperimentResult, annotate
from syncfed.orchestrator.world import World, build_world
from syncfed.transport import wire
from syncfed.transport.simnet import Event, EventQueue, run_until_idle, send_ns, to_ns, to_seconds

log = logging.getLogger(__name__)

SERVER = "server"


@dataclass(frozen=True)
class _Timeout:
    round: int


def synchronize_clients(world: World, cfg: ExperimentConfig, frames: list[bytes] | None, digest: DrawDigest) -> tuple[dict, int]:
    """Step 1 for every client. Returns per-client estimates and the latest finish time (ns)."""
    results: dict[str, SyncEstimate | None] = {}
    end_ns = 0
    for client, link in zip(world.clients, world.links):
        samples: list[SyncSample] = []
        try:
            est, clock, end = sync_round(
                client.clock, world.server.clock, link, 0.0, cfg.sync.samples, cfg.sync.poll_gap_s, samples
            )
            client.clock, client.sync, client.synced = clock, est, True
            end_ns = max(end_ns, to_ns(end))
        except SyncFailure as e:
            log.warning("client %s: clock sync failed (%s); using local clock", client.name, e)
            est = None
        results[client.name] = est
        for s in samples:
            digest.add("sync", client.client_id, s.t1, s.t2, s.t3, s.t4)
            if frames is not None:
                frames.append(wire.encode(wire.SyncRequest(s.t1)))
                frames.append(wire.encode(wire.SyncResponse(s.t1, s.t2, s.t3)))
    return results, end_ns


def run_simulated(cfg: ExperimentConfig, strategy: Strategy | str, keep_transcript: bool = False) -> ExperimentResult:
    strategy = Strategy(strategy)
    world = build_world(cfg, strategy)
    server = world.server
    frames: list[bytes] | None = [] if keep_transcript else None
    digest = DrawDigest()
    sync, start_ns = synchronize_clients(world, cfg, frames, digest)

    queue = EventQueue(start_ns)
    timeout_ns = to_ns(server.round_timeout)
    pending: dict[int, tuple[ClientUpdate, float]] = {}
    steps: dict[tuple[int, int], StepInfo] = {}
    records: list[RoundRecord] = []
    history: list[ModelParams] = []

    def broadcast(now_ns: int) -> None:
        frame = wire.encode(wire.GlobalModel(server.round, server.global_params.values))
        for client, link in zip(world.clients, world.links):
            send_ns(link, queue, now_ns, client.client_id, frame)
        queue.push(now_ns + timeout_ns, SERVER, _Timeout(server.round))

    def aggregate(now_ns: int) -> None:
        record = server_round(server, list(pending.values()), to_seconds(now_ns))
        pending.clear()
        records.append(record)
        history.append(server.global_params)
        if server.round < cfg.rounds:
            broadcast(now_ns)
        else:
            frame = wire.encode(wire.RoundDone(server.round - 1))
            for client, link in zip(world.clients, world.links):
                send_ns(link, queue, now_ns, client.client_id, frame)

    def handle(ev: Event) -> None:
        if isinstance(ev.payload, _Timeout):
            if ev.payload.round == server.round and server.round < cfg.rounds:
                aggregate(ev.time_ns)
            return
        if frames is not None:
            frames.append(ev.payload)
        msg = wire.decode(ev.payload)
        digest.add("deliver", ev.time_ns, ev.dst, int(msg.variant), getattr(msg, "round", None),
                   getattr(msg, "client_id", None), getattr(msg, "t_n", None))
        if ev.dst == SERVER:
            assert isinstance(msg, wire.ClientUpdateMsg)
            if msg.round != server.round or server.round >= cfg.rounds:
                server.late_updates += 1
                return
            update = ClientUpdate(
                client_id=msg.client_id,
                round=msg.round,
                params=server.global_params.with_values(msg.params),
                generated_at=to_seconds(msg.t_n),
                m_n=msg.m_n,
            )
            arrived = read_clock(server.clock, to_seconds(ev.time_ns))
            pending[msg.client_id] = (update, arrived)
            if len(pending) == len(world.clients):
                aggregate(ev.time_ns)
            return
        client = world.clients[ev.dst]
        link = world.links[ev.dst]
        if isinstance(msg, wire.GlobalModel):
            draw = client.lag.draw()
            done_ns = ev.time_ns + to_ns(draw.compute_delay)
            params = server.global_params.with_values(msg.params)
            info = client_step(client, msg.round, params, to_seconds(done_ns), draw)
            steps[(msg.round, client.client_id)] = info
            digest.add("step", msg.round, client.client_id, draw.lag_rounds, draw.compute_delay,
                       info.base_round, info.data_digest, info.update.generated_at)
            u = info.update
            frame = wire.encode(wire.ClientUpdateMsg(u.round, u.client_id, to_ns(u.generated_at), u.m_n, u.params.values))
            send_ns(link, queue, done_ns, SERVER, frame, reverse=True)

    if cfg.rounds > 0:
        broadcast(start_ns)
    final = run_until_idle(queue, handle)
    records = [annotate(r, steps) for r in records]
    return ExperimentResult(
        strategy=strategy,
        records=records,
        params_history=history,
        initial_params=world.initial_params,
        sync=sync,
        draw_digest=digest.hexdigest(),
        transcript=b"".join(frames) if frames is not None else b"",
        final_time=final,
    )
