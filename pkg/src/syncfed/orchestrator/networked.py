"""Run an experiment over real TCP loopback connections.

The server accepts one connection per client, answers sync requests from
its session threads, and runs every aggregation on a single coordinator
thread. Latency is injected on the client side of each connection. True
time is wall time since the run started, so clock models still apply.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from dataclasses import dataclass, field

from syncfed.aggregation import ClientUpdate
from syncfed.clocksync import SyncFailure, SyncSample, combine, read_clock_ns, step_correct
from syncfed.config import ExperimentConfig
from syncfed.learner import ModelParams
from syncfed.orchestrator.core import ClientState, RoundRecord, StepInfo, Strategy, client_step, server_round
from syncfed.orchestrator.result import DrawDigest, ExperimentResult, annotate
from syncfed.orchestrator.world import World, build_world
from syncfed.transport import wire
from syncfed.transport.simnet import LatencyModel, to_ns, to_seconds
from syncfed.transport.sockets import ConnectionClosed, LatencyEndpoint, recv_frame, send_frame

log = logging.getLogger(__name__)


@dataclass
class _Shared:
    t0: int = field(default_factory=time.perf_counter_ns)
    frames: list[bytes] | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)

    def now_ns(self) -> int:
        return time.perf_counter_ns() - self.t0

    def log_frame(self, frame: bytes) -> None:
        if self.frames is not None:
            with self.lock:
                self.frames.append(frame)


def _sync_over(ep: LatencyEndpoint, state: ClientState, n: int, timeout: float, shared: _Shared, backlog: list) -> None:
    samples: list[SyncSample] = []
    for _ in range(n):
        t1 = read_clock_ns(state.clock, shared.now_ns())
        if not ep.send(wire.SyncRequest(t1)):
            raise SyncFailure("sync request dropped", samples)
        while True:
            try:
                msg = ep.recv(timeout=timeout)
            except queue.Empty:
                raise SyncFailure("sync response timed out", samples) from None
            if isinstance(msg, wire.SyncResponse) and msg.t1 == t1:
                break
            # a global model can overtake the last sync reply; keep it for later
            backlog.append(msg)
        t4 = read_clock_ns(state.clock, shared.now_ns())
        samples.append(SyncSample(t1, msg.t2, msg.t3, t4))
    est, offset_ns = combine(samples)
    state.clock = step_correct(state.clock, offset_ns, shared.now_ns())
    state.sync, state.synced = est, True


def client_main(
    address: tuple[str, int],
    state: ClientState,
    link: LatencyModel,
    layer_sizes: tuple[int, ...],
    n_sync: int,
    timeout: float,
    shared: _Shared,
    steps: dict[tuple[int, int], StepInfo],
) -> None:
    """One client session: sync, then train on every global model until ROUND_DONE."""
    ep = LatencyEndpoint(socket.create_connection(address), link, shared.now_ns, on_frame=shared.log_frame)
    backlog: list[wire.Message] = []
    try:
        try:
            _sync_over(ep, state, n_sync, timeout, shared, backlog)
        except SyncFailure as e:
            log.warning("client %s: clock sync failed (%s); using local clock", state.name, e)
        while True:
            msg = backlog.pop(0) if backlog else ep.recv()
            if isinstance(msg, wire.RoundDone):
                return
            if not isinstance(msg, wire.GlobalModel):
                continue
            draw = state.lag.draw()
            if draw.compute_delay > 0:
                time.sleep(draw.compute_delay)
            params = ModelParams(layer_sizes, msg.params)
            info = client_step(state, msg.round, params, to_seconds(shared.now_ns()), draw)
            steps[(msg.round, state.client_id)] = info
            u = info.update
            ep.send(wire.ClientUpdateMsg(u.round, u.client_id, to_ns(u.generated_at), u.m_n, u.params.values))
    except ConnectionClosed:
        log.info("client %s: server closed the connection", state.name)
    finally:
        ep.close()


class SocketServer:
    """Accepts client sessions and feeds their updates to one coordinator."""

    def __init__(self, world: World, shared: _Shared, n_sync: int, address: tuple[str, int] = ("127.0.0.1", 0)):
        self.world = world
        self.shared = shared
        self.n_sync = n_sync
        self.listener = socket.create_server(address)
        self.address: tuple[str, int] = self.listener.getsockname()[:2]
        self.inbox: queue.Queue = queue.Queue()
        self.conns: list[socket.socket] = []
        self.write_locks: list[threading.Lock] = []
        self.clock_lock = threading.Lock()

    def accept(self, n: int, timeout: float) -> None:
        self.listener.settimeout(timeout)
        for i in range(n):
            conn, _ = self.listener.accept()
            conn.settimeout(None)
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self.conns.append(conn)
            self.write_locks.append(threading.Lock())
            threading.Thread(target=self._session, args=(i,), daemon=True).start()

    def server_clock_ns(self, true_ns: int) -> int:
        with self.clock_lock:
            return read_clock_ns(self.world.server.clock, true_ns)

    def write(self, i: int, msg: wire.Message) -> None:
        with self.write_locks[i]:
            try:
                send_frame(self.conns[i], wire.encode(msg))
            except OSError:
                log.info("connection %d gone, dropping %s", i, type(msg).__name__)

    def _session(self, i: int) -> None:
        conn = self.conns[i]
        served = 0
        while True:
            try:
                frame = recv_frame(conn)
                arrived = self.shared.now_ns()
                self.shared.log_frame(frame)
                msg = wire.decode(frame)
            except (ConnectionClosed, OSError):
                self.inbox.put(("closed", i, None, 0))
                return
            except wire.WireError as e:
                log.warning("connection %d sent a bad frame (%s); closing", i, e)
                self.inbox.put(("closed", i, None, 0))
                conn.close()
                return
            if isinstance(msg, wire.SyncRequest):
                t2 = self.server_clock_ns(arrived)
                t3 = self.server_clock_ns(self.shared.now_ns())
                self.write(i, wire.SyncResponse(msg.t1, t2, t3))
                served += 1
                if served == self.n_sync:
                    self.inbox.put(("synced", i, None, 0))
            elif isinstance(msg, wire.ClientUpdateMsg):
                self.inbox.put(("update", i, msg, arrived))

    def close(self) -> None:
        for i in range(len(self.conns)):
            with self.write_locks[i]:
                try:
                    self.conns[i].shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
                self.conns[i].close()
        self.listener.close()


def run_networked(
    cfg: ExperimentConfig,
    strategy: Strategy | str,
    keep_transcript: bool = False,
    address: tuple[str, int] = ("127.0.0.1", 0),
) -> ExperimentResult:
    """Same protocol as :func:`run_simulated`, over loopback sockets and wall time."""
    strategy = Strategy(strategy)
    world = build_world(cfg, strategy)
    server_state = world.server
    shared = _Shared(frames=[] if keep_transcript else None)
    srv = SocketServer(world, shared, cfg.sync.samples, address)
    timeout = server_state.round_timeout
    steps: dict[tuple[int, int], StepInfo] = {}
    layer_sizes = tuple(cfg.layer_sizes)
    threads = [
        threading.Thread(
            target=client_main,
            args=(srv.address, c, link, layer_sizes, cfg.sync.samples, timeout, shared, steps),
            daemon=True,
        )
        for c, link in zip(world.clients, world.links)
    ]
    for t in threads:
        t.start()
    records: list[RoundRecord] = []
    history: list[ModelParams] = []
    try:
        srv.accept(len(world.clients), timeout)
        n = len(srv.conns)
        alive = set(range(n))
        ready: set[int] = set()
        deadline = time.monotonic() + timeout
        while ready < alive and time.monotonic() < deadline:
            try:
                kind, i, _, _ = srv.inbox.get(timeout=max(0.0, deadline - time.monotonic()))
            except queue.Empty:
                break
            if kind == "synced":
                ready.add(i)
            elif kind == "closed":
                alive.discard(i)

        for _ in range(cfg.rounds):
            rnd = server_state.round
            for i in sorted(alive):
                srv.write(i, wire.GlobalModel(rnd, server_state.global_params.values))
            pending: dict[int, tuple[ClientUpdate, float]] = {}
            deadline = time.monotonic() + timeout
            while len(pending) < len(alive):
                try:
                    kind, i, msg, arrived = srv.inbox.get(timeout=max(0.0, deadline - time.monotonic()))
                except queue.Empty:
                    break
                if kind == "closed":
                    alive.discard(i)
                elif kind == "update":
                    if msg.round != rnd:
                        server_state.late_updates += 1
                        continue
                    update = ClientUpdate(
                        client_id=msg.client_id,
                        round=msg.round,
                        params=ModelParams(layer_sizes, msg.params),
                        generated_at=to_seconds(msg.t_n),
                        m_n=msg.m_n,
                    )
                    pending[msg.client_id] = (update, to_seconds(srv.server_clock_ns(arrived)))
            with srv.clock_lock:
                record = server_round(server_state, list(pending.values()), to_seconds(shared.now_ns()))
            records.append(record)
            history.append(server_state.global_params)
        for i in sorted(alive):
            srv.write(i, wire.RoundDone(max(cfg.rounds - 1, 0)))
        for t in threads:
            t.join(timeout=timeout)
    finally:
        srv.close()

    digest = DrawDigest()
    for key in sorted(steps):
        info = steps[key]
        digest.add("step", *key, info.lag_rounds, info.data_digest)
    return ExperimentResult(
        strategy=strategy,
        records=[annotate(r, steps) for r in records],
        params_history=history,
        initial_params=world.initial_params,
        sync={c.name: c.sync for c in world.clients},
        draw_digest=digest.hexdigest(),
        transcript=b"".join(shared.frames) if shared.frames is not None else b"",
        final_time=to_seconds(shared.now_ns()),
    )
