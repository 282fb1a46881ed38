"""Deterministic discrete-event network used by the simulated transport.

All times on the queue are integer nanoseconds of *true* simulation time.
Latency models take and return seconds at their public surface.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable

import numpy as np

NS_PER_S = 1_000_000_000


def to_ns(seconds: float) -> int:
    return int(round(seconds * NS_PER_S))


def to_seconds(ns: int) -> float:
    return ns / NS_PER_S


class CausalityError(RuntimeError):
    """An event was scheduled earlier than the current simulation time."""


@dataclass
class LatencyModel:
    """One client-server link.

    ``base_delay`` is the one-way delay in seconds for the forward direction
    (server to client by convention). ``reverse_base_delay`` overrides it for
    the opposite direction; ``None`` means symmetric.
    """

    base_delay: float
    jitter_stddev: float = 0.0
    drop_probability: float = 0.0
    seed: int = 0
    reverse_base_delay: float | None = None
    _rng: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.base_delay < 0 or (self.reverse_base_delay is not None and self.reverse_base_delay < 0):
            raise ValueError("base_delay must be >= 0")
        if self.jitter_stddev < 0:
            raise ValueError("jitter_stddev must be >= 0")
        # 1.0 is allowed here for dead-link tests; configs cap it below 1
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError("drop_probability must be in [0, 1]")
        self._rng = np.random.default_rng(self.seed)

    def sample(self, reverse: bool = False) -> float | None:
        """Draw one delivery delay in seconds, or ``None`` if the message is dropped.

        Both the drop draw and the jitter draw are always consumed so that the
        random stream stays aligned regardless of outcome.
        """
        u = self._rng.random()
        noise = self._rng.normal(0.0, self.jitter_stddev) if self.jitter_stddev > 0 else 0.0
        if u < self.drop_probability:
            return None
        base = self.base_delay
        if reverse and self.reverse_base_delay is not None:
            base = self.reverse_base_delay
        return max(0.0, base + noise)


@dataclass(order=True)
class Event:
    time_ns: int
    seq: int
    dst: Hashable = field(compare=False)
    payload: Any = field(compare=False)


class EventQueue:
    """Min-queue of deliveries ordered by (time, insertion sequence)."""

    def __init__(self, start_ns: int = 0) -> None:
        self._heap: list[Event] = []
        self._seq = itertools.count()
        self.now_ns = start_ns

    def __len__(self) -> int:
        return len(self._heap)

    @property
    def now(self) -> float:
        return to_seconds(self.now_ns)

    def push(self, time_ns: int, dst: Hashable, payload: Any) -> None:
        if time_ns < self.now_ns:
            raise CausalityError(f"event at {time_ns} ns scheduled before now={self.now_ns} ns")
        heapq.heappush(self._heap, Event(time_ns, next(self._seq), dst, payload))

    def pop(self) -> Event:
        ev = heapq.heappop(self._heap)
        self.now_ns = ev.time_ns
        return ev


def send(
    link: LatencyModel,
    queue: EventQueue,
    now: float,
    dst: Hashable,
    msg: Any,
    reverse: bool = False,
) -> int | None:
    """Schedule ``msg`` for delivery to ``dst`` through ``link``.

    Returns the delivery time in nanoseconds, or ``None`` if the link dropped it.
    """
    return send_ns(link, queue, to_ns(now), dst, msg, reverse=reverse)


def send_ns(
    link: LatencyModel,
    queue: EventQueue,
    now_ns: int,
    dst: Hashable,
    msg: Any,
    reverse: bool = False,
) -> int | None:
    if now_ns < queue.now_ns:
        raise CausalityError(f"send at {now_ns} ns is before now={queue.now_ns} ns")
    delay = link.sample(reverse=reverse)
    if delay is None:
        return None
    at = now_ns + to_ns(delay)
    queue.push(at, dst, msg)
    return at


def run_until_idle(queue: EventQueue, handler: Callable[[Event], None]) -> float:
    """Deliver events in order until the queue is empty; return the final true time in seconds.

    ``handler`` may push further events; pushing into the past raises
    :class:`CausalityError`.
    """
    while queue:
        handler(queue.pop())
    return queue.now
