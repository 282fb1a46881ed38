"""Experiment output shared by both drivers."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

from syncfed.clocksync import SyncEstimate
from syncfed.learner import ModelParams
from syncfed.orchestrator.core import RoundRecord, StepInfo, Strategy


@dataclass
class ExperimentResult:
    strategy: Strategy
    records: list[RoundRecord]
    params_history: list[ModelParams]  # global model after each round
    initial_params: ModelParams
    sync: dict[str, SyncEstimate | None]  # None = fell back to the unsynchronized clock
    draw_digest: str
    transcript: bytes = b""
    final_time: float = 0.0

    @property
    def final_params(self) -> ModelParams:
        return self.params_history[-1] if self.params_history else self.initial_params


def annotate(record: RoundRecord, steps: dict[tuple[int, int], StepInfo]) -> RoundRecord:
    """Attach client-side lag information, which never travels on the wire."""
    clients = []
    for c in record.clients:
        info = steps.get((record.round, c.client_id))
        if info is not None:
            c = replace(c, lag_rounds=info.lag_rounds, lag_fallback=info.lag_fallback)
        clients.append(c)
    return replace(record, clients=tuple(clients))


@dataclass
class DrawDigest:
    """Running hash of every random draw that must match across paired runs."""

    h: "hashlib._Hash" = field(default_factory=hashlib.sha256)

    def add(self, *items) -> None:
        self.h.update(repr(items).encode())

    def hexdigest(self) -> str:
        return self.h.hexdigest()
