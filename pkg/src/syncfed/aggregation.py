"""Freshness weighting, FedAvg and SyncFed aggregation, effective AoI.

Both aggregators sort updates by ``client_id`` and accumulate sequentially,
so results do not depend on the order updates arrived in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from syncfed.learner import ModelParams

UNDERFLOW_FLOOR = 1e-300


@dataclass(frozen=True)
class ClientUpdate:
    client_id: Hashable
    round: int
    params: ModelParams
    generated_at: float  # T_n, seconds on the client's (corrected) clock
    m_n: int

    def __post_init__(self) -> None:
        if self.m_n < 1:
            raise ValueError("m_n must be >= 1")
        if self.round < 0:
            raise ValueError("round must be >= 0")
        if not np.all(np.isfinite(self.params.values)):
            raise ValueError(f"update from {self.client_id!r} has non-finite params")


@dataclass(frozen=True)
class AggregationWeights:
    client_ids: tuple
    freshness: tuple[float, ...]  # lambda_n
    weights: tuple[float, ...]  # normalized, sums to 1
    gamma: float
    server_time: float
    clamped: tuple[bool, ...]  # T_n > T_s, staleness forced to 0
    underflow: bool = False

    def as_dict(self) -> dict:
        return dict(zip(self.client_ids, self.weights))


def staleness(server_time: float, generated_at: float) -> tuple[float, bool]:
    """``max(0, T_s - T_n)`` and whether the clamp was applied."""
    raw = server_time - generated_at
    if raw < 0:
        return 0.0, True
    return raw, False


def _check_gamma(gamma: float) -> None:
    if not (gamma >= 0 and math.isfinite(gamma)):
        raise ValueError(f"gamma must be finite and >= 0, got {gamma}")


def freshness_weight(server_time: float, generated_at: float, gamma: float) -> float:
    """``exp(-gamma * staleness)``; gamma is per second."""
    _check_gamma(gamma)
    s, _ = staleness(server_time, generated_at)
    return math.exp(-gamma * s)


def _sorted(updates: Sequence[ClientUpdate]) -> list[ClientUpdate]:
    if not updates:
        raise ValueError("no updates to aggregate")
    ordered = sorted(updates, key=lambda u: u.client_id)
    shape = ordered[0].params.layer_sizes
    for u in ordered[1:]:
        if u.params.layer_sizes != shape:
            raise ValueError(f"shape mismatch: {u.client_id!r} has {u.params.layer_sizes}, expected {shape}")
    ids = [u.client_id for u in ordered]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate client_id in update set")
    return ordered


def _combine(ordered: Sequence[ClientUpdate], weights: Sequence[float]) -> ModelParams:
    acc = np.zeros_like(ordered[0].params.values)
    for u, w in zip(ordered, weights):
        acc += w * u.params.values
    return ordered[0].params.with_values(acc)


def fedavg_weights(ordered: Sequence[ClientUpdate]) -> list[float]:
    total = sum(int(u.m_n) for u in ordered)
    # int / int is correctly rounded, so scaling every m_n leaves these bit-identical
    return [int(u.m_n) / total for u in ordered]


def fedavg(updates: Sequence[ClientUpdate]) -> ModelParams:
    """Dataset-size weighted mean of the client models."""
    ordered = _sorted(updates)
    return _combine(ordered, fedavg_weights(ordered))


def syncfed_weights(
    updates: Sequence[ClientUpdate], server_time: float, gamma: float
) -> tuple[list[ClientUpdate], AggregationWeights]:
    _check_gamma(gamma)
    ordered = _sorted(updates)
    stale = [staleness(server_time, u.generated_at) for u in ordered]
    ages = [s for s, _ in stale]
    lams = [math.exp(-gamma * a) for a in ages]
    # normalizing relative to the freshest update is algebraically identical and
    # keeps the largest term at m_n >= 1, so the denominator cannot underflow
    youngest = min(ages)
    scores = [math.exp(-gamma * (a - youngest)) * u.m_n for a, u in zip(ages, ordered)]
    total = math.fsum(scores)
    underflow = not total >= UNDERFLOW_FLOOR
    weights = fedavg_weights(ordered) if underflow else [s / total for s in scores]
    record = AggregationWeights(
        client_ids=tuple(u.client_id for u in ordered),
        freshness=tuple(lams),
        weights=tuple(weights),
        gamma=gamma,
        server_time=server_time,
        clamped=tuple(c for _, c in stale),
        underflow=underflow,
    )
    return ordered, record


def syncfed(
    updates: Sequence[ClientUpdate], server_time: float, gamma: float
) -> tuple[ModelParams, AggregationWeights]:
    """Aggregate with weights proportional to ``lambda_n * m_n``."""
    ordered, record = syncfed_weights(updates, server_time, gamma)
    return _combine(ordered, record.weights), record


def effective_aoi(updates: Sequence[ClientUpdate], weights: Sequence[float], server_time: float) -> float:
    """Weighted mean of clamped staleness; ``weights`` aligns with ``updates``."""
    if len(weights) != len(updates):
        raise ValueError("one weight per update required")
    if abs(math.fsum(weights) - 1.0) > 1e-9:
        raise ValueError(f"weights sum to {math.fsum(weights)!r}, expected 1")
    return math.fsum(w * staleness(server_time, u.generated_at)[0] for u, w in zip(updates, weights))
