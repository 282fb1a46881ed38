"""Experiment execution and result-directory layout."""

from __future__ import annotations

import logging
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from syncfed.clocksync import SyncReport, summarize_history, sync_history
from syncfed.config import ExperimentConfig
from syncfed.orchestrator.core import Strategy
from syncfed.orchestrator.networked import run_networked
from syncfed.orchestrator.result import ExperimentResult
from syncfed.orchestrator.simulated import run_simulated
from syncfed.orchestrator.world import build_world
from syncfed.harness.outputs import (
    ComparisonSummary,
    deltas_to_csv,
    emit_csv,
    emit_plotdata,
    summarize,
    summary_to_csv,
)

log = logging.getLogger(__name__)

TRANSPORTS = ("sim", "socket")


class PairingError(RuntimeError):
    """Paired strategy runs consumed different random draws."""


def run_experiment(
    cfg: ExperimentConfig, strategy: Strategy | str, transport: str = "sim", keep_transcript: bool = False
) -> ExperimentResult:
    if transport == "sim":
        return run_simulated(cfg, strategy, keep_transcript)
    if transport == "socket":
        return run_networked(cfg, strategy, keep_transcript)
    raise ValueError(f"unknown transport {transport!r}")


def csv_meta(cfg: ExperimentConfig, strategy: str) -> dict[str, object]:
    """Settings echoed on the first line of each per-strategy CSV."""
    return {
        "strategy": strategy,
        "seed": cfg.seed,
        "gamma": cfg.gamma,
        "latency_scale": cfg.latency_scale,
        "rounds": cfg.rounds,
        "learning_rate": cfg.train.learning_rate,
        "local_epochs": cfg.train.local_epochs,
        "batch_size": cfg.train.batch_size,
        "drift_rate": cfg.data.drift_rate,
    }


def strategies_for(cfg: ExperimentConfig, override: str | None = None) -> list[str]:
    choice = override or cfg.strategy
    return ["syncfed", "fedavg"] if choice == "both" else [choice]


def write_results(
    cfg: ExperimentConfig,
    results: Mapping[str, ExperimentResult],
    out_dir: Path | str,
    transcripts: bool = False,
) -> ComparisonSummary:
    """Write every output file into ``out_dir``, which must already exist."""
    out = Path(out_dir)
    names = [c.name for c in cfg.clients]
    for name, res in results.items():
        emit_csv(res.records, out / f"{name}.csv", names, meta=csv_meta(cfg, name))
        if transcripts:
            (out / f"{name}.transcript").write_bytes(res.transcript)
    summary = summarize(results, cfg.accuracy_threshold)
    meta = {"seed": cfg.seed, **{f"draws_{k}": v for k, v in summary.draw_digests.items()}}
    (out / "summary.csv").write_text(summary_to_csv(summary, meta), encoding="utf-8", newline="")
    if summary.deltas:
        (out / "deltas.csv").write_text(deltas_to_csv(summary), encoding="utf-8", newline="")
    emit_plotdata(summary, out)
    (out / "config.json").write_text(cfg.to_json(), encoding="utf-8", newline="")
    return summary


def _publish(build, out_dir: Path | str):
    """Call ``build(tmp)`` in a sibling temp directory, then move it to ``out_dir``.

    Nothing is left at ``out_dir`` if ``build`` raises.
    """
    out = Path(out_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        value = build(tmp)
        if out.exists():
            shutil.rmtree(out)
        tmp.rename(out)
        return value
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def run_and_write(
    cfg: ExperimentConfig,
    out_dir: Path | str,
    strategy: str | None = None,
    transport: str = "sim",
    transcript: Path | str | None = None,
) -> ComparisonSummary:
    """Run one or both strategies and write the results directory."""
    names = strategies_for(cfg, strategy)
    keep = transcript is not None

    def build(tmp: Path) -> ComparisonSummary:
        results = {n: run_experiment(cfg, n, transport, keep) for n in names}
        check_pairing(results)
        if keep:
            blob = b"".join(results[n].transcript for n in names)
            Path(transcript).write_bytes(blob)
        return write_results(cfg, results, tmp)

    return _publish(build, out_dir)


def check_pairing(results: Mapping[str, ExperimentResult]) -> None:
    digests = {k: r.draw_digest for k, r in results.items()}
    for k, d in digests.items():
        log.info("draw digest %s: %s", k, d)
    if len(set(digests.values())) > 1:
        raise PairingError(f"paired runs drew different randomness: {digests}")


def run_compare(cfg: ExperimentConfig, out_dir: Path | str | None = None) -> ComparisonSummary:
    """Run SyncFed and FedAvg on identical draws and write the comparison.

    Writes ``syncfed.csv``, ``fedavg.csv``, ``summary.csv`` and friends into
    ``out_dir`` (default ``cfg.output_dir``).
    """
    return run_and_write(cfg, out_dir if out_dir is not None else cfg.output_dir, "both")


def seed_configs(cfg: ExperimentConfig, k: int) -> list[ExperimentConfig]:
    """Seed repetitions expand as ``cfg.seed + i`` for i in 0..k-1."""
    if k < 1:
        raise ValueError("--seeds must be >= 1")
    return [cfg.model_copy(update={"seed": cfg.seed + i}) for i in range(k)]


def _compare_one(args: tuple[ExperimentConfig, str]) -> ComparisonSummary:
    cfg, out = args
    return run_compare(cfg, out)


def run_seeds(cfg: ExperimentConfig, k: int, out_dir: Path | str, jobs: int = 1) -> list[tuple[int, ComparisonSummary]]:
    """Paired comparison for K seeds, one ``seed-<n>`` directory each."""
    cfgs = seed_configs(cfg, k)
    work = [(c, str(Path(out_dir) / f"seed-{c.seed}")) for c in cfgs]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            summaries = list(pool.map(_compare_one, work))
    else:
        summaries = [_compare_one(w) for w in work]
    return [(c.seed, s) for c, s in zip(cfgs, summaries)]


@dataclass(frozen=True)
class SyncReportRow:
    report: SyncReport
    true_offset: float  # residual error of the corrected clock, seconds


def sync_report(cfg: ExperimentConfig) -> list[SyncReportRow]:
    """Repeated sync rounds per client against the server clock, summarized."""
    world = build_world(cfg, Strategy.SYNCFED)
    rows = []
    for client, link in zip(world.clients, world.links):
        history, clock = sync_history(
            client.clock,
            world.server.clock,
            link,
            0.0,
            cfg.sync.report_rounds,
            cfg.sync.report_interval_s,
            cfg.sync.samples,
        )
        end_ns = clock.epoch_ns
        residual = (clock.ideal_offset_ns(end_ns) - world.server.clock.ideal_offset_ns(end_ns)) / 1e9
        rows.append(SyncReportRow(summarize_history(client.name, history), residual))
    return rows


def format_sync_report(rows: list[SyncReportRow]) -> str:
    head = f"{'client':<12} {'hops':>4} {'rounds':>6} {'last_offset_us':>15} {'rms_offset_us':>14} " \
           f"{'drift_ppm':>10} {'rtt_ms':>10} {'residual_us':>12}"
    lines = [head]
    for row in rows:
        r = row.report
        lines.append(
            f"{r.name:<12} {r.hop_count:>4} {r.rounds:>6} {r.last_offset * 1e6:>15.3f} {r.rms_offset * 1e6:>14.3f} "
            f"{r.residual_drift_ppm:>10.4f} {r.round_trip_delay * 1e3:>10.3f} {row.true_offset * 1e6:>12.3f}"
        )
    return "\n".join(lines) + "\n"
