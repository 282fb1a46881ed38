"""CSV emitters for round telemetry, comparison summaries and plot data.

Floats are written with ``repr`` (shortest round-trip, locale independent),
rows end in ``\\n``, and column order depends only on the client list.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from syncfed.orchestrator.core import RoundRecord
from syncfed.orchestrator.result import ExperimentResult

BASE_COLUMNS = ["round", "server_time_s", "accuracy", "effective_aoi_s", "reference_aoi_s"]
CLIENT_COLUMNS = ["staleness_s", "lambda", "weight"]


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def client_names(records: Iterable[RoundRecord]) -> list[str]:
    seen: dict[str, int] = {}
    for r in records:
        for c in r.clients:
            seen.setdefault(c.name, c.client_id)
    return sorted(seen, key=seen.get)


def meta_line(meta: Mapping[str, object]) -> str:
    return "# " + " ".join(f"{k}={fmt(v)}" for k, v in meta.items()) + "\n"


def _write(path: Path | str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def records_to_csv(
    records: Sequence[RoundRecord],
    names: Sequence[str] | None = None,
    meta: Mapping[str, object] | None = None,
) -> str:
    names = list(names) if names is not None else client_names(records)
    buf = io.StringIO()
    if meta:
        buf.write(meta_line(meta))
    w = csv.writer(buf, lineterminator="\n")
    header = list(BASE_COLUMNS)
    for n in names:
        header += [f"{n}_{col}" for col in CLIENT_COLUMNS]
    header.append("stationary_accuracy")
    w.writerow(header)
    for r in records:
        row = [fmt(r.round), fmt(r.server_time), fmt(r.accuracy), fmt(r.effective_aoi), fmt(r.reference_aoi)]
        by_name = {c.name: c for c in r.clients}
        for n in names:
            c = by_name.get(n)
            row += ["", "", ""] if c is None else [fmt(c.staleness), fmt(c.freshness), fmt(c.weight)]
        row.append(fmt(r.stationary_accuracy))
        w.writerow(row)
    return buf.getvalue()


def emit_csv(
    records: Sequence[RoundRecord],
    path: Path | str,
    names: Sequence[str] | None = None,
    meta: Mapping[str, object] | None = None,
) -> None:
    """Write one row per round; ``meta`` adds a leading ``# key=value`` line."""
    _write(path, records_to_csv(records, names, meta))


@dataclass
class StrategySummary:
    final_accuracy: float
    mean_last5_accuracy: float
    mean_effective_aoi: float
    rounds_to_threshold: int | None
    accuracy: list[float] = field(default_factory=list)
    effective_aoi: list[float] = field(default_factory=list)


@dataclass
class ComparisonSummary:
    strategies: dict[str, StrategySummary]
    threshold: float
    # per round: (round, accuracy delta, AoI delta, max |param delta|), syncfed minus fedavg
    deltas: list[tuple[int, float, float, float]] = field(default_factory=list)
    draw_digests: dict[str, str] = field(default_factory=dict)


def _nanmean(xs: Sequence[float]) -> float:
    vals = [x for x in xs if not math.isnan(x)]
    return float(np.mean(vals)) if vals else float("nan")


def summarize_strategy(records: Sequence[RoundRecord], threshold: float) -> StrategySummary:
    acc = [r.accuracy for r in records]
    aoi = [r.effective_aoi for r in records]
    hit = next((r.round for r in records if r.accuracy >= threshold), None)
    nan = float("nan")
    return StrategySummary(
        final_accuracy=acc[-1] if acc else nan,
        mean_last5_accuracy=float(np.mean(acc[-5:])) if acc else nan,
        mean_effective_aoi=_nanmean(aoi),
        rounds_to_threshold=hit,
        accuracy=acc,
        effective_aoi=aoi,
    )


def summarize(results: Mapping[str, ExperimentResult], threshold: float) -> ComparisonSummary:
    """Summaries per strategy plus paired per-round deltas when both are present."""
    summary = ComparisonSummary(
        strategies={k: summarize_strategy(v.records, threshold) for k, v in results.items()},
        threshold=threshold,
        draw_digests={k: v.draw_digest for k, v in results.items()},
    )
    if "syncfed" in results and "fedavg" in results:
        s, f = results["syncfed"], results["fedavg"]
        for rs, rf, ps, pf in zip(s.records, f.records, s.params_history, f.params_history):
            summary.deltas.append(
                (
                    rs.round,
                    rs.accuracy - rf.accuracy,
                    rs.effective_aoi - rf.effective_aoi,
                    float(np.max(np.abs(ps.values - pf.values))),
                )
            )
    return summary


SUMMARY_METRICS = ["final_accuracy", "mean_last5_accuracy", "mean_effective_aoi", "rounds_to_threshold"]


def summary_to_csv(summary: ComparisonSummary, meta: Mapping[str, object] | None = None) -> str:
    names = list(summary.strategies)
    buf = io.StringIO()
    if meta:
        buf.write(meta_line(meta))
    w = csv.writer(buf, lineterminator="\n")
    paired = {"syncfed", "fedavg"} <= set(names)
    w.writerow(["metric", *names] + (["delta"] if paired else []))
    for metric in SUMMARY_METRICS:
        vals = [getattr(summary.strategies[n], metric) for n in names]
        row = ["mean_effective_aoi_s" if metric == "mean_effective_aoi" else metric, *map(fmt, vals)]
        if paired:
            a, b = getattr(summary.strategies["syncfed"], metric), getattr(summary.strategies["fedavg"], metric)
            row.append("" if a is None or b is None else fmt(a - b))
        w.writerow(row)
    return buf.getvalue()


def deltas_to_csv(summary: ComparisonSummary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["round", "accuracy_delta", "effective_aoi_delta", "max_abs_param_delta"])
    for row in summary.deltas:
        w.writerow([fmt(x) for x in row])
    return buf.getvalue()


def emit_plotdata(summary: ComparisonSummary, directory: Path | str) -> tuple[Path, Path]:
    """Write ``accuracy_plot.csv`` and ``aoi_plot.csv`` as long-format round,strategy,value."""
    directory = Path(directory)
    paths = []
    for fname, attr in (("accuracy_plot.csv", "accuracy"), ("aoi_plot.csv", "effective_aoi")):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "strategy", "value"])
        for name, s in summary.strategies.items():
            for i, v in enumerate(getattr(s, attr)):
                w.writerow([i, name, fmt(v)])
        path = directory / fname
        _write(path, buf.getvalue())
        paths.append(path)
    return paths[0], paths[1]


def read_plotdata(path: Path | str) -> dict[str, list[float]]:
    """Parse a plot-data file back into per-strategy series."""
    series: dict[str, list[float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            s = series.setdefault(row["strategy"], [])
            if int(row["round"]) != len(s):
                raise ValueError(f"{path}: rounds for {row['strategy']} are not consecutive")
            s.append(float(row["value"]))
    return series
