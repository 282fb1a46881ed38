"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
Diagnostics go to stderr; stdout carries only results.
"""

from __future__ import annotations

import argparse
import logging
import math
import signal
import sys
import threading
from importlib import resources
from pathlib import Path
from typing import Sequence

from syncfed.config import ConfigError, ExperimentConfig, parse_config
from syncfed.harness.runner import TRANSPORTS, format_sync_report, run_and_write, run_seeds, sync_report

log = logging.getLogger("syncfed")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits 2 by default; usage errors are 1 here
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def bundled_configs() -> list[str]:
    return sorted(p.name for p in resources.files("syncfed.configs").iterdir() if p.name.endswith(".json"))


def read_config(name: str) -> ExperimentConfig:
    """Load ``name`` from disk, falling back to a bundled config of that name."""
    path = Path(name)
    if path.is_file():
        return parse_config(path.read_bytes())
    if path.name == name and name in bundled_configs():
        return parse_config(resources.files("syncfed.configs").joinpath(name).read_bytes())
    raise FileNotFoundError(name)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="syncfed", description="Clock-synchronized federated learning experiments.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--strategy", choices=["syncfed", "fedavg", "both"])
    run.add_argument("--transport", choices=TRANSPORTS, default="sim")
    run.add_argument("--transcript", help="write the binary message log here")
    run.add_argument("--out", help="results directory (default: output_dir from the config)")

    cmp_ = sub.add_parser("compare", help="paired SyncFed/FedAvg runs over K seeds")
    cmp_.add_argument("--config", required=True)
    cmp_.add_argument("--seeds", type=int, default=1, help="seeds are master seed + 0..K-1")
    cmp_.add_argument("--jobs", type=int, default=1)
    cmp_.add_argument("--out", help="parent directory for seed-<n> result directories")

    rep = sub.add_parser("sync-report", help="clock-sync status per client")
    rep.add_argument("--config", required=True)
    return p


def _fmt(x: float | None) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "-"
    return f"{x:.4f}" if isinstance(x, float) else str(x)


def _summary_table(summary) -> str:
    lines = [f"{'strategy':<8} {'final_acc':>9} {'last5_acc':>9} {'mean_aoi_s':>10} {'to_thresh':>9}"]
    for name, s in summary.strategies.items():
        lines.append(
            f"{name:<8} {_fmt(s.final_accuracy):>9} {_fmt(s.mean_last5_accuracy):>9} "
            f"{_fmt(s.mean_effective_aoi):>10} {_fmt(s.rounds_to_threshold):>9}"
        )
    return "\n".join(lines) + "\n"


def cmd_run(args, cfg: ExperimentConfig) -> int:
    out = Path(args.out or cfg.output_dir)
    summary = run_and_write(cfg, out, args.strategy, args.transport, args.transcript)
    sys.stdout.write(f"results: {out}\n")
    sys.stdout.write(_summary_table(summary))
    return EXIT_OK


def cmd_compare(args, cfg: ExperimentConfig) -> int:
    if args.seeds < 1 or args.jobs < 1:
        raise UsageError("--seeds and --jobs must be >= 1")
    out = Path(args.out or cfg.output_dir)
    rows = run_seeds(cfg, args.seeds, out, args.jobs)
    sys.stdout.write(f"{'seed':>6} {'acc_syncfed':>11} {'acc_fedavg':>10} {'aoi_syncfed':>11} {'aoi_fedavg':>10}\n")
    aoi_wins = acc_wins = 0
    for seed, s in rows:
        sf, fa = s.strategies["syncfed"], s.strategies["fedavg"]
        aoi_wins += sf.mean_effective_aoi < fa.mean_effective_aoi
        acc_wins += sf.final_accuracy >= fa.final_accuracy
        sys.stdout.write(
            f"{seed:>6} {sf.final_accuracy:>11.4f} {fa.final_accuracy:>10.4f} "
            f"{sf.mean_effective_aoi:>11.4f} {fa.mean_effective_aoi:>10.4f}\n"
        )
    n = len(rows)
    sys.stdout.write(f"syncfed lower mean AoI: {aoi_wins}/{n}; syncfed final accuracy >= fedavg: {acc_wins}/{n}\n")
    return EXIT_OK


def cmd_sync_report(args, cfg: ExperimentConfig) -> int:
    sys.stdout.write(format_sync_report(sync_report(cfg)))
    return EXIT_OK


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "sync-report": cmd_sync_report}


def _terminate(signum, frame):
    # unwinds through the partial-output cleanup like Ctrl-C does
    raise KeyboardInterrupt


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage())
    except UsageError as e:
        sys.stderr.write(str(e) if str(e).endswith("\n") else f"{e}\n")
        return EXIT_CONFIG

    logging.basicConfig(
        stream=sys.stderr,
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = read_config(args.config)
    except FileNotFoundError:
        sys.stderr.write(f"syncfed: config file not found: {args.config}\n")
        return EXIT_CONFIG
    except ConfigError as e:
        sys.stderr.write(f"syncfed: {args.config}: {type(e).__name__}: {e}\n")
        return EXIT_CONFIG
    except OSError as e:
        sys.stderr.write(f"syncfed: cannot read {args.config}: {e}\n")
        return EXIT_CONFIG

    previous = None
    if threading.current_thread() is threading.main_thread():
        previous = signal.signal(signal.SIGTERM, _terminate)
    try:
        return COMMANDS[args.command](args, cfg)
    except UsageError as e:
        sys.stderr.write(f"syncfed: {e}\n")
        return EXIT_CONFIG
    except KeyboardInterrupt:
        sys.stderr.write("syncfed: interrupted\n")
        return EXIT_RUNTIME
    except Exception as e:
        log.debug("runtime failure", exc_info=True)
        sys.stderr.write(f"syncfed: {type(e).__name__}: {e}\n")
        return EXIT_RUNTIME
    finally:
        if previous is not None:
            signal.signal(signal.SIGTERM, previous)


if __name__ == "__main__":
    sys.exit(main())
