"""Command-line front end.

Exit codes: 0 success, 2 usage or configuration error, 3 engine fault.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from .analytic import AnalyticInputs, analyze
from .config import SWEEP_AXES, ExperimentConfig, config_to_dict, load_experiment
from .core import ConfigError, EngineFault, Mode
from .engine import RunResult, run
from .eventlog import LogIntegrityError, read_events, replay, sequence_digest, write_events
from .metrics import METRICS_COLUMNS, SWEEP_COLUMNS, MetricsError, summarize, sweep

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FAULT = 3

ANALYTIC_COLUMNS = (
    "alpha",
    "gamma",
    "speed_ratio",
    "rho_steady",
    "expected_tokens",
    "pipespec_rate",
    "sd_speedup",
    "pipespec_ideal",
)
HISTOGRAM_COLUMNS = ("mode", "tokens_per_step", "count")
GRID_ALPHAS = tuple(round(0.05 * i, 2) for i in range(1, 20))
GRID_GAMMAS = tuple(range(1, 17))

log = logging.getLogger("pipedraft")


class UsageError(Exception):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _fmt_value(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


# analytic -------------------------------------------------------------------


def _check_domain(args) -> None:
    if not 0.0 <= args.alpha <= 1.0:
        raise UsageError(f"--alpha must lie in [0, 1], got {args.alpha}")
    if args.gamma < 0:
        raise UsageError(f"--gamma must be >= 0, got {args.gamma}")
    if not args.speed_ratio > 0:
        raise UsageError(f"--speed-ratio must be > 0, got {args.speed_ratio}")


def cmd_analytic(args) -> int:
    if args.grid:
        if not args.speed_ratio > 0:
            raise UsageError(f"--speed-ratio must be > 0, got {args.speed_ratio}")
        rows = [
            analyze(AnalyticInputs(a, g, args.speed_ratio)).as_dict() for a in GRID_ALPHAS for g in GRID_GAMMAS
        ]
        _emit(_csv(ANALYTIC_COLUMNS, rows), args.out)
        return EXIT_OK
    if args.alpha is None or args.gamma is None:
        raise UsageError("analytic needs --alpha and --gamma (or --grid)")
    _check_domain(args)
    report = analyze(AnalyticInputs(args.alpha, args.gamma, args.speed_ratio))
    _emit(_dumps(report.as_dict()), args.out)
    return EXIT_OK


# simulate / compare -----------------------------------------------------------


def _load(args) -> tuple[ExperimentConfig, Path]:
    if args.config is None:
        raise UsageError("--config is required")
    exp = load_experiment(args.config)
    return exp, Path(args.config).resolve().parent


def _run_modes(exp: ExperimentConfig, base: Path, modes, seed) -> tuple[dict[Mode, RunResult], RunResult]:
    results = {}
    baseline = None
    for mode in [Mode.AUTOREGRESSIVE] + [m for m in modes if m is not Mode.AUTOREGRESSIVE]:
        cfg = exp.pipeline(mode, seed)
        res = run(cfg, exp.models(cfg, base))
        if mode is Mode.AUTOREGRESSIVE:
            baseline = res
        if mode in modes:
            results[mode] = res
    return results, baseline


def _run_block(res: RunResult, baseline: RunResult) -> dict:
    report = summarize(res, baseline)
    return {
        "mode": res.mode.value,
        "config": config_to_dict(res.config),
        "final_length": len(res.final_sequence),
        "final_digest": sequence_digest(res.final_sequence),
        "metrics": report.as_dict(),
    }


def cmd_simulate(args, modes=None) -> int:
    exp, base = _load(args)
    modes = list(Mode) if modes == "all" else exp.modes
    if args.emit_events and args.out is None:
        raise UsageError("--emit-events needs --out DIR")
    seed = exp.seed if args.seed is None else args.seed
    results, baseline = _run_modes(exp, base, modes, seed)
    blocks = [_run_block(res, baseline) for res in results.values()]
    summary = {"schema_version": exp.schema_version, "seed": seed, "runs": blocks}
    if args.out is None:
        sys.stdout.write(_dumps(summary))
        return EXIT_OK
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(_dumps(summary), encoding="utf-8")
    reports = [summarize(res, baseline) for res in results.values()]
    (out / "metrics.csv").write_text(_csv(METRICS_COLUMNS, [r.row() for r in reports]), encoding="utf-8")
    hist_rows = [
        {"mode": r.mode, "tokens_per_step": k, "count": v} for r in reports for k, v in r.accept_histogram.items()
    ]
    (out / "histogram.csv").write_text(_csv(HISTOGRAM_COLUMNS, hist_rows), encoding="utf-8")
    if args.emit_events:
        for mode, res in results.items():
            with open(out / f"events-{mode.value}.jsonl", "w", encoding="utf-8") as fh:
                write_events(fh, res)
    return EXIT_OK


# sweep ----------------------------------------------------------------------


def _parse_values(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--values must be a comma-separated list of numbers, got {text!r}") from None
    if not values:
        raise UsageError("--values must not be empty")
    return values


def cmd_sweep(args) -> int:
    exp, base = _load(args)
    axis = args.axis or (exp.sweep.axis if exp.sweep else None)
    if axis is None:
        raise UsageError("sweep needs --axis (or a [sweep] section in the config)")
    if args.values is not None:
        values = _parse_values(args.values)
    elif exp.sweep is not None and exp.sweep.axis == axis:
        values = list(exp.sweep.values)
    else:
        raise UsageError("sweep needs --values (or a matching [sweep] section in the config)")
    seed = exp.seed if args.seed is None else args.seed
    configs = [exp.pipeline(m, seed) for m in exp.modes]
    rows = sweep(configs, axis, values, lambda cfg: exp.models(cfg, base))
    out_rows = []
    for r in rows:
        d = r.row()
        d["value"] = _fmt_value(r.value)
        out_rows.append(d)
    _emit(_csv(SWEEP_COLUMNS, out_rows), args.out)
    return EXIT_OK


# replay ---------------------------------------------------------------------


def cmd_replay(args) -> int:
    path = args.log
    if path is None:
        raise UsageError("replay needs an event log path")
    try:
        with open(path, encoding="utf-8") as fh:
            loaded = read_events(fh)
    except OSError as exc:
        raise UsageError(f"cannot read event log {path}: {exc}") from None
    t = replay(loaded)
    h = loaded.header
    n = len(t.final_sequence)
    steps = t.final_steps
    report = {
        "mode": h["mode"],
        "final_length": n,
        "final_digest": sequence_digest(t.final_sequence),
        "total_time": t.total_time,
        "time_per_token": t.total_time / n if n else 0.0,
        "verify_steps": t.verify_steps,
        "fallback_steps": t.fallback_steps,
        "tokens_per_step": n / steps if steps else 0.0,
        "accept_histogram": {str(k): v for k, v in t.accept_histogram.items()},
        "busy_fraction": t.busy_fraction(),
        "rollbacks": t.rollbacks,
        "wasted_tokens": t.wasted_tokens,
    }
    if args.print_sequence:
        report["final_sequence"] = t.final_sequence
    _emit(_dumps(report), args.out)
    return EXIT_OK


# entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pipedraft", description="Pipelined speculative decoding simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analytic", help="closed-form throughput model")
    a.add_argument("--alpha", type=float)
    a.add_argument("--gamma", type=int)
    a.add_argument("--speed-ratio", type=float, default=1.0, help="draft tokens per target step")
    a.add_argument("--grid", action="store_true", help="CSV over alpha 0.05..0.95 and gamma 1..16")
    a.add_argument("--out")

    for name, help_ in (("simulate", "run the configured modes"), ("compare", "run every mode")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", help="output directory")
        s.add_argument("--emit-events", action="store_true", help="also write replayable event logs")

    w = sub.add_parser("sweep", help="vary one parameter, long-format CSV")
    w.add_argument("--config")
    w.add_argument("--seed", type=int)
    w.add_argument("--axis", choices=SWEEP_AXES)
    w.add_argument("--values", help="comma-separated")
    w.add_argument("--out")

    r = sub.add_parser("replay", help="rebuild a run from its event log")
    r.add_argument("log", nargs="?")
    r.add_argument("--out")
    r.add_argument("--print-sequence", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "seed", None) is not None and args.seed < 0:
        parser.error(f"--seed must be >= 0, got {args.seed}")
    handlers = {
        "analytic": cmd_analytic,
        "simulate": cmd_simulate,
        "compare": lambda a: cmd_simulate(a, modes="all"),
        "sweep": cmd_sweep,
        "replay": cmd_replay,
    }
    try:
        return handlers[args.command](args)
    except EngineFault as exc:
        log.error("engine fault: %s", exc)
        return EXIT_FAULT
    except (UsageError, ConfigError, MetricsError, LogIntegrityError) as exc:
        print(f"pipedraft {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
