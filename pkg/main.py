"""ruin-lab command line: one subcommand per operation, JSON on stdout, logs on stderr."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

import config as configmod
import discrete
import gou
import harness
import limits
from config import RunConfig, VERSION, config_hash
from discrete import Functional
from errors import ConditionFailure, ConfigError, ConvergenceError, RuinLabError
from rng import StreamKey

logger = logging.getLogger("ruin_lab")


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def _dumps(payload: dict[str, Any]) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, default=_json_default)


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _stream_id(text: str) -> int:
    value = int(text)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError(f"stream id must lie in [0, 2^64), got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ruin-lab", description="Discrete surplus processes and their GOU limits.")
    parser.add_argument("--ledger", type=Path, help="SQLite file recording every run")
    parser.add_argument("--log-level", default="WARNING", choices=("DEBUG", "INFO", "WARNING", "ERROR"))

    common = argparse.ArgumentParser(add_help=False)
    source = common.add_mutually_exclusive_group()
    source.add_argument("--config", type=Path, help="JSON run config")
    source.add_argument("--preset", choices=sorted(configmod.PRESETS), help="built-in run config")
    common.add_argument("--out", type=Path, help="output directory for CSV/SVG artifacts")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)

    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", parents=[common], help="one path of theta_n or of the GOU limit")
    p.add_argument("--process", choices=("discrete", "gou"))
    p.add_argument("--stream", type=_stream_id, default=0, help="stream id of the simulated path")
    p = sub.add_parser("ruin", parents=[common], help="finite-horizon ruin probability, or --limit for ultimate ruin")
    p.add_argument("--process", choices=("discrete", "gou"))
    p.add_argument("--limit", action="store_true", help="closed-form ultimate ruin probability of the limit")
    sub.add_parser("penalty", parents=[common], help="discounted penalty of the limit via the ODE")
    sub.add_parser("moments", parents=[common], help="moments of the limit and of theta_n")
    p = sub.add_parser("converge", parents=[common], help="convergence experiment over the n grid")
    p.add_argument("--experiment", required=True, choices=harness.EXPERIMENTS)
    sub.add_parser("check-conditions", parents=[common], help="exponential-moment conditions of the log-returns")
    p = sub.add_parser("ledger", help="list recorded runs")
    p.add_argument("--config-hash")
    p.add_argument("--limit", type=int, default=20)
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    if args.preset:
        cfg = configmod.preset(args.preset)
    elif args.config:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}", path=str(args.config)) from exc
        cfg = configmod.parse_config(text)
    else:
        raise ConfigError("pass --config FILE or --preset NAME")
    return cfg.with_overrides(
        seed=args.seed,
        workers=args.workers,
        process=getattr(args, "process", None),
    )


def _out_dir(args: argparse.Namespace, cfg: RunConfig) -> Path | None:
    if args.out is not None:
        return args.out
    return Path(cfg.out) if cfg.out else None


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace, cfg: RunConfig) -> dict[str, Any]:
    key = StreamKey(cfg.seed, args.stream)
    if cfg.process == "gou":
        params = cfg.gou_params()
        scheme = gou.default_scheme(params, cfg.scheme)
        if scheme == gou.STABLE_EULER:
            path = gou.simulate_stable(params, cfg.y0, cfg.T, cfg.h, key)
        else:
            path = gou.simulate_diffusion(params, cfg.y0, cfg.T, cfg.h, scheme, key)
        outcome = gou.first_passage(path)
        times, values = path.times, path.values
        extra = {"h": cfg.h, "scheme": scheme}
    else:
        path = discrete.simulate_path(cfg.settings().scheme_at(cfg.n), cfg.y0, cfg.T, key)
        outcome = discrete.ruin_scan(path)
        times, values = path.times, path.values
        extra = {"n": cfg.n}
    result = {
        "process": cfg.process,
        "stream_id": args.stream,
        "steps": int(values.size - 1),
        "terminal": float(values[-1]),
        "ruined": outcome.ruined,
        "ruin_time": outcome.time,
        **extra,
    }
    out = _out_dir(args, cfg)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("k", "t", "value"))
        for k, (t, v) in enumerate(zip(times, values)):
            writer.writerow([k, repr(float(t)), repr(float(v))])
        (out / "path.csv").write_text(buf.getvalue())
        result["path_csv"] = str(out / "path.csv")
    return result


def cmd_ruin(args: argparse.Namespace, cfg: RunConfig) -> dict[str, Any]:
    if args.limit:
        return limits.ultimate_ruin(cfg.gou_params(), cfg.y0).as_dict()
    functional = Functional(discrete.RUIN_PROB, T=cfg.T, barrier=cfg.barrier)
    if cfg.process == "gou":
        params = cfg.gou_params()
        est = gou.estimate(
            params, functional, cfg.y0, cfg.h, cfg.paths, cfg.seed,
            scheme=gou.default_scheme(params, cfg.scheme), workers=cfg.workers,
        )
    else:
        est = discrete.estimate(cfg.settings().scheme_at(cfg.n), functional, cfg.y0, cfg.paths, cfg.seed, workers=cfg.workers)
    return est.as_dict()


def cmd_penalty(args: argparse.Namespace, cfg: RunConfig) -> dict[str, Any]:
    return limits.discounted_penalty(cfg.gou_params(), cfg.alpha, cfg.y0).as_dict()


def cmd_moments(args: argparse.Namespace, cfg: RunConfig) -> dict[str, Any]:
    params = cfg.gou_params()
    t = min(cfg.T, 1.0)
    limit = limits.moment_recursion(params, cfg.y0, cfg.p, t)
    exact = discrete.exact_moment(cfg.settings().scheme_at(cfg.n), cfg.y0, cfg.p, t)
    return {**limit.as_dict(), "discrete_exact": exact, "n": cfg.n}


def cmd_converge(args: argparse.Namespace, cfg: RunConfig, digest: str) -> tuple[dict[str, Any], harness.ConvergenceReport]:
    report = harness.run_experiment(args.experiment, cfg.settings(digest))
    out = _out_dir(args, cfg)
    result = report.as_dict()
    if out is not None:
        files = harness.write_report(report, out)
        result["files"] = {kind: str(path) for kind, path in files.items()}
    return result, report


def cmd_check_conditions(args: argparse.Namespace, cfg: RunConfig) -> dict[str, Any]:
    rows, summary = harness.conditions_table(cfg.return_law(), cfg.q, cfg.n_max)
    table = harness.conditions_csv(rows)
    sys.stderr.write(table)
    out = _out_dir(args, cfg)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "conditions.csv").write_text(table)
        summary["conditions_csv"] = str(out / "conditions.csv")
    return {**summary, "table": rows}


def cmd_ledger(args: argparse.Namespace) -> int:
    from db import open_ledger

    if args.ledger is None:
        raise ConfigError("the ledger subcommand needs --ledger PATH")
    ledger = open_ledger(args.ledger)
    try:
        runs = ledger.list_runs(config_hash=args.config_hash, limit=args.limit)
    finally:
        ledger.close()
    print(_dumps({"runs": runs, "version": VERSION}))
    return 0


_HANDLERS: dict[str, Callable[[argparse.Namespace, RunConfig], dict[str, Any]]] = {
    "simulate": cmd_simulate,
    "ruin": cmd_ruin,
    "penalty": cmd_penalty,
    "moments": cmd_moments,
    "check-conditions": cmd_check_conditions,
}


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------


def _run(args: argparse.Namespace, cfg: RunConfig, digest: str) -> tuple[int, dict[str, Any], list[dict[str, Any]]]:
    """Execute one subcommand; returns (exit code, summary, report rows)."""
    provenance = {"config_hash": digest, "seed": cfg.seed, "version": VERSION}
    if args.command == "converge":
        result, report = cmd_converge(args, cfg, digest)
        print(_dumps({"command": args.command, "defaults_applied": cfg.defaults_applied, "result": result, **provenance}))
        code = 0 if report.passed else 2
        return code, {"verdict": report.verdict, "experiment": report.experiment}, result["rows"]
    result = _HANDLERS[args.command](args, cfg)
    print(_dumps({
        "command": args.command,
        "defaults_applied": cfg.defaults_applied,
        "result": result,
        **provenance,
    }))
    return 0, result, []


def _report_error(exc: RuinLabError, provenance: dict[str, Any]) -> None:
    payload: dict[str, Any] = {"error": type(exc).__name__, "message": str(exc), **provenance}
    if isinstance(exc, ConditionFailure):
        payload["table"] = exc.table
    if isinstance(exc, ConvergenceError):
        payload["diagnostics"] = exc.diagnostics
    print(_dumps(payload))
    logger.error("%s: %s", type(exc).__name__, exc)


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; those are validation errors here.
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )
    try:
        if args.command == "ledger":
            return cmd_ledger(args)
        cfg = load_config(args)
    except RuinLabError as exc:
        _report_error(exc, {"version": VERSION})
        return exc.exit_code
    digest = config_hash(cfg)
    provenance = {"config_hash": digest, "seed": cfg.seed, "version": VERSION}

    ledger = run = None
    if args.ledger is not None:
        from db import STATUS_FAILED, STATUS_OK, open_ledger

        ledger = open_ledger(args.ledger)
        run = ledger.record_run(args.command, digest, cfg.seed, VERSION)
        logger.info("ledger run %s recorded in %s", run["id"], args.ledger)
    try:
        code, summary, rows = _run(args, cfg, digest)
    except RuinLabError as exc:
        _report_error(exc, provenance)
        if ledger is not None:
            ledger.finish_run(run["id"], STATUS_FAILED, {"error": type(exc).__name__, "message": str(exc)})
            ledger.close()
        return exc.exit_code
    except Exception as exc:
        if ledger is not None:
            ledger.finish_run(run["id"], STATUS_FAILED, {"error": type(exc).__name__, "message": str(exc)})
            ledger.close()
        raise
    if ledger is not None:
        if args.command == "converge":
            ledger.record_report(run["id"], args.experiment, summary["verdict"], rows)
        ledger.finish_run(run["id"], STATUS_OK if code == 0 else STATUS_FAILED, summary)
        ledger.close()
    return code


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
