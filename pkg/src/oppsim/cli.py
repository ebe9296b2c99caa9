"""Command line front end.

Subcommands
    simulate     run the configured scenario, write requests.csv + summary.json
    compare      multi-policy comparison with win fractions, losses, and the
                 best-of-competitors reference bar; adds bias_report.json
    rank-eval    re-run the scenario forcing the model's rank-1..k choices
    validate     statistical gates for every closed-form quantity
    trace-stats  contact/gap statistics of a trace file or synthetic spec

Exit codes: 0 success, 1 validation gate failure, 2 bad configuration or
arguments.  Experiment commands read a JSON configuration file; a few fields
can be overridden from the command line for sweeps.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import __version__
from .experiments import (
    ExperimentConfig,
    bias_report,
    build_trace,
    rank_summary_from_rows,
    rows_to_csv,
    run_matrix,
    run_rank_matrix,
    summary_from_rows,
)
from .policies import PolicyKind
from .traceio import parse_trace, trace_stats
from .validate import run_validation_grid

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIG = 2


class ConfigError(Exception):
    pass


def _load_config(path: str, args) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    try:
        cfg = ExperimentConfig.from_dict(data)
        overrides = {}
        if getattr(args, "seed", None) is not None:
            overrides["seeds"] = tuple(args.seed)
        if getattr(args, "policy", None) is not None:
            overrides["policies"] = tuple(PolicyKind(p) for p in args.policy)
        if getattr(args, "io_size", None) is not None:
            overrides["io_size_bytes"] = args.io_size
        if getattr(args, "cpu_max", None) is not None:
            overrides["cpu_m_max"] = args.cpu_max
        if overrides:
            cfg = dataclasses.replace(cfg, **overrides)
        return cfg
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def _write_json(path: str, payload: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(args) -> str:
    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    return out


def _progress(args):
    if args.quiet:
        return None
    return lambda msg: print(f"  running {msg}", file=sys.stderr)


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config, args)
    out = _out_dir(args)
    rows = run_matrix(cfg, progress=_progress(args))
    with open(os.path.join(out, "requests.csv"), "w", encoding="utf-8") as fh:
        rows_to_csv(rows, fh)
    summary = summary_from_rows(rows, cfg)
    summary["config"] = cfg.to_dict()
    _write_json(os.path.join(out, "summary.json"), summary)
    if not args.quiet:
        for pol, block in summary["policies"].items():
            mean = block["mean_provisioning_time"]
            hw = block["ci95_halfwidth"]
            ci = f" +- {hw:.1f}" if hw is not None else ""
            print(f"{pol:>6}: mean provisioning time "
                  f"{mean:.1f}{ci} s  ({block['n_completed']} completed)")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load_config(args.config, args)
    if len(cfg.policies) < 2:
        raise ConfigError("compare needs at least two policies")
    out = _out_dir(args)
    rows = run_matrix(cfg, progress=_progress(args))
    with open(os.path.join(out, "requests.csv"), "w", encoding="utf-8") as fh:
        rows_to_csv(rows, fh)
    summary = summary_from_rows(rows, cfg)
    summary["config"] = cfg.to_dict()
    _write_json(os.path.join(out, "summary.json"), summary)
    _write_json(os.path.join(out, "bias_report.json"), bias_report(rows))
    if not args.quiet:
        print("win fraction per policy (ties to the first listed):")
        for pol, pct in summary["pct_best"].items():
            shown = "n/a" if pct is None else f"{pct:5.1f}%"
            loss = summary["mean_loss_vs_best"].get(pol)
            loss_s = "n/a" if loss is None else f"{loss:.1f} s"
            print(f"{pol:>6}: {shown}  mean loss vs best {loss_s}")
        oracle = summary.get("oracle_best")
        if oracle is not None and oracle["mean_loss_vs_best"] is not None:
            names = "+".join(oracle["policies"])
            print(f"best-of({names}): mean loss vs best "
                  f"{oracle['mean_loss_vs_best']:.1f} s")
    return EXIT_OK


def cmd_rank_eval(args) -> int:
    cfg = _load_config(args.config, args)
    out = _out_dir(args)
    rows = run_rank_matrix(cfg, top_k=args.top_k, progress=_progress(args))
    with open(os.path.join(out, "requests.csv"), "w", encoding="utf-8") as fh:
        rows_to_csv(rows, fh)
    summary = rank_summary_from_rows(rows, cfg, top_k=args.top_k)
    summary["config"] = cfg.to_dict()
    _write_json(os.path.join(out, "summary.json"), summary)
    if not args.quiet:
        fracs = summary["rank_fractions"]
        for pos, frac in enumerate(fracs):
            shown = "n/a" if frac is None else f"{100.0 * frac:5.1f}%"
            print(f"rank {pos + 1}: won {shown} of requests")
    return EXIT_OK


def cmd_validate(args) -> int:
    overrides = None
    if args.corrupt:
        # self-check hook: scale one closed form and expect the gate to trip
        name, _, factor = args.corrupt.partition(":")
        scale = float(factor) if factor else 1.05
        from .validate import default_model_functions

        forms = default_model_functions()
        if name not in forms:
            raise ConfigError(
                f"unknown quantity {name!r}; choose from {sorted(forms)}")
        base = forms[name]
        overrides = {name: (lambda *a, _f=base, _s=scale: _f(*a) * _s)}
    progress = None if args.quiet else (
        lambda done, total: print(
            f"  grid point {done}/{total}", file=sys.stderr))
    report = run_validation_grid(
        n_points=args.points,
        n_trials=args.trials,
        seed=args.seed,
        include_approx=not args.exact_only,
        model_overrides=overrides,
        progress=progress,
    )
    for line in report.summary_lines():
        print(line)
    if args.json_out:
        _write_json(args.json_out, report.to_dict())
    return EXIT_OK if report.ok else EXIT_VALIDATION


def cmd_trace_stats(args) -> int:
    if args.trace:
        try:
            with open(args.trace, encoding="utf-8") as fh:
                result = parse_trace(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read trace: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"trace parse failure: {exc}") from exc
        intervals = list(result)
        parse_info = result.report()
    else:
        ns = argparse.Namespace(seed=None, policy=None, io_size=None,
                                cpu_max=None)
        cfg = _load_config(args.config, ns)
        seed = args.seed if args.seed is not None else cfg.seeds[0]
        intervals = build_trace(cfg, seed)
        parse_info = None
    stats = trace_stats(intervals, horizon=args.horizon)
    payload = {"parse": parse_info, "stats": stats} if parse_info else {
        "stats": stats}
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def _add_common_experiment_args(p: argparse.ArgumentParser):
    p.add_argument("config", help="JSON experiment configuration file")
    p.add_argument("--out-dir", default="results",
                   help="directory for requests.csv and report JSON")
    p.add_argument("--seed", type=int, action="append",
                   help="replace the configured seed list (repeatable)")
    p.add_argument("--policy", action="append",
                   choices=[p.value for p in PolicyKind],
                   help="replace the configured policy list (repeatable)")
    p.add_argument("--io-size", type=float,
                   help="override io size in bytes")
    p.add_argument("--cpu-max", type=int,
                   help="override the CPU contention ceiling")
    p.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oppsim",
        description="opportunistic service provisioning: simulation, "
                    "policy comparison, and closed-form validation")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one scenario")
    _add_common_experiment_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="compare the configured policies")
    _add_common_experiment_args(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("rank-eval",
                       help="evaluate the model's plan ranking depth")
    _add_common_experiment_args(p)
    p.add_argument("--top-k", type=int, default=5,
                   help="ranking depth to evaluate (default 5)")
    p.set_defaults(func=cmd_rank_eval)

    p = sub.add_parser("validate",
                       help="Monte Carlo gates for the closed forms")
    p.add_argument("--points", type=int, default=200,
                   help="random parameter points per quantity")
    p.add_argument("--trials", type=int, default=10 ** 6,
                   help="Monte Carlo trials per point")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exact-only", action="store_true",
                   help="skip the slower approximation sweeps")
    p.add_argument("--corrupt", metavar="NAME[:FACTOR]",
                   help="self-check: scale one closed form and require the "
                        "gates to catch it")
    p.add_argument("--json-out", help="also write the report as JSON")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("trace-stats",
                       help="contact statistics of a trace or synthetic spec")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--trace", help="contact trace CSV file")
    src.add_argument("--config",
                     help="experiment config with a synthetic trace spec")
    p.add_argument("--seed", type=int,
                   help="replication seed for a synthetic trace")
    p.add_argument("--horizon", type=float,
                   help="observation horizon override in seconds")
    p.add_argument("--json-out", help="also write the statistics as JSON")
    p.set_defaults(func=cmd_trace_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
