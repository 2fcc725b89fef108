"""Command line: ``polyaurn analyze|simulate|verify|examples``.

Exit codes: 0 success, 1 verification failure, 2 invalid configuration,
3 tenability failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import catalogue
from .config import ConfigError, ExperimentConfig, dump_config, load_config
from .experiment import analyze, format_table, simulate, verify_rows, write_simulation, write_verify_csv
from .montecarlo import THREADS_ENV, default_threads

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_CONFIG = 2
EXIT_TENABILITY = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="polyaurn", description="Analyse and simulate multi-drawing Polya urns.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, helptext in (
        ("analyze", "zeros, stability and limit-theorem parameters"),
        ("simulate", "Monte Carlo ensemble written as CSV"),
        ("verify", "compare predictions with a Monte Carlo ensemble"),
    ):
        s = sub.add_parser(name, help=helptext)
        src = s.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", type=Path, help="experiment INI file")
        src.add_argument("--example", help="built-in example name")
        s.add_argument("--seed", type=int)
        s.add_argument("--reps", type=int)
        s.add_argument("--steps", type=int)
        s.add_argument("--out", type=Path)
        s.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or CPU count)")
    e = sub.add_parser("examples", help="print a built-in configuration, or 'list'")
    e.add_argument("name", nargs="?", default="list")
    e.add_argument("--out", type=Path, help="write the configuration here instead of stdout")
    return p


def _load(args) -> ExperimentConfig:
    if args.config is not None:
        cfg = load_config(args.config)
    else:
        try:
            cfg = catalogue.get(args.example)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None
    return cfg.with_overrides(seed=args.seed, n_reps=args.reps, n_steps=args.steps, output_dir=args.out)


def _threads(args) -> int:
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError(f"--threads: must be >= 1, got {args.threads}")
        return args.threads
    try:
        return default_threads()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _tenability_gate(an) -> int | None:
    if an.tenability.tenable:
        return None
    for v in an.tenability.violations():
        print(f"not tenable: {v}", file=sys.stderr)
    return EXIT_TENABILITY


def _run_simulation(cfg, args):
    res = simulate(cfg, threads=_threads(args))
    out = Path(cfg.output_dir)
    write_simulation(cfg, res, out)
    for f in res.failures:
        print(f"tenability violation: {f}", file=sys.stderr)
    return res, out


def cmd_analyze(args) -> int:
    cfg = _load(args)
    an = analyze(cfg)
    text = an.to_text()
    print(text, end="")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "analysis.ini").write_text(text)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args)
    an = analyze(cfg)
    gate = _tenability_gate(an)
    if gate is not None:
        return gate
    res, out = _run_simulation(cfg, args)
    print(f"wrote {out / 'terminal.csv'}, {out / 'summary.csv'}, {out / 'metadata.ini'}")
    return EXIT_TENABILITY if res.failures else EXIT_OK


def cmd_verify(args) -> int:
    cfg = _load(args)
    an = analyze(cfg)
    gate = _tenability_gate(an)
    if gate is not None:
        return gate
    res, out = _run_simulation(cfg, args)
    if res.failures:
        return EXIT_TENABILITY
    rows = verify_rows(an, res)
    (out / "analysis.ini").write_text(an.to_text())
    write_verify_csv(out / "verify.csv", rows)
    print(format_table(rows))
    return EXIT_VERIFY if any(r.verdict == "fail" for r in rows) else EXIT_OK


def cmd_examples(args) -> int:
    if args.name == "list":
        for name, desc in catalogue.describe():
            print(f"{name:6s} {desc}")
        return EXIT_OK
    try:
        cfg = catalogue.get(args.name)
    except KeyError as exc:
        print(exc.args[0], file=sys.stderr)
        return EXIT_CONFIG
    text = dump_config(cfg)
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text)
    else:
        print(text, end="")
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "verify": cmd_verify, "examples": cmd_examples}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
