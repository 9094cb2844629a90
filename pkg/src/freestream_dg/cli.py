"""Command-line entry point.

    freestream-dg <command> [--config FILE] [--KEY VALUE ...] [KEY=VALUE ...]

Exit codes: 0 success, 1 check failure, 2 invalid config, 3 solver blow-up.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import fields, replace

from . import harness
from .solver import SolverBlowUp

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_BLOWUP = 0, 1, 2, 3
COMMANDS = ("check-metrics", "watertight", "appendix-demo", "run-freestream", "sweep")


class _ArgError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgError(message)


def build_parser():
    p = _Parser(prog="freestream-dg", description="Free-stream preservation experiments "
                "for a DGSEM on curved non-conforming hexahedral meshes.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("assignments", nargs="*", metavar="KEY=VALUE",
                   help="config overrides, e.g. N=4 Ng=2 strategy=curl_form")
    p.add_argument("--config", help="flat 'key = value' config file")
    p.add_argument("--expect-fail", action="store_true",
                   help="treat failing checks as an expected demonstration (exit 0)")
    p.add_argument("-v", "--verbose", action="store_true")
    for f in fields(harness.RunConfig):
        if f.name != "command":
            p.add_argument(f"--{f.name}", dest=f"opt_{f.name}", metavar="VALUE")
    return p


def _config_from_args(args):
    text = None
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    overrides = []
    for f in fields(harness.RunConfig):
        raw = getattr(args, f"opt_{f.name}", None)
        if raw is not None:
            overrides.append((f.name, raw, f"flag --{f.name}"))
    for item in args.assignments:
        if "=" not in item:
            raise harness.ConfigError(f"argument {item!r}: expected KEY=VALUE")
        key, raw = item.split("=", 1)
        overrides.append((key.strip(), raw, f"argument {item!r}"))
    cfg = harness.parse_config(text, overrides)
    return replace(cfg, command=args.command)


def _open_out(path):
    return open(path, "w", encoding="utf-8", newline="") if path else sys.stdout


def _print_results(results):
    for r in results:
        print(r.line())


def _status(results, expect_fail):
    failed = [r for r in results if not r.passed]
    if failed and not expect_fail:
        return EXIT_CHECK
    return EXIT_OK


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        cfg = _config_from_args(args)
    except (_ArgError, harness.ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    cmd = cfg.command
    if cmd == "watertight":
        results = harness.check_watertight(cfg)
        _print_results(results)
        return _status(results, args.expect_fail)
    if cmd == "appendix-demo":
        results = harness.appendix_demo(cfg.N, cfg.seed)
        _print_results(results)
        return _status(results, args.expect_fail)
    if cmd == "check-metrics":
        results, rows = harness.check_metrics(cfg, expect_fail=args.expect_fail)
        results += harness.flux_difference_identity(cfg)
        out = _open_out(cfg.output)
        w = csv.writer(out, lineterminator="\n")
        w.writerow(harness.CHECK_HEADER)
        for kind, idx, st, res in rows:
            w.writerow((kind, idx, st, repr(res)))
        if out is not sys.stdout:
            out.close()
        for r in results:
            print(r.line(), file=sys.stderr if cfg.output is None else sys.stdout)
        return _status(results, args.expect_fail)
    if cmd == "run-freestream":
        try:
            rep = harness.run_freestream(cfg)
        except SolverBlowUp as exc:
            print(f"solver blow-up: {exc}", file=sys.stderr)
            return EXIT_BLOWUP
        sys.stdout.write(harness.format_report(rep))
        if cfg.output:
            with _open_out(cfg.output) as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(harness.SWEEP_HEADER)
                w.writerow(rep.csv_row())
        return EXIT_OK
    if cmd == "sweep":
        out = _open_out(cfg.output)
        reports = harness.run_sweep(cfg, out)
        if out is not sys.stdout:
            out.close()
        for r in reports:
            if r.note:
                print(f"run N={r.N} Ng={r.Ng} {r.strategy} {r.node_kind}: {r.note}", file=sys.stderr)
        return EXIT_OK
    raise AssertionError(cmd)


if __name__ == "__main__":
    sys.exit(main())
