"""Command-line front end: run, enumerate, trace, diff and fuzz."""

from __future__ import annotations

import argparse
import json
import os
import sys
from collections import Counter
from typing import Sequence, TextIO

from . import bigstep, differential, machine
from .bigstep import Budget, Derivation, Normal, Outcome, PriorityMode, Uncaught
from .store import EMPTY_SIGMAP, State
from .syntax import ParseError, Program, parse, render_command, undeclared_reads, well_formed

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_USAGE = 2
EXIT_UNCAUGHT = 3
EXIT_BUDGET = 4
EXIT_SCHEDULE = 5

_COLORS = {"normal": "32", "uncaught": "31", "budget-exceeded": "33"}


class CliError(Exception):
    def __init__(self, message: str, status: int):
        super().__init__(message)
        self.status = status


def _color_enabled() -> bool:
    return os.environ.get("SIGSEM_COLOR", "0") == "1"


def _paint(line: str) -> str:
    if not _color_enabled():
        return line
    code = _COLORS.get(line.split(" ", 1)[0])
    return f"\x1b[{code}m{line}\x1b[0m" if code else line


def _exit_for(o: Outcome) -> int:
    if isinstance(o, Normal):
        return EXIT_OK
    if isinstance(o, Uncaught):
        return EXIT_UNCAUGHT
    return EXIT_BUDGET


# -- input ------------------------------------------------------------------

def _read(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as e:
        raise CliError(f"{path}: {e.strerror}", EXIT_USAGE) from None


def load_program(path: str) -> Program:
    text = _read(path)
    try:
        program = parse(text)
    except ParseError as e:
        raise CliError(f"{path}:{e}", EXIT_USAGE) from None
    problems = [f"{path}: ill-formed: {v}" for v in well_formed(program)]
    problems += [f"{path}: undeclared variable: {x}" for x in undeclared_reads(program)]
    if problems:
        raise CliError("\n".join(problems), EXIT_USAGE)
    return program


def _schedule_lines(path: str) -> list[str]:
    lines = []
    for raw in _read(path).splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(line)
    return lines


def load_machine_schedule(path: str) -> list[machine.MachineChoice]:
    try:
        return [machine.parse_choice(line) for line in _schedule_lines(path)]
    except ValueError as e:
        raise CliError(f"{path}: {e}", EXIT_SCHEDULE) from None


def load_picks(path: str) -> list[int]:
    picks = []
    for line in _schedule_lines(path):
        for word in line.split():
            try:
                n = int(word)
            except ValueError:
                raise CliError(f"{path}: not a pick: {word!r}", EXIT_SCHEDULE) from None
            if n < 0:
                raise CliError(f"{path}: negative pick {n}", EXIT_SCHEDULE)
            picks.append(n)
    return picks


# -- output helpers ---------------------------------------------------------

def derivation_json(d: Derivation) -> dict:
    return {
        "rule": d.rule,
        "command": render_command(d.command),
        "state": dict(sorted(d.state.items())),
        "outcome": differential.outcome_json(d.outcome),
        "premises": [derivation_json(p) for p in d.premises],
    }


def _budget(args: argparse.Namespace) -> Budget:
    return Budget(handler_fuel=args.fuel, max_iters=args.iters)


def _mode(args: argparse.Namespace) -> PriorityMode:
    return PriorityMode(args.mode)


def _mutations(args: argparse.Namespace) -> frozenset[str]:
    return frozenset(args.mutation or ())


def _check_mode(args: argparse.Namespace) -> None:
    if args.semantics == "machine" and _mode(args) is PriorityMode.SIGNAL:
        raise CliError("mode unsupported for machine: signal-priority is big-step only",
                       EXIT_USAGE)


# -- subcommands ------------------------------------------------------------

def cmd_run(args: argparse.Namespace, out: TextIO, show_trace: bool = False) -> int:
    _check_mode(args)
    program = load_program(args.source)
    budget = _budget(args)
    if args.semantics == "machine":
        schedule = load_machine_schedule(args.schedule) if args.schedule else []
        try:
            result, trace = machine.run(program, schedule, budget, _mutations(args))
        except machine.InvalidChoice as e:
            raise CliError(f"invalid schedule: step {e.step_index}: "
                           f"{machine.render_choice(e.choice)} not enabled", EXIT_SCHEDULE) from None
        outcome = machine.result_outcome(result)
        if args.format == "json":
            doc = {"semantics": "machine", "outcome": differential.outcome_json(outcome),
                   "trace": [machine.config_json(c, i) for i, c in enumerate(trace)]}
            out.write(json.dumps(doc, sort_keys=True) + "\n")
        else:
            for i, c in enumerate(trace):
                out.write(machine.render_config(c, i) + "\n")
            out.write(_paint(bigstep.render_outcome(outcome)) + "\n")
        return _exit_for(outcome)

    picks = load_picks(args.schedule) if args.schedule else []
    try:
        outcome, d = bigstep.run_scheduled(EMPTY_SIGMAP, EMPTY_SIGMAP,
                                           State(program.initial_vars), program.command,
                                           budget, _mode(args), picks)
    except bigstep.ChoiceOutOfRange as e:
        raise CliError(f"invalid schedule: {e}", EXIT_SCHEDULE) from None
    if args.format == "json":
        doc = {"semantics": "bigstep", "mode": args.mode,
               "outcome": differential.outcome_json(outcome)}
        if show_trace:
            doc["derivation"] = derivation_json(d)
        out.write(json.dumps(doc, sort_keys=True) + "\n")
    else:
        if show_trace:
            out.write(bigstep.derivation_render(d) + "\n")
        out.write(_paint(bigstep.render_outcome(outcome)) + "\n")
    return _exit_for(outcome)


def cmd_enumerate(args: argparse.Namespace, out: TextIO) -> int:
    _check_mode(args)
    program = load_program(args.source)
    budget = _budget(args)
    if args.semantics == "machine":
        outcomes = machine.enumerate_machine(program, budget, _mutations(args))
    else:
        outcomes = bigstep.enumerate(EMPTY_SIGMAP, EMPTY_SIGMAP, State(program.initial_vars),
                                     program.command, budget, _mode(args))
    ordered = sorted(outcomes, key=bigstep.outcome_key)
    if args.format == "json":
        out.write(json.dumps([differential.outcome_json(o) for o in ordered]) + "\n")
    else:
        for o in ordered:
            out.write(_paint(bigstep.render_outcome(o)) + "\n")
    return EXIT_OK


def cmd_diff(args: argparse.Namespace, out: TextIO, err: TextIO) -> int:
    budget = _budget(args)
    if args.exhaustive is not None:
        try:
            programs = differential.exhaustive_corpus(args.exhaustive)
        except differential.CorpusTooLarge as e:
            raise CliError(str(e), EXIT_USAGE) from None
    else:
        params = differential.GenParams(max_depth=args.depth, seed=args.seed)
        programs = [differential.gen_program(params, i) for i in range(args.fuzz)]
    reports = differential.run_batch(programs, budget, _mutations(args), args.workers)
    for line in differential.reports_jsonl(reports):
        out.write(line + "\n")
    tally = Counter(r.verdict for r in reports)
    err.write(", ".join(f"{k}={tally[k]}" for k in sorted(tally)) + "\n")
    return EXIT_MISMATCH if any(r.is_mismatch for r in reports) else EXIT_OK


# -- argument parsing -------------------------------------------------------

def _nonneg(text: str) -> int:
    n = int(text)
    if n < 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative: {n}")
    return n


def _positive(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be positive: {n}")
    return n


def _budget_flags(p: argparse.ArgumentParser, iters: int) -> None:
    p.add_argument("--fuel", type=_nonneg, default=2, help="max handler runs (default 2)")
    p.add_argument("--iters", type=_nonneg, default=iters,
                   help=f"max unrollings per while loop (default {iters})")
    p.add_argument("--mutation", action="append", choices=sorted(machine.MUTATIONS),
                   help=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sigsem",
        description="Big-step and abstract-machine semantics for signals and exceptions.")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in [("run", "evaluate one schedule"),
                            ("trace", "like run, always showing the trace or derivation"),
                            ("enumerate", "list every reachable outcome")]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("source", help="program file, or - for stdin")
        p.add_argument("--semantics", choices=["bigstep", "machine"], default="bigstep")
        p.add_argument("--mode", choices=[m.value for m in PriorityMode],
                       default=PriorityMode.EXCEPTION.value)
        if name != "enumerate":
            p.add_argument("--schedule", help="schedule file (machine directives or picks)")
        p.add_argument("--format", choices=["text", "json"], default="text")
        _budget_flags(p, iters=8)

    p = sub.add_parser("diff", help="compare both semantics over a corpus (JSONL report)")
    corpus = p.add_mutually_exclusive_group(required=True)
    corpus.add_argument("--exhaustive", type=_positive, metavar="SIZE",
                        help="every program with at most SIZE nodes")
    corpus.add_argument("--fuzz", type=_nonneg, metavar="COUNT", help="COUNT random programs")
    p.add_argument("--seed", type=_nonneg, default=42)
    p.add_argument("--depth", type=_positive, default=4, help="random program depth")
    p.add_argument("--workers", type=_positive, default=1)
    _budget_flags(p, iters=2)

    p = sub.add_parser("fuzz", help="diff over random programs")
    p.add_argument("fuzz", type=_nonneg, nargs="?", default=500, metavar="COUNT")
    p.add_argument("--seed", type=_nonneg, default=42)
    p.add_argument("--depth", type=_positive, default=4)
    p.add_argument("--workers", type=_positive, default=1)
    _budget_flags(p, iters=2)
    p.set_defaults(exhaustive=None)
    return parser


def main(argv: Sequence[str] | None = None, out: TextIO | None = None,
         err: TextIO | None = None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        if args.command == "run":
            return cmd_run(args, out, show_trace=False)
        if args.command == "trace":
            return cmd_run(args, out, show_trace=True)
        if args.command == "enumerate":
            return cmd_enumerate(args, out)
        return cmd_diff(args, out, err)
    except CliError as e:
        err.write(f"sigsem: {e}\n")
        return e.status
