"""Program generators, big-step vs machine comparison, and invariant audits."""

from __future__ import annotations

import json
import random
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator

from . import bigstep
from .bigstep import (
    BUDGET_EXCEEDED, Budget, BudgetExceeded, Derivation, Normal, Outcome, PriorityMode,
    Uncaught, outcome_key,
)
from .machine import (
    Config, FireOnce, FirePersistent, OnceTag, PerTag, PopUpd, Upd, enumerate_machine,
    initial_config, render_choice, result_outcome, search, step_bound, successors,
)
from .store import EMPTY_SIGMAP, BitVector, State
from .syntax import (
    Add, Assign, Command, Expr, Lit, Program, Seq, SigBind, SigBindOnce, SigBlock,
    SigBlockOnce, Skip, Throw, TryCatch, Var, Violation, While, render, well_formed,
)

__all__ = [
    "GenParams", "DiffReport", "CorpusTooLarge", "gen_program", "exhaustive_corpus",
    "compare", "audit_invariants", "audit_machine", "audit_bigstep", "audit_derivation",
    "report_json", "outcome_json", "run_batch", "reports_jsonl", "fuzz_corpus",
    "DEFAULT_FUZZ", "CORPUS_POOLS", "ProgramCheck", "check_program", "detect_mutation",
]


@dataclass(frozen=True)
class GenParams:
    max_depth: int = 4
    num_vars: int = 2
    num_signals_per_kind: int = 1
    num_exns: int = 2
    literal_range: tuple[int, int] = (0, 2)
    seed: int = 42

    @property
    def variables(self) -> list[str]:
        return ["x", "y", "w", "v"][: self.num_vars] if self.num_vars <= 4 else \
            [f"x{i}" for i in range(1, self.num_vars + 1)]

    @property
    def persistent(self) -> list[str]:
        return [f"p{i}" for i in range(1, self.num_signals_per_kind + 1)]

    @property
    def oneshot(self) -> list[str]:
        return [f"o{i}" for i in range(1, self.num_signals_per_kind + 1)]

    @property
    def exns(self) -> list[str]:
        return [f"e{i}" for i in range(1, self.num_exns + 1)]


DEFAULT_FUZZ = GenParams()

# pools for the exhaustive corpus: one name of each kind, literals {0, 1}
CORPUS_POOLS = GenParams(max_depth=1, num_vars=1, num_signals_per_kind=1, num_exns=1,
                         literal_range=(0, 1), seed=0)


# -- random generation ------------------------------------------------------

class _Gen:
    def __init__(self, params: GenParams, rng: random.Random):
        self.p = params
        self.rng = rng

    def atom(self) -> Expr:
        lo, hi = self.p.literal_range
        if self.rng.random() < 0.5:
            return Var(self.rng.choice(self.p.variables))
        return Lit(self.rng.randint(lo, hi))

    def expr(self) -> Expr:
        if self.rng.random() < 0.4:
            return Add(self.atom(), self.atom())
        return self.atom()

    def cond(self) -> Expr:
        e = self.expr()
        if isinstance(e, Lit) and e.value != 0:
            return Var(self.rng.choice(self.p.variables))
        return e

    def leaf(self, catchable: tuple[str, ...]) -> Command:
        kinds = ["skip", "assign"] + (["throw"] if self.p.exns else [])
        kind = self.rng.choice(kinds)
        if kind == "throw" and not catchable and self.rng.random() < 0.9:
            kind = self.rng.choice(["skip", "assign"])
        if kind == "skip":
            return Skip()
        if kind == "assign":
            return Assign(self.rng.choice(self.p.variables), self.expr())
        if catchable and self.rng.random() < 0.75:
            return Throw(self.rng.choice(catchable))
        return Throw(self.rng.choice(self.p.exns))

    def command(self, depth: int, catchable: tuple[str, ...] = ()) -> Command:
        if depth <= 1:
            return self.leaf(catchable)
        kinds = ["skip", "assign", "seq", "while"]
        if self.p.exns:
            kinds += ["throw", "try"]
        if self.p.num_signals_per_kind:
            kinds += ["bind", "bindonce", "block", "blockonce"]
        kind = self.rng.choice(kinds)
        d = depth - 1
        if kind in ("skip", "assign", "throw"):
            return self.leaf(catchable)
        if kind == "seq":
            return Seq(self.command(d, catchable), self.command(d, catchable))
        if kind == "while":
            return While(self.cond(), self.command(d, catchable))
        if kind == "try":
            e = self.rng.choice(self.p.exns)
            body = self.command(d, catchable + (e,))
            return TryCatch(body, e, self.command(d, catchable))
        if kind in ("bind", "block"):
            z = self.rng.choice(self.p.persistent)
        else:
            z = self.rng.choice(self.p.oneshot)
        if kind == "bind":
            return SigBind(z, self.command(d, catchable), self.command(d, catchable))
        if kind == "bindonce":
            return SigBindOnce(z, self.command(d, catchable), self.command(d, catchable))
        if kind == "block":
            return SigBlock(z, self.command(d, catchable))
        return SigBlockOnce(z, self.command(d, catchable))


def gen_program(params: GenParams, index: int) -> Program:
    """The ``index``-th pseudo-random program for ``params`` (deterministic)."""
    rng = random.Random(f"{params.seed}:{index}")
    cmd = _Gen(params, rng).command(params.max_depth)
    return Program(cmd, tuple((v, 0) for v in params.variables))


def fuzz_corpus(count: int, seed: int = 42, params: GenParams = DEFAULT_FUZZ) -> list[Program]:
    p = GenParams(params.max_depth, params.num_vars, params.num_signals_per_kind,
                  params.num_exns, params.literal_range, seed)
    return [gen_program(p, i) for i in range(count)]


# -- exhaustive corpus ------------------------------------------------------

class CorpusTooLarge(ValueError):
    pass


MAX_CORPUS_SIZE = 7


@lru_cache(maxsize=None)
def _exprs(size: int, var: str, lits: tuple[int, ...]) -> tuple[Expr, ...]:
    if size == 1:
        return (Var(var),) + tuple(Lit(v) for v in lits)
    out = []
    for a in range(1, size - 1):
        for left in _exprs(a, var, lits):
            for right in _exprs(size - 1 - a, var, lits):
                out.append(Add(left, right))
    return tuple(out)


@lru_cache(maxsize=None)
def _cmds(size: int, pools: GenParams) -> tuple[Command, ...]:
    var, = pools.variables
    per, = pools.persistent
    once, = pools.oneshot
    exn, = pools.exns
    lits = tuple(range(pools.literal_range[0], pools.literal_range[1] + 1))
    out: list[Command] = []
    if size == 1:
        out += [Skip(), Throw(exn)]
    out += [Assign(var, e) for e in _exprs(size, var, lits)]
    for a in range(1, size):
        for cond in _exprs(a, var, lits):
            out += [While(cond, body) for body in _cmds(size - a, pools)]
    for a in range(1, size - 1):
        for left in _cmds(a, pools):
            for right in _cmds(size - 1 - a, pools):
                out += [Seq(left, right), TryCatch(left, exn, right),
                        SigBind(per, left, right), SigBindOnce(once, left, right)]
    if size >= 2:
        for body in _cmds(size - 1, pools):
            out += [SigBlock(per, body), SigBlockOnce(once, body)]
    return tuple(out)


def exhaustive_corpus(max_ast_size: int, pools: GenParams = CORPUS_POOLS) -> list[Program]:
    """Every command of at most ``max_ast_size`` nodes over one name of each kind."""
    if max_ast_size > MAX_CORPUS_SIZE:
        raise CorpusTooLarge(f"max_ast_size {max_ast_size} exceeds {MAX_CORPUS_SIZE}")
    init = tuple((v, 0) for v in pools.variables)
    progs = []
    for n in range(1, max_ast_size + 1):
        progs += [Program(c, init) for c in _cmds(n, pools) if not well_formed(c)]
    return progs


# -- comparison -------------------------------------------------------------

@dataclass(frozen=True)
class DiffReport:
    program: Program
    bigstep_outcomes: frozenset[Outcome]
    machine_outcomes: frozenset[Outcome]

    @property
    def missing_in_machine(self) -> frozenset[Outcome]:
        return _observable(self.bigstep_outcomes) - _observable(self.machine_outcomes)

    @property
    def missing_in_bigstep(self) -> frozenset[Outcome]:
        return _observable(self.machine_outcomes) - _observable(self.bigstep_outcomes)

    @property
    def verdict(self) -> str:
        # budgets are counted differently on the two sides, so any exhaustion
        # makes the sets incomparable
        if any(isinstance(o, BudgetExceeded)
               for o in self.bigstep_outcomes | self.machine_outcomes):
            return "BudgetIncomparable"
        if self.missing_in_machine:
            return "MissingInMachine"
        if self.missing_in_bigstep:
            return "MissingInBigstep"
        return "Equal"

    @property
    def is_mismatch(self) -> bool:
        return self.verdict.startswith("Missing")


def _observable(outcomes: Iterable[Outcome]) -> frozenset[Outcome]:
    return frozenset(o for o in outcomes if not isinstance(o, BudgetExceeded))


def compare(program: Program, budget: Budget = Budget(),
            mutations: frozenset[str] = frozenset()) -> DiffReport:
    big = bigstep.enumerate(EMPTY_SIGMAP, EMPTY_SIGMAP, State(program.initial_vars),
                            program.command, budget, PriorityMode.EXCEPTION)
    mach = enumerate_machine(program, budget, mutations)
    return DiffReport(program, big, mach)


def outcome_json(o: Outcome) -> dict:
    if isinstance(o, Normal):
        return {"kind": "normal", "state": dict(sorted(o.state.items()))}
    if isinstance(o, Uncaught):
        return {"kind": "uncaught", "exn": o.exn, "state": dict(sorted(o.state.items()))}
    return {"kind": "budget-exceeded"}


def report_json(report: DiffReport) -> dict:
    d = {
        "program": render(report.program),
        "verdict": report.verdict,
        "bigstep_count": len(report.bigstep_outcomes),
        "machine_count": len(report.machine_outcomes),
    }
    if report.is_mismatch:
        if report.missing_in_machine:
            o = min(report.missing_in_machine, key=outcome_key)
            d["witness"] = {**outcome_json(o), "missing_in": "machine"}
        else:
            o = min(report.missing_in_bigstep, key=outcome_key)
            d["witness"] = {**outcome_json(o), "missing_in": "bigstep"}
    return d


def _compare_job(args) -> DiffReport:
    program, budget, mutations = args
    return compare(program, budget, mutations)


def run_batch(programs: Iterable[Program], budget: Budget = Budget(),
              mutations: frozenset[str] = frozenset(), workers: int = 1) -> list[DiffReport]:
    """Compare every program; reports are sorted by rendered program text."""
    jobs = [(p, budget, mutations) for p in programs]
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as pool:
            reports = list(pool.map(_compare_job, jobs, chunksize=64))
    else:
        reports = [_compare_job(j) for j in jobs]
    return sorted(reports, key=lambda r: render(r.program))


def reports_jsonl(reports: Iterable[DiffReport]) -> Iterator[str]:
    for r in reports:
        yield json.dumps(report_json(r), sort_keys=True)


# -- audits -----------------------------------------------------------------

def _count_popupd(config: Config) -> int:
    n = sum(isinstance(f, PopUpd) for f in config.k)
    return n + isinstance(config.current, PopUpd)


def _popupd_uids(config: Config) -> set[int]:
    uids = {f.uid for f in config.k if isinstance(f, PopUpd)}
    if isinstance(config.current, PopUpd):
        uids.add(config.current.uid)
    return uids


def _fired_flags(old_j, old_flags, new_j) -> tuple[bool, ...]:
    # carry "already fired" marks across a step by tag identity
    marks = {t.uid: f for t, f in zip(old_j, old_flags)}
    return tuple(marks.get(t.uid, False) for t in new_j)


def audit_machine(program: Program, budget: Budget = Budget(),
                  mutations: frozenset[str] = frozenset()) -> list[Violation]:
    """Check every reachable machine transition against the stack and masking invariants."""
    return _audited_search(program, budget, mutations)[0]


def _audited_search(program: Program, budget: Budget, mutations: frozenset[str]
                    ) -> tuple[list[Violation], frozenset[Outcome]]:
    """Violations and outcome set from one exploration of the machine.

    Nodes carry, next to the configuration and fuel, one flag per tag saying
    whether that tag's handler already fired; this is what lets a one-shot
    refiring be seen even when the machine forgot to mark the tag used.
    """
    found: dict[tuple[str, str], tuple] = {}
    zero = BitVector.zero()

    def note(kind: str, name: str, node, choice) -> None:
        found.setdefault((kind, name), (node, choice))

    def expand(node, uid):
        config, fuel, flags = node
        if len(config.j) != _count_popupd(config):
            note("StackImbalance", "", node, None)
        out = []
        for choice, child in successors(config, fuel, uid, mutations):
            if not isinstance(child, tuple):
                out.append((choice, child))
                continue
            after = child[0]
            if isinstance(choice, (FirePersistent, FireOnce)):
                i = next(i for i, t in enumerate(config.j)
                         if isinstance(t, (PerTag, OnceTag)) and t.sig == choice.sig)
                tag = config.j[i]
                if tag.uid not in _popupd_uids(config):
                    note("ScopeEscape", choice.sig, node, choice)
                if isinstance(choice, FireOnce) and flags[i]:
                    note("OneShotRefired", choice.sig, node, choice)
                if after.beta != zero:
                    note("HandlerUnmasked", choice.sig, node, choice)
                flags2 = _fired_flags(config.j, flags[:i] + (True,) + flags[i + 1:], after.j)
            else:
                cur = config.current
                if isinstance(cur, (PopUpd, Upd)) and after.beta != cur.beta:
                    note("BetaNotRestored", "", node, choice)
                flags2 = _fired_flags(config.j, flags, after.j)
            out.append((choice, (after, child[1], flags2)))
        return out

    ex = search((initial_config(program), budget.handler_fuel, ()), expand,
                step_bound(program, budget))
    violations = []
    for (kind, name), (node, choice) in sorted(found.items()):
        sched = ex.path(node) + ([choice] if choice is not None else [])
        violations.append(Violation(kind, name, "; ".join(render_choice(c) for c in sched)))
    outcomes = {result_outcome(r) for r in ex.results}
    if ex.diverges:
        outcomes.add(BUDGET_EXCEEDED)
    return violations, frozenset(outcomes)


def audit_derivation(d: Derivation, mode: PriorityMode = PriorityMode.EXCEPTION,
                     witness: str = "") -> list[Violation]:
    """Check a big-step derivation for scope, isolation, linearity and priority."""
    out: list[Violation] = []
    uses: Counter = Counter()
    fresh = iter(range(1, 1 << 30))

    def go(node: Derivation, per: frozenset[str], once: dict[str, int]) -> None:
        base = node.rule.split("/")[0]
        c = node.command
        if base in bigstep.HANDLER_RULES:
            z = node.fired
            after_rule = base in ("PerShotHandl", "OneShotHandl")
            body_i, handler_i = (0, 1) if after_rule else (1, 0)
            if base.startswith("Per"):
                if z not in per:
                    out.append(Violation("ScopeEscape", z, witness))
            else:
                binder = once.get(z)
                if binder is None:
                    out.append(Violation("ScopeEscape", z, witness))
                else:
                    uses[binder] += 1
                    if uses[binder] == 2:
                        out.append(Violation("OneShotReused", z, witness))
            if after_rule and mode is PriorityMode.EXCEPTION \
                    and not isinstance(node.premises[0].outcome, Normal):
                out.append(Violation("PriorityViolation", z, witness))
            if handler_i < len(node.premises):
                h = node.premises[handler_i]
                if h.s_bind or h.o_bind:
                    out.append(Violation("HandlerNotIsolated", z, witness))
                go(h, frozenset(), {})
            if body_i < len(node.premises):
                go(node.premises[body_i], per, once)
            return
        if base == "PerSigBind":
            per = per | {c.sig}
        elif base == "PerSigBlock":
            per = per - {c.sig}
        elif base == "OneSigBind":
            once = {**once, c.sig: next(fresh)}
        elif base == "OneSigBlock":
            once = {k: v for k, v in once.items() if k != c.sig}
        for p in node.premises:
            go(p, per, once)

    go(d, frozenset(), {})
    return out


def audit_bigstep(program: Program, budget: Budget = Budget(),
                  mode: PriorityMode = PriorityMode.EXCEPTION) -> list[Violation]:
    found: list[Violation] = []
    s0 = State(program.initial_vars)
    for picks, _, d in bigstep.iter_derivations(EMPTY_SIGMAP, EMPTY_SIGMAP, s0,
                                                program.command, budget, mode):
        found += audit_derivation(d, mode, f"picks {list(picks)}")
    return found


def audit_invariants(program: Program, budget: Budget = Budget(),
                     mutations: frozenset[str] = frozenset(),
                     mode: PriorityMode = PriorityMode.EXCEPTION) -> list[Violation]:
    """Audit every reachable machine transition and every big-step derivation."""
    return audit_machine(program, budget, mutations) + audit_bigstep(program, budget, mode)


@dataclass(frozen=True)
class ProgramCheck:
    """Everything the desk-scale sweep asks of one program."""

    report: DiffReport
    split_agrees: bool
    violations: tuple[Violation, ...]


def check_program(program: Program, budget: Budget = Budget()) -> ProgramCheck:
    """Compare, cross-check the split oracle and audit, sharing one machine exploration."""
    s0 = State(program.initial_vars)
    big = bigstep.enumerate(EMPTY_SIGMAP, EMPTY_SIGMAP, s0, program.command, budget,
                            PriorityMode.EXCEPTION)
    split = bigstep.enumerate_split_oracle(EMPTY_SIGMAP, EMPTY_SIGMAP, s0, program.command,
                                           budget, PriorityMode.EXCEPTION)
    violations, mach = _audited_search(program, budget, frozenset())
    violations += audit_bigstep(program, budget)
    return ProgramCheck(DiffReport(program, big, mach), big == split, tuple(violations))


def detect_mutation(mutation: str, programs: Iterable[Program], budget: Budget = Budget()
                    ) -> tuple[Program, str] | None:
    """First program on which the mutated machine fails an audit or the comparison.

    Returns the program and a short description of the failure, or ``None``.
    """
    muts = frozenset({mutation})
    for p in programs:
        violations = audit_machine(p, budget, muts)
        if violations:
            return p, str(violations[0])
        report = compare(p, budget, muts)
        if report.is_mismatch:
            return p, report.verdict
    return None
