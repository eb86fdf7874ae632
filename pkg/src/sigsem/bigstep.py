"""Big-step semantics with persistent and one-shot signal handlers.

Three evaluators share the same rule set:

* ``enumerate`` computes the whole outcome set.  One-shot bindings are
  threaded: a command returns the one-shot bindings it did not consume and
  the next command starts from those.
* ``enumerate_split_oracle`` computes the same set by splitting the one-shot
  binding between sequenced commands in every possible way, exactly as the
  rules are written.  It is exponential and only meant for small programs.
* ``run_scheduled`` resolves every nondeterministic choice from a list of
  picks and returns one outcome together with its derivation tree.

Handler firing is bounded by ``Budget.handler_fuel`` (total firings per
derivation) and loops by ``Budget.max_iters`` (unrollings per while node).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

from .store import EMPTY_SIGMAP, SigMap, State, eval_expr, splits
from .syntax import (
    Assign, Command, Seq, SigBind, SigBindOnce, SigBlock, SigBlockOnce, Skip,
    Throw, TryCatch, While, render_command,
)

__all__ = [
    "Normal", "Uncaught", "BudgetExceeded", "BUDGET_EXCEEDED", "Outcome",
    "Budget", "PriorityMode", "ChoiceOutOfRange", "Derivation",
    "enumerate", "enumerate_split_oracle", "run_scheduled", "iter_derivations",
    "derivation_render", "outcome_key", "render_outcome", "HANDLER_RULES",
]


@dataclass(frozen=True, slots=True)
class Normal:
    state: State


@dataclass(frozen=True, slots=True)
class Uncaught:
    exn: str
    state: State


@dataclass(frozen=True, slots=True)
class BudgetExceeded:
    pass


BUDGET_EXCEEDED = BudgetExceeded()

Outcome = Union[Normal, Uncaught, BudgetExceeded]


def outcome_key(o: Outcome) -> tuple:
    if isinstance(o, Normal):
        return (0, "", sorted(o.state.items()))
    if isinstance(o, Uncaught):
        return (1, o.exn, sorted(o.state.items()))
    return (2, "", [])


def render_outcome(o: Outcome) -> str:
    if isinstance(o, Normal):
        return f"normal {o.state.render()}".rstrip()
    if isinstance(o, Uncaught):
        return f"uncaught {o.exn} {o.state.render()}".rstrip()
    return "budget-exceeded"


def _with_state(o: Outcome, s: State) -> Outcome:
    if isinstance(o, Uncaught):
        return Uncaught(o.exn, s)
    return Normal(s)


@dataclass(frozen=True)
class Budget:
    handler_fuel: int = 2
    max_iters: int = 8

    def __post_init__(self) -> None:
        if self.handler_fuel < 0 or self.max_iters < 0:
            raise ValueError("budget components must be nonnegative")


class PriorityMode(enum.Enum):
    EXCEPTION = "exception-priority"
    SIGNAL = "signal-priority"


class ChoiceOutOfRange(Exception):
    def __init__(self, index: int, available: int):
        self.index = index
        self.available = available
        super().__init__(f"ChoiceOutOfRange({index}, {available})")


HANDLER_RULES = frozenset({"PerShotHandl", "OneShotHandl", "PerShotHandl2", "OneShotHandl2"})


@dataclass(frozen=True)
class Derivation:
    """One rule application.

    Convention-generated variants are named ``<rule>/exn<j>`` (the j-th
    judgment premise raised) or ``<rule>/budget<j>`` (it ran out of loop
    budget).  ``fired`` names the signal of a handler rule.
    """

    rule: str
    premises: tuple[Derivation, ...]
    s_bind: SigMap
    o_bind: SigMap
    state: State
    command: Command
    outcome: Outcome
    fired: str | None = None
    side: str = field(default="", compare=False)

    def walk(self) -> Iterator[Derivation]:
        yield self
        for p in self.premises:
            yield from p.walk()


def _enabled(s_bind: SigMap, o_bind: SigMap) -> list[tuple[str, Command, bool]]:
    """Handlers that may fire: persistent sorted by name, then one-shot."""
    return ([(z, s_bind[z], False) for z in sorted(s_bind)]
            + [(z, o_bind[z], True) for z in sorted(o_bind)])


def _restore(residual: SigMap, sig: str, outer: SigMap) -> SigMap:
    """Leave a scope that shadowed or hid ``sig``: the outer binding returns."""
    inner = residual.discard(sig)
    return inner.set(sig, outer[sig]) if sig in outer else inner


# ---------------------------------------------------------------------------
# Threaded enumerator
# ---------------------------------------------------------------------------

class _Threaded:
    """Memoized outcome sets; results are ``(outcome, leftover O, fuel left)``."""

    def __init__(self, budget: Budget, mode: PriorityMode):
        self.budget = budget
        self.mode = mode
        self.memo: dict[tuple, frozenset] = {}

    def judge(self, S: SigMap, O: SigMap, s: State, c: Command,
              fuel: int, it: int = 0, scope: bool = False) -> frozenset:
        key = (S, O, s, c, fuel, it, scope)
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        res: set = set()
        for out, o2, f2 in self.core(S, O, s, c, fuel, it):
            res |= self.after(S, o2, out, f2, scope)
        if fuel > 0:
            for z, h, once in _enabled(S, O):
                o1 = O.remove(z) if once else O
                for hout, _, f1 in self.judge(EMPTY_SIGMAP, EMPTY_SIGMAP, s, h, fuel - 1):
                    if isinstance(hout, Normal):
                        res |= self.judge(S, o1, hout.state, c, f1, it, scope)
                    else:
                        res |= self.after(S, o1, hout, f1, scope)
        frozen = frozenset(res)
        self.memo[key] = frozen
        return frozen

    def after(self, S: SigMap, O: SigMap, out: Outcome, fuel: int, scope: bool) -> set:
        res = {(out, O, fuel)}
        can_fire = isinstance(out, Normal) or (
            isinstance(out, Uncaught) and scope and self.mode is PriorityMode.SIGNAL)
        if not can_fire or fuel == 0:
            return res
        for z, h, once in _enabled(S, O):
            o1 = O.remove(z) if once else O
            for hout, _, f1 in self.judge(EMPTY_SIGMAP, EMPTY_SIGMAP, out.state, h, fuel - 1):
                # a raising handler may itself be interrupted under signal priority
                res |= self.after(S, o1, _with_state(out, hout.state)
                                  if isinstance(hout, Normal) else hout, f1, scope)
        return res

    def core(self, S: SigMap, O: SigMap, s: State, c: Command, fuel: int, it: int):
        if isinstance(c, Skip):
            return [(Normal(s), O, fuel)]
        if isinstance(c, Assign):
            return [(Normal(s.set(c.var, eval_expr(c.rhs, s))), O, fuel)]
        if isinstance(c, Throw):
            return [(Uncaught(c.exn, s), O, fuel)]
        if isinstance(c, Seq):
            return self._then(S, self.judge(S, O, s, c.first, fuel), c.second, 0)
        if isinstance(c, While):
            if eval_expr(c.cond, s) == 0:
                return [(Normal(s), O, fuel)]
            if it >= self.budget.max_iters:
                return [(BUDGET_EXCEEDED, O, fuel)]
            return self._then(S, self.judge(S, O, s, c.body, fuel), c, it + 1)
        if isinstance(c, TryCatch):
            res = []
            for out, o1, f1 in self.judge(S, O, s, c.body, fuel, 0, True):
                if isinstance(out, Uncaught) and out.exn == c.exn:
                    res.extend(self.judge(S, o1, out.state, c.handler, f1))
                else:
                    res.append((out, o1, f1))
            return res
        if isinstance(c, SigBind):
            return list(self.judge(S.set(c.sig, c.handler), O, s, c.body, fuel, 0, True))
        if isinstance(c, SigBlock):
            return list(self.judge(S.discard(c.sig), O, s, c.body, fuel, 0, True))
        if isinstance(c, SigBindOnce):
            inner = self.judge(S, O.set(c.sig, c.handler), s, c.body, fuel, 0, True)
            return [(out, _restore(o2, c.sig, O), f2) for out, o2, f2 in inner]
        if isinstance(c, SigBlockOnce):
            inner = self.judge(S, O.discard(c.sig), s, c.body, fuel, 0, True)
            return [(out, _restore(o2, c.sig, O), f2) for out, o2, f2 in inner]
        raise TypeError(f"not a command: {c!r}")

    def _then(self, S: SigMap, firsts, second: Command, it: int):
        res = []
        for out, o1, f1 in firsts:
            if isinstance(out, Normal):
                res.extend(self.judge(S, o1, out.state, second, f1, it))
            else:
                res.append((out, o1, f1))
        return res


def enumerate(s_bind: SigMap, o_bind: SigMap, state: State, cmd: Command,
              budget: Budget = Budget(), mode: PriorityMode = PriorityMode.EXCEPTION
              ) -> frozenset[Outcome]:
    """All outcomes derivable within ``budget``."""
    ev = _Threaded(budget, mode)
    return frozenset(out for out, _, _ in ev.judge(s_bind, o_bind, state, cmd, budget.handler_fuel))


# ---------------------------------------------------------------------------
# Literal-split oracle
# ---------------------------------------------------------------------------

class _Split:
    """Outcome sets as ``(outcome, fuel left)``; one-shot maps are split, never threaded."""

    def __init__(self, budget: Budget, mode: PriorityMode):
        self.budget = budget
        self.mode = mode
        self.memo: dict[tuple, frozenset] = {}

    def judge(self, S, O, s, c, fuel, it=0, scope=False) -> frozenset:
        key = (S, O, s, c, fuel, it, scope)
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        res = set(self.core(S, O, s, c, fuel, it))
        if fuel > 0:
            for z, h, once in _enabled(S, O):
                rest = O.remove(z) if once else O
                # handler before the command
                for hout, f1 in self.judge(EMPTY_SIGMAP, EMPTY_SIGMAP, s, h, fuel - 1):
                    if isinstance(hout, Normal):
                        res |= self.judge(S, rest, hout.state, c, f1, it, scope)
                    else:
                        res.add((hout, f1))
                # handler after the command; one unit of fuel is reserved for it
                for bout, f1 in self.judge(S, rest, s, c, fuel - 1, it, scope):
                    fires = isinstance(bout, Normal) or (
                        isinstance(bout, Uncaught) and scope
                        and self.mode is PriorityMode.SIGNAL)
                    if not fires:
                        res.add((bout, f1))
                        continue
                    for hout, f2 in self.judge(EMPTY_SIGMAP, EMPTY_SIGMAP, bout.state, h, f1):
                        res.add((_with_state(bout, hout.state) if isinstance(hout, Normal)
                                 else hout, f2))
        frozen = frozenset(res)
        self.memo[key] = frozen
        return frozen

    def _seq(self, S, O, s, first, second, fuel, it_second):
        res = []
        for o1, o2 in splits(O):
            for out, f1 in self.judge(S, o1, s, first, fuel):
                if isinstance(out, Normal):
                    res.extend(self.judge(S, o2, out.state, second, f1, it_second))
                else:
                    res.append((out, f1))
        return res

    def core(self, S, O, s, c, fuel, it):
        if isinstance(c, Skip):
            return [(Normal(s), fuel)]
        if isinstance(c, Assign):
            return [(Normal(s.set(c.var, eval_expr(c.rhs, s))), fuel)]
        if isinstance(c, Throw):
            return [(Uncaught(c.exn, s), fuel)]
        if isinstance(c, Seq):
            return self._seq(S, O, s, c.first, c.second, fuel, 0)
        if isinstance(c, While):
            if eval_expr(c.cond, s) == 0:
                return [(Normal(s), fuel)]
            if it >= self.budget.max_iters:
                return [(BUDGET_EXCEEDED, fuel)]
            return self._seq(S, O, s, c.body, c, fuel, it + 1)
        if isinstance(c, TryCatch):
            res = []
            # Handl2 / Handl4: the body keeps the whole one-shot map
            for out, f1 in self.judge(S, O, s, c.body, fuel, 0, True):
                if not (isinstance(out, Uncaught) and out.exn == c.exn):
                    res.append((out, f1))
            # Handl / Handl3: split between the raising body and the handler
            for o1, o2 in splits(O):
                for out, f1 in self.judge(S, o1, s, c.body, fuel, 0, True):
                    if isinstance(out, Uncaught) and out.exn == c.exn:
                        res.extend(self.judge(S, o2, out.state, c.handler, f1))
            return res
        if isinstance(c, SigBind):
            return self.judge(S.set(c.sig, c.handler), O, s, c.body, fuel, 0, True)
        if isinstance(c, SigBlock):
            return self.judge(S.discard(c.sig), O, s, c.body, fuel, 0, True)
        if isinstance(c, SigBindOnce):
            return self.judge(S, O.set(c.sig, c.handler), s, c.body, fuel, 0, True)
        if isinstance(c, SigBlockOnce):
            return self.judge(S, O.discard(c.sig), s, c.body, fuel, 0, True)
        raise TypeError(f"not a command: {c!r}")


def enumerate_split_oracle(s_bind: SigMap, o_bind: SigMap, state: State, cmd: Command,
                           budget: Budget = Budget(),
                           mode: PriorityMode = PriorityMode.EXCEPTION) -> frozenset[Outcome]:
    ev = _Split(budget, mode)
    return frozenset(out for out, _ in ev.judge(s_bind, o_bind, state, cmd, budget.handler_fuel))


# ---------------------------------------------------------------------------
# Schedule-driven evaluator
# ---------------------------------------------------------------------------

class _Chooser:
    """Hands out picks; records the arity of every real choice point."""

    def __init__(self, picks: Sequence[int]):
        self.picks = list(picks)
        self.taken: list[int] = []
        self.arity: list[int] = []

    def pick(self, available: int) -> int:
        if available <= 1:
            return 0
        i = len(self.taken)
        k = self.picks[i] if i < len(self.picks) else 0
        if not 0 <= k < available:
            raise ChoiceOutOfRange(k, available)
        self.taken.append(k)
        self.arity.append(available)
        return k


def _conv(rule: str, j: int, out: Outcome) -> str:
    return f"{rule}/{'budget' if isinstance(out, BudgetExceeded) else 'exn'}{j}"


class _Scheduled:
    def __init__(self, budget: Budget, mode: PriorityMode, chooser: _Chooser):
        self.budget = budget
        self.mode = mode
        self.ch = chooser

    def _opts(self, S: SigMap, O: SigMap, fuel: int):
        return _enabled(S, O) if fuel > 0 else []

    def judge(self, S, O, s, c, fuel, it=0, scope=False):
        """Returns ``(derivation, outcome, leftover O, fuel left)``."""
        opts = self._opts(S, O, fuel)
        k = self.ch.pick(1 + len(opts))
        if k:
            z, h, once = opts[k - 1]
            rule = "OneShotHandl2" if once else "PerShotHandl2"
            side = f"{'O' if once else 'S'}({z})={render_command(h)}"
            o1 = O.remove(z) if once else O
            hd, hout, _, f1 = self.judge(EMPTY_SIGMAP, EMPTY_SIGMAP, s, h, fuel - 1)
            if not isinstance(hout, Normal):
                d = Derivation(_conv(rule, 1, hout), (hd,), S, O, s, c, hout, z, side)
                return self.after(S, O, o1, s, c, d, hout, f1, scope)
            rd, rout, ro, rf = self.judge(S, o1, hout.state, c, f1, it, scope)
            return Derivation(rule, (hd, rd), S, O, s, c, rout, z, side), rout, ro, rf
        d, out, o2, f2 = self.core(S, O, s, c, fuel, it)
        return self.after(S, O, o2, s, c, d, out, f2, scope)

    def after(self, S, O_in, O, s_in, c, d, out, fuel, scope):
        while True:
            can_fire = isinstance(out, Normal) or (
                isinstance(out, Uncaught) and scope and self.mode is PriorityMode.SIGNAL)
            opts = self._opts(S, O, fuel) if can_fire else []
            k = self.ch.pick(1 + len(opts))
            if not k:
                return d, out, O, fuel
            z, h, once = opts[k - 1]
            rule = "OneShotHandl" if once else "PerShotHandl"
            side = f"{'O' if once else 'S'}({z})={render_command(h)}"
            if once:
                O = O.remove(z)
            hd, hout, _, fuel = self.judge(EMPTY_SIGMAP, EMPTY_SIGMAP, out.state, h, fuel - 1)
            if isinstance(hout, Normal):
                out = _with_state(out, hout.state)
                d = Derivation(rule, (d, hd), S, O_in, s_in, c, out, z, side)
            else:
                out = hout
                d = Derivation(_conv(rule, 2, hout), (d, hd), S, O_in, s_in, c, out, z, side)

    def _two(self, rule, S, O, s, c, first, second, it_second):
        d1, out1, o1, f1 = first
        if not isinstance(out1, Normal):
            return Derivation(_conv(rule, 1, out1), (d1,), S, O, s, c, out1), out1, o1, f1
        d2, out2, o2, f2 = self.judge(S, o1, out1.state, second, f1, it_second)
        name = rule if isinstance(out2, Normal) else _conv(rule, 2, out2)
        return Derivation(name, (d1, d2), S, O, s, c, out2), out2, o2, f2

    def core(self, S, O, s, c, fuel, it):
        if isinstance(c, Skip):
            out = Normal(s)
            return Derivation("Skip", (), S, O, s, c, out), out, O, fuel
        if isinstance(c, Assign):
            v = eval_expr(c.rhs, s)
            out = Normal(s.set(c.var, v))
            return Derivation("Atomic", (), S, O, s, c, out, side=f"eval={v}"), out, O, fuel
        if isinstance(c, Throw):
            out = Uncaught(c.exn, s)
            return Derivation("Throw", (), S, O, s, c, out), out, O, fuel
        if isinstance(c, Seq):
            first = self.judge(S, O, s, c.first, fuel)
            return self._two("SeqComp", S, O, s, c, first, c.second, 0)
        if isinstance(c, While):
            if eval_expr(c.cond, s) == 0:
                out = Normal(s)
                return Derivation("While-False", (), S, O, s, c, out), out, O, fuel
            if it >= self.budget.max_iters:
                out = BUDGET_EXCEEDED
                return Derivation("While-Budget", (), S, O, s, c, out), out, O, fuel
            first = self.judge(S, O, s, c.body, fuel)
            return self._two("While-True", S, O, s, c, first, c, it + 1)
        if isinstance(c, TryCatch):
            d1, out1, o1, f1 = self.judge(S, O, s, c.body, fuel, 0, True)
            if isinstance(out1, Normal):
                return Derivation("Handl2", (d1,), S, O, s, c, out1), out1, o1, f1
            if isinstance(out1, Uncaught) and out1.exn != c.exn:
                return (Derivation("Handl4", (d1,), S, O, s, c, out1, side=f"{out1.exn}≠{c.exn}"),
                        out1, o1, f1)
            if isinstance(out1, BudgetExceeded):
                return Derivation("Handl/budget1", (d1,), S, O, s, c, out1), out1, o1, f1
            d2, out2, o2, f2 = self.judge(S, o1, out1.state, c.handler, f1)
            if isinstance(out2, Normal):
                name = "Handl"
            elif isinstance(out2, Uncaught):
                name = "Handl3"
            else:
                name = "Handl/budget2"
            return Derivation(name, (d1, d2), S, O, s, c, out2), out2, o2, f2
        if isinstance(c, (SigBind, SigBlock)):
            inner_s = S.set(c.sig, c.handler) if isinstance(c, SigBind) else S.discard(c.sig)
            rule = "PerSigBind" if isinstance(c, SigBind) else "PerSigBlock"
            d1, out, o1, f1 = self.judge(inner_s, O, s, c.body, fuel, 0, True)
            name = rule if isinstance(out, Normal) else _conv(rule, 1, out)
            return Derivation(name, (d1,), S, O, s, c, out), out, o1, f1
        if isinstance(c, (SigBindOnce, SigBlockOnce)):
            inner_o = O.set(c.sig, c.handler) if isinstance(c, SigBindOnce) else O.discard(c.sig)
            rule = "OneSigBind" if isinstance(c, SigBindOnce) else "OneSigBlock"
            d1, out, o1, f1 = self.judge(S, inner_o, s, c.body, fuel, 0, True)
            name = rule if isinstance(out, Normal) else _conv(rule, 1, out)
            return (Derivation(name, (d1,), S, O, s, c, out), out,
                    _restore(o1, c.sig, O), f1)
        raise TypeError(f"not a command: {c!r}")


def run_scheduled(s_bind: SigMap, o_bind: SigMap, state: State, cmd: Command,
                  budget: Budget = Budget(), mode: PriorityMode = PriorityMode.EXCEPTION,
                  choices: Sequence[int] = ()) -> tuple[Outcome, Derivation]:
    """Evaluate one derivation, taking the next pick at every choice point.

    A choice point lists "no handler" first, then handlers that may fire
    before the command (persistent by name, then one-shot by name); at a
    command's completion the same list is offered for handlers after it.
    Points with a single option consume no pick; missing picks mean 0.
    """
    ch = _Chooser(choices)
    d, out, _, _ = _Scheduled(budget, mode, ch).judge(s_bind, o_bind, state, cmd,
                                                       budget.handler_fuel)
    return out, d


def iter_derivations(s_bind: SigMap, o_bind: SigMap, state: State, cmd: Command,
                     budget: Budget = Budget(), mode: PriorityMode = PriorityMode.EXCEPTION
                     ) -> Iterator[tuple[tuple[int, ...], Outcome, Derivation]]:
    """Every derivation within budget, each with the picks that produce it."""
    pending: list[tuple[int, ...]] = [()]
    while pending:
        prefix = pending.pop()
        ch = _Chooser(prefix)
        d, out, _, _ = _Scheduled(budget, mode, ch).judge(s_bind, o_bind, state, cmd,
                                                           budget.handler_fuel)
        for i in range(len(prefix), len(ch.taken)):
            for alt in range(ch.arity[i] - 1, 0, -1):
                pending.append(tuple(ch.taken[:i]) + (alt,))
        yield tuple(ch.taken), out, d


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _render_sigmap(m: SigMap) -> str:
    return "{" + ", ".join(f"{z}: {render_command(m[z])}" for z in sorted(m)) + "}"


def _render_judgment(d: Derivation) -> str:
    lhs = (f"{_render_sigmap(d.s_bind)}, {_render_sigmap(d.o_bind)} ⊢ "
           f"[{d.state.render()}], {render_command(d.command)}")
    o = d.outcome
    if isinstance(o, Normal):
        rhs = f"⇓ [{o.state.render()}]"
    elif isinstance(o, Uncaught):
        rhs = f"⇑ {o.exn}, [{o.state.render()}]"
    else:
        rhs = "⇑ budget-exceeded"
    return f"{lhs} {rhs}"


def derivation_render(d: Derivation, indent: str = "  ") -> str:
    """Conclusion first, premises indented beneath it, one judgment per line."""
    lines: list[str] = []

    def go(node: Derivation, depth: int) -> None:
        tag = node.rule + (f" {node.side}" if node.side else "")
        lines.append(f"{indent * depth}({tag}) {_render_judgment(node)}")
        for p in node.premises:
            go(p, depth + 1)

    go(d, 0)
    return "\n".join(lines)

