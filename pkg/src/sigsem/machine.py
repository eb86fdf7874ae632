"""Abstract stack machine for block-structured signals and exceptions.

A configuration is ``<current, state, beta, J, K>``: the item under
evaluation, the variable store, the enabled-signal vector, a stack of
exception/signal tags and a continuation stack.  Both stacks are tuples with
the top at index 0.

Handler transitions are available in any configuration where the topmost tag
for an enabled signal can still fire, independently of the current item.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence, Union

from .bigstep import BUDGET_EXCEEDED, Budget, BudgetExceeded, Normal, Outcome, Uncaught
from .store import BitVector, State, eval_expr
from .syntax import (
    Assign, Command, Program, Seq, SigBind, SigBindOnce, SigBlock, SigBlockOnce,
    Skip, Throw, TryCatch, While, ast_size, cache_hashes, render_command, Node,
)

__all__ = [
    "ExnTag", "PerTag", "OnceTag", "Tag", "PopUpd", "Upd", "Ret", "RET", "Frame",
    "Config", "Structural", "STRUCTURAL", "FirePersistent", "FireOnce", "MachineChoice",
    "Finished", "StuckUncaught", "MachineResult", "InvalidChoice", "MachineFault",
    "MUTATIONS", "initial_config", "is_final", "enabled_choices", "step", "unwind",
    "run", "enumerate_machine", "iter_runs", "search", "successors", "Exploration", "step_bound", "result_outcome",
    "render_config", "config_json", "render_item", "parse_choice", "render_choice",
]

# Seeded faults used to check that audits and comparison notice broken machines.
MUTATIONS = frozenset({
    "skip-used-flip",        # one-shot firing leaves the used bit at 0
    "skip-binder-popupd",    # leaving a signal binder neither pops J nor restores beta
    "handler-caller-beta",   # handlers run under the interrupted beta, not beta-zero
    "skip-unwind-pop",       # unwinding leaves crossed tags on J
})


# -- tags and frames --------------------------------------------------------

@dataclass(frozen=True, slots=True)
class ExnTag(Node):
    exn: str
    handler: Command
    uid: int = field(default=0, compare=False)


@dataclass(frozen=True, slots=True)
class PerTag(Node):
    sig: str
    handler: Command
    uid: int = field(default=0, compare=False)


@dataclass(frozen=True, slots=True)
class OnceTag(Node):
    sig: str
    handler: Command
    used: int = 0
    uid: int = field(default=0, compare=False)


Tag = Union[ExnTag, PerTag, OnceTag]


@dataclass(frozen=True, slots=True)
class PopUpd(Node):
    beta: BitVector
    uid: int = field(default=0, compare=False)


@dataclass(frozen=True, slots=True)
class Upd(Node):
    beta: BitVector


@dataclass(frozen=True, slots=True)
class Ret:
    pass


RET = Ret()

Frame = Union[Command, PopUpd, Upd, Ret]


@dataclass(frozen=True, slots=True)
class Config(Node):
    current: Frame
    state: State
    beta: BitVector
    j: tuple[Tag, ...]
    k: tuple[Frame, ...]


cache_hashes(ExnTag, PerTag, OnceTag, PopUpd, Upd, Config)


# -- choices and results ----------------------------------------------------

@dataclass(frozen=True, slots=True)
class Structural:
    pass


STRUCTURAL = Structural()


@dataclass(frozen=True, slots=True)
class FirePersistent:
    sig: str


@dataclass(frozen=True, slots=True)
class FireOnce:
    sig: str


MachineChoice = Union[Structural, FirePersistent, FireOnce]


@dataclass(frozen=True, slots=True)
class Finished:
    state: State


@dataclass(frozen=True, slots=True)
class StuckUncaught:
    exn: str
    state: State


MachineResult = Union[Finished, StuckUncaught, BudgetExceeded]


class InvalidChoice(Exception):
    def __init__(self, step_index: int, choice: MachineChoice | None = None):
        self.step_index = step_index
        self.choice = choice
        super().__init__(f"InvalidChoice at step {step_index}: {choice!r}")


class MachineFault(Exception):
    """A configuration with no transition that is neither final nor stuck on a throw."""


def result_outcome(r: MachineResult) -> Outcome:
    if isinstance(r, Finished):
        return Normal(r.state)
    if isinstance(r, StuckUncaught):
        return Uncaught(r.exn, r.state)
    return BUDGET_EXCEEDED


# -- transitions ------------------------------------------------------------

def initial_config(program: Program) -> Config:
    return Config(program.command, State(program.initial_vars), BitVector.zero(), (), (RET,))


def is_final(config: Config) -> bool:
    return isinstance(config.current, Ret) and not config.k


def _top_signal_tag(j: tuple[Tag, ...], sig: str) -> int | None:
    for i, tag in enumerate(j):
        if isinstance(tag, (PerTag, OnceTag)) and tag.sig == sig:
            return i
    return None


def _has_structural(config: Config) -> bool:
    cur = config.current
    if isinstance(cur, Ret):
        return False
    if isinstance(cur, PopUpd):
        return bool(config.j) and bool(config.k)
    if isinstance(cur, Upd):
        return bool(config.k)
    if isinstance(cur, (Skip, Assign, While)):
        # these consume the next continuation item
        return bool(config.k)
    return True


def enabled_choices(config: Config) -> list[MachineChoice]:
    """Structural first (when some structural step applies), then handler firings."""
    out: list[MachineChoice] = [STRUCTURAL] if _has_structural(config) else []
    per: list[MachineChoice] = []
    once: list[MachineChoice] = []
    for z in config.beta.names():
        i = _top_signal_tag(config.j, z)
        if i is None:
            continue
        tag = config.j[i]
        if isinstance(tag, PerTag):
            per.append(FirePersistent(z))
        elif tag.used == 0:
            once.append(FireOnce(z))
    return out + per + once


def unwind(exn: str, j: Sequence[Tag], k: Sequence[Frame],
           mutations: frozenset[str] = frozenset()
           ) -> tuple[Command, BitVector, tuple[Tag, ...], tuple[Frame, ...]] | None:
    """Pop continuation frames until the pop-upd guarding a handler for ``exn``.

    Command and upd frames are skipped; each pop-upd crossed removes the tag it
    guards.  Returns ``(handler, beta, J, K)`` or ``None`` when no handler exists.
    """
    j = tuple(j)
    kept: tuple[Tag, ...] = ()
    for idx, frame in enumerate(k):
        if isinstance(frame, Ret):
            return None
        if not isinstance(frame, PopUpd):
            continue
        if not j:
            return None
        top = j[0]
        if isinstance(top, ExnTag) and top.exn == exn:
            return top.handler, frame.beta, kept + j[1:], tuple(k[idx + 1:])
        if "skip-unwind-pop" in mutations:
            kept = kept + (top,)
        j = j[1:]
    return None


def step(config: Config, choice: MachineChoice = STRUCTURAL, *,
         uid: int = 0, mutations: frozenset[str] = frozenset()) -> Config | MachineResult:
    """One transition.  ``uid`` labels any tag created by this step."""
    cur, s, beta, j, k = config.current, config.state, config.beta, config.j, config.k

    if isinstance(choice, (FirePersistent, FireOnce)):
        if choice not in enabled_choices(config):
            raise InvalidChoice(-1, choice)
        i = _top_signal_tag(j, choice.sig)
        tag = j[i]
        inner_beta = beta if "handler-caller-beta" in mutations else BitVector.zero()
        if isinstance(choice, FirePersistent):
            return Config(tag.handler, s, inner_beta, j, (Upd(beta), cur) + k)
        if "skip-used-flip" not in mutations:
            j = j[:i] + (replace(tag, used=1),) + j[i + 1:]
        return Config(tag.handler, s, inner_beta, j, (Upd(beta.minus(choice.sig)), cur) + k)

    if not _has_structural(config):
        raise InvalidChoice(-1, choice)

    if isinstance(cur, PopUpd):
        if "skip-binder-popupd" in mutations and isinstance(j[0], (PerTag, OnceTag)):
            return Config(k[0], s, beta, j, k[1:])
        return Config(k[0], s, cur.beta, j[1:], k[1:])
    if isinstance(cur, Upd):
        return Config(k[0], s, cur.beta, j, k[1:])
    if isinstance(cur, Skip):
        return Config(k[0], s, beta, j, k[1:])
    if isinstance(cur, Assign):
        return Config(k[0], s.set(cur.var, eval_expr(cur.rhs, s)), beta, j, k[1:])
    if isinstance(cur, Seq):
        return Config(cur.first, s, beta, j, (cur.second,) + k)
    if isinstance(cur, While):
        if eval_expr(cur.cond, s) != 0:
            return Config(cur.body, s, beta, j, (cur,) + k)
        return Config(k[0], s, beta, j, k[1:])
    if isinstance(cur, SigBind):
        return Config(cur.body, s, beta.plus(cur.sig), (PerTag(cur.sig, cur.handler, uid),) + j,
                      (PopUpd(beta, uid),) + k)
    if isinstance(cur, SigBindOnce):
        return Config(cur.body, s, beta.plus(cur.sig),
                      (OnceTag(cur.sig, cur.handler, 0, uid),) + j, (PopUpd(beta, uid),) + k)
    if isinstance(cur, (SigBlock, SigBlockOnce)):
        return Config(cur.body, s, beta.minus(cur.sig), j, (Upd(beta),) + k)
    if isinstance(cur, TryCatch):
        return Config(cur.body, s, beta, (ExnTag(cur.exn, cur.handler, uid),) + j,
                      (PopUpd(beta, uid),) + k)
    if isinstance(cur, Throw):
        if not any(isinstance(t, ExnTag) and t.exn == cur.exn for t in j):
            return StuckUncaught(cur.exn, s)
        found = unwind(cur.exn, j, k, mutations)
        if found is None:
            return StuckUncaught(cur.exn, s)
        h, beta2, j2, k2 = found
        return Config(h, s, beta2, j2, k2)
    raise MachineFault(f"no transition for {cur!r}")


def step_bound(program: Program, budget: Budget) -> int:
    return 64 * ast_size(program.command) * (budget.max_iters + 1) * (budget.handler_fuel + 1)


def run(program: Program, schedule: Sequence[MachineChoice] = (), budget: Budget = Budget(),
        mutations: frozenset[str] = frozenset()) -> tuple[MachineResult, list[Config]]:
    """Run from the initial configuration, one schedule entry per step.

    Entries past the end of ``schedule`` are Structural.  Returns the result
    and every configuration visited, the initial one included.
    """
    config = initial_config(program)
    trace = [config]
    bound = step_bound(program, budget)
    n = 0
    while not is_final(config):
        if n >= bound:
            return BUDGET_EXCEEDED, trace
        choice = schedule[n] if n < len(schedule) else STRUCTURAL
        if choice not in enabled_choices(config):
            raise InvalidChoice(n, choice)
        nxt = step(config, choice, uid=n + 1, mutations=mutations)
        n += 1
        if not isinstance(nxt, Config):
            return nxt, trace
        config = nxt
        trace.append(config)
    return Finished(config.state), trace


@dataclass
class Exploration:
    """Result of a depth-first search over a machine transition graph.

    ``results`` holds the terminal results reached; ``diverges`` is set when
    some path revisits a node already on the path or exceeds the step bound.
    ``parents`` maps each visited node to ``(predecessor, label)``.
    """

    results: set
    diverges: bool
    parents: dict

    def path(self, node) -> list:
        labels = []
        while True:
            prev = self.parents.get(node)
            if prev is None:
                break
            node, label = prev
            labels.append(label)
        labels.reverse()
        return labels


def search(start, expand, bound: int) -> Exploration:
    """Explore every node reachable from ``start``, each once.

    ``expand(node, uid)`` returns ``(label, child)`` pairs where ``child`` is
    either another node (a tuple whose first item is a Config) or a terminal
    MachineResult.  ``uid`` is unique per expansion.
    """
    results: set = set()
    parents: dict = {start: None}
    on_path = {start}
    diverges = False
    uid = 1
    stack = [(start, 0, iter(expand(start, uid)))]
    while stack:
        node, depth, children = stack[-1]
        nxt = next(children, None)
        if nxt is None:
            stack.pop()
            on_path.discard(node)
            continue
        label, child = nxt
        if not isinstance(child, tuple):
            results.add(child)
            continue
        if child in on_path:
            diverges = True
            continue
        if child in parents:
            continue
        parents[child] = (node, label)
        if depth + 1 >= bound:
            diverges = True
            continue
        uid += 1
        on_path.add(child)
        stack.append((child, depth + 1, iter(expand(child, uid))))
    return Exploration(results, diverges, parents)


def successors(config: Config, fuel: int, uid: int,
               mutations: frozenset[str] = frozenset()) -> list:
    """Labelled transitions out of ``(config, fuel)``; firings cost one fuel."""
    if is_final(config):
        return [(None, Finished(config.state))]
    choices = enabled_choices(config)
    if not choices:
        raise MachineFault(f"stuck configuration {render_config(config)}")
    out = []
    for choice in choices:
        fire = not isinstance(choice, Structural)
        if fire and fuel == 0:
            continue
        r = step(config, choice, uid=uid, mutations=mutations)
        out.append((choice, (r, fuel - fire) if isinstance(r, Config) else r))
    return out


def enumerate_machine(program: Program, budget: Budget = Budget(),
                      mutations: frozenset[str] = frozenset()) -> frozenset[Outcome]:
    """Outcomes of every schedule with at most ``handler_fuel`` firings.

    Each (configuration, remaining fuel) pair is explored once.  A schedule
    that can return to a configuration it already passed through, or that
    runs past the step bound, contributes BudgetExceeded.
    """
    ex = search((initial_config(program), budget.handler_fuel),
                lambda node, uid: successors(node[0], node[1], uid, mutations),
                step_bound(program, budget))
    outcomes = {result_outcome(r) for r in ex.results}
    if ex.diverges:
        outcomes.add(BUDGET_EXCEEDED)
    return frozenset(outcomes)


def iter_runs(program: Program, budget: Budget = Budget(),
              mutations: frozenset[str] = frozenset()
              ) -> Iterator[tuple[list[MachineChoice], list[Config], MachineResult]]:
    """Every schedule with at most ``handler_fuel`` firings, with its trace and result."""
    bound = step_bound(program, budget)
    # (config, fuel, step count, parent node) ; parent node = (choice, config, parent)
    stack: list = [(initial_config(program), budget.handler_fuel, 0, None)]
    while stack:
        config, fuel, n, path = stack.pop()
        result: MachineResult | None = None
        if is_final(config):
            result = Finished(config.state)
        elif n >= bound:
            result = BUDGET_EXCEEDED
        else:
            choices = enabled_choices(config)
            if not choices:
                raise MachineFault(f"stuck configuration {render_config(config)}")
            for choice in reversed(choices):
                fire = not isinstance(choice, Structural)
                if fire and fuel == 0:
                    continue
                r = step(config, choice, uid=n + 1, mutations=mutations)
                node = (choice, config, path)
                if isinstance(r, Config):
                    stack.append((r, fuel - fire, n + 1, node))
                else:
                    sched, trace = _unroll(node)
                    yield sched, trace, r
        if result is not None:
            sched, trace = _unroll(path)
            yield sched, trace + [config], result


def _unroll(node) -> tuple[list[MachineChoice], list[Config]]:
    sched: list[MachineChoice] = []
    trace: list[Config] = []
    while node is not None:
        choice, config, node = node
        sched.append(choice)
        trace.append(config)
    sched.reverse()
    trace.reverse()
    return sched, trace


# -- rendering --------------------------------------------------------------

def render_item(item: Frame) -> str:
    if isinstance(item, PopUpd):
        return f"popupd{item.beta.render()}"
    if isinstance(item, Upd):
        return f"upd{item.beta.render()}"
    if isinstance(item, Ret):
        return "ret"
    return render_command(item)


def _render_tag(tag: Tag) -> str:
    if isinstance(tag, ExnTag):
        return f"<{tag.exn}, {render_command(tag.handler)}>"
    if isinstance(tag, PerTag):
        return f"<{tag.sig}, {render_command(tag.handler)}>"
    return f"<{tag.sig}, {render_command(tag.handler)}, {tag.used}>"


def render_config(config: Config, index: int | None = None) -> str:
    parts = [
        render_item(config.current),
        config.state.render(),
        config.beta.render(),
        "[" + ", ".join(_render_tag(t) for t in config.j) + "]",
        "[" + "; ".join(render_item(f) for f in config.k) + "]",
    ]
    head = f"{index} | " if index is not None else ""
    return head + " | ".join(parts)


def config_json(config: Config, index: int) -> dict:
    j = []
    for tag in config.j:
        if isinstance(tag, ExnTag):
            j.append({"kind": "exn", "name": tag.exn, "used": 0})
        elif isinstance(tag, PerTag):
            j.append({"kind": "per", "name": tag.sig, "used": 0})
        else:
            j.append({"kind": "once", "name": tag.sig, "used": tag.used})
    return {
        "step": index,
        "current": render_item(config.current),
        "state": {k: config.state[k] for k in sorted(config.state)},
        "beta": config.beta.names(),
        "j": j,
        "k": [render_item(f) for f in config.k],
    }


def render_choice(choice: MachineChoice) -> str:
    if isinstance(choice, FirePersistent):
        return f"fire-per {choice.sig}"
    if isinstance(choice, FireOnce):
        return f"fire-once {choice.sig}"
    return "structural"


def parse_choice(line: str) -> MachineChoice:
    words = line.split()
    if words == ["structural"]:
        return STRUCTURAL
    if len(words) == 2 and words[0] == "fire-per":
        return FirePersistent(words[1])
    if len(words) == 2 and words[0] == "fire-once":
        return FireOnce(words[1])
    raise ValueError(f"unknown schedule directive: {line!r}")
