"""Variable stores, signal bindings and the machine's enabled-signal vector.

Everything here is persistent: updates return new objects and never touch
their inputs, so values can be shared freely between enumeration branches.
"""

from __future__ import annotations

import itertools
from collections.abc import Iterable, Iterator, Mapping
from typing import Any, TypeVar

from .syntax import Add, Command, Expr, Lit, Var

__all__ = [
    "FrozenMap", "State", "SigMap", "BitVector", "EvalError",
    "eval_expr", "update", "sep_join", "splits", "EMPTY_SIGMAP",
]

M = TypeVar("M", bound="FrozenMap")


class FrozenMap(Mapping):
    """Immutable finite map with a cached hash."""

    __slots__ = ("_d", "_h")

    def __init__(self, items: Mapping[str, Any] | Iterable[tuple[str, Any]] = ()):
        self._d = dict(items)
        self._h: int | None = None

    def __getitem__(self, key: str) -> Any:
        return self._d[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._d)

    def __len__(self) -> int:
        return len(self._d)

    def __hash__(self) -> int:
        if self._h is None:
            self._h = hash((type(self).__name__, frozenset(self._d.items())))
        return self._h

    def __eq__(self, other: object) -> bool:
        if type(self) is not type(other):
            return NotImplemented
        return self._d == other._d  # type: ignore[attr-defined]

    def __repr__(self) -> str:
        body = ", ".join(f"{k}={self._d[k]!r}" for k in sorted(self._d))
        return f"{type(self).__name__}({{{body}}})"

    def domain(self) -> frozenset[str]:
        return frozenset(self._d)

    def set(self: M, key: str, value: Any) -> M:
        d = dict(self._d)
        d[key] = value
        return type(self)(d)

    def remove(self: M, key: str) -> M:
        """Restriction to ``dom - {key}``; the key must be present."""
        d = dict(self._d)
        del d[key]
        return type(self)(d)

    def discard(self: M, key: str) -> M:
        return self.remove(key) if key in self._d else self


class State(FrozenMap):
    """Variable store: variable name -> integer."""

    __slots__ = ()

    def render(self) -> str:
        return ", ".join(f"{k}={self._d[k]}" for k in sorted(self._d))


class SigMap(FrozenMap):
    """Signal binding: signal name -> handler command."""

    __slots__ = ()


EMPTY_SIGMAP = SigMap()


def update(m: M, key: str, value: Any) -> M:
    return m.set(key, value)


def sep_join(o1: SigMap, o2: SigMap) -> SigMap | None:
    """Union of two bindings with disjoint domains, ``None`` when they overlap."""
    if o1.domain() & o2.domain():
        return None
    return SigMap({**o1, **o2})


def splits(o: SigMap) -> list[tuple[SigMap, SigMap]]:
    """Every ordered pair ``(o1, o2)`` with ``sep_join(o1, o2) == o``.

    Order: membership bit vectors over the sorted names, lexicographically,
    where bit 1 sends the name to ``o1``.
    """
    names = sorted(o)
    out = []
    for bits in itertools.product((0, 1), repeat=len(names)):
        left = SigMap((n, o[n]) for n, b in zip(names, bits) if b)
        right = SigMap((n, o[n]) for n, b in zip(names, bits) if not b)
        out.append((left, right))
    return out


class BitVector:
    """Total map from signal names to booleans, false outside ``enabled``."""

    __slots__ = ("enabled",)

    def __init__(self, enabled: Iterable[str] = ()):
        self.enabled = frozenset(enabled)

    @classmethod
    def zero(cls) -> BitVector:
        return cls()

    def __call__(self, sig: str) -> bool:
        return sig in self.enabled

    def plus(self, sig: str) -> BitVector:
        return BitVector(self.enabled | {sig})

    def minus(self, sig: str) -> BitVector:
        return BitVector(self.enabled - {sig})

    def __eq__(self, other: object) -> bool:
        return isinstance(other, BitVector) and self.enabled == other.enabled

    def __hash__(self) -> int:
        return hash(self.enabled)

    def names(self) -> list[str]:
        return sorted(self.enabled)

    def __repr__(self) -> str:
        return f"BitVector({self.names()})"

    def render(self) -> str:
        return "[" + ", ".join(self.names()) + "]"


class EvalError(Exception):
    def __init__(self, variable: str):
        self.variable = variable
        super().__init__(f"UnboundVariable {variable}")


def eval_expr(expr: Expr, state: Mapping[str, int]) -> int:
    if isinstance(expr, Var):
        try:
            return state[expr.name]
        except KeyError:
            raise EvalError(expr.name) from None
    if isinstance(expr, Lit):
        return expr.value
    if isinstance(expr, Add):
        return eval_expr(expr.left, state) + eval_expr(expr.right, state)
    raise TypeError(f"not an expression: {expr!r}")


def handler_items(binding: SigMap) -> list[tuple[str, Command]]:
    return [(z, binding[z]) for z in sorted(binding)]
