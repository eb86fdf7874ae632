"""Abstract syntax, concrete syntax and static checks for the signal language.

Concrete grammar::

    program := 'vars' [IDENT '=' INT (',' IDENT '=' INT)*] ';' cmd
    cmd     := atom [';' cmd]                       (right-associative)
    atom    := 'skip' | IDENT ':=' expr | 'throw' IDENT
             | 'while' expr 'do' atom
             | 'try' atom 'catch' IDENT atom
             | 'bind' IDENT 'handler' atom 'in' atom
             | 'bindonce' IDENT 'handler' atom 'in' atom
             | 'block' IDENT 'in' atom
             | 'blockonce' IDENT 'in' atom
             | '{' cmd '}'
    expr    := term ('+' term)*                     (left-associative)
    term    := IDENT | INT | '(' expr ')'
"""

from __future__ import annotations

import re
from dataclasses import dataclass, fields
from typing import Iterator, Union

__all__ = [
    "Var", "Lit", "Add", "Expr",
    "Skip", "While", "Assign", "Seq", "Throw", "TryCatch",
    "SigBind", "SigBindOnce", "SigBlock", "SigBlockOnce", "Command",
    "Program", "ParseError", "Violation",
    "parse", "parse_command", "render", "render_command", "render_expr",
    "well_formed", "undeclared_reads", "ast_size", "subcommands",
]


class Node:
    """Base for immutable trees; the structural hash is computed once."""

    __slots__ = ("_hash",)

    def __hash__(self) -> int:
        try:
            return self._hash
        except AttributeError:
            h = hash((type(self).__name__,) + tuple(getattr(self, f) for f in self._hashed))
            object.__setattr__(self, "_hash", h)
            return h


def cache_hashes(*classes: type) -> None:
    """Undo the per-call hash that ``dataclass(frozen=True)`` installs."""
    for cls in classes:
        cls._hashed = tuple(f.name for f in fields(cls) if f.compare)
        cls.__hash__ = Node.__hash__


# -- expressions ------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Var(Node):
    name: str


@dataclass(frozen=True, slots=True)
class Lit(Node):
    value: int


@dataclass(frozen=True, slots=True)
class Add(Node):
    left: Expr
    right: Expr


Expr = Union[Var, Lit, Add]


# -- commands ---------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Skip(Node):
    pass


@dataclass(frozen=True, slots=True)
class While(Node):
    cond: Expr
    body: Command


@dataclass(frozen=True, slots=True)
class Assign(Node):
    var: str
    rhs: Expr


@dataclass(frozen=True, slots=True)
class Seq(Node):
    first: Command
    second: Command


@dataclass(frozen=True, slots=True)
class Throw(Node):
    exn: str


@dataclass(frozen=True, slots=True)
class TryCatch(Node):
    body: Command
    exn: str
    handler: Command


@dataclass(frozen=True, slots=True)
class SigBind(Node):
    """Persistent handler ``handler`` for ``sig`` while ``body`` runs."""

    sig: str
    body: Command
    handler: Command


@dataclass(frozen=True, slots=True)
class SigBindOnce(Node):
    """One-shot handler: uninstalled after its first run."""

    sig: str
    body: Command
    handler: Command


@dataclass(frozen=True, slots=True)
class SigBlock(Node):
    sig: str
    body: Command


@dataclass(frozen=True, slots=True)
class SigBlockOnce(Node):
    sig: str
    body: Command


Command = Union[Skip, While, Assign, Seq, Throw, TryCatch,
                SigBind, SigBindOnce, SigBlock, SigBlockOnce]

cache_hashes(Var, Lit, Add, Skip, While, Assign, Seq, Throw, TryCatch,
             SigBind, SigBindOnce, SigBlock, SigBlockOnce)


@dataclass(frozen=True, slots=True)
class Program:
    command: Command
    initial_vars: tuple[tuple[str, int], ...] = ()

    def __post_init__(self) -> None:
        names = [n for n, _ in self.initial_vars]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate variable in vars: {names}")
        object.__setattr__(self, "initial_vars", tuple(self.initial_vars))


@dataclass(frozen=True, slots=True)
class Violation:
    kind: str
    name: str
    witness: str = ""

    def __str__(self) -> str:
        return f"{self.kind} {self.name}".rstrip()


# -- traversal helpers ------------------------------------------------------

def subcommands(cmd: Command) -> tuple[Command, ...]:
    if isinstance(cmd, (Seq,)):
        return (cmd.first, cmd.second)
    if isinstance(cmd, While):
        return (cmd.body,)
    if isinstance(cmd, (TryCatch, SigBind, SigBindOnce)):
        return (cmd.body, cmd.handler)
    if isinstance(cmd, (SigBlock, SigBlockOnce)):
        return (cmd.body,)
    return ()


def _walk(cmd: Command) -> Iterator[Command]:
    yield cmd
    for sub in subcommands(cmd):
        yield from _walk(sub)


def _expr_size(e: Expr) -> int:
    if isinstance(e, Add):
        return 1 + _expr_size(e.left) + _expr_size(e.right)
    return 1


def ast_size(cmd: Command) -> int:
    """Node count, where a command's root expression shares the command's node.

    ``x := 1`` and ``skip`` both have size 1; ``x := x + 1`` has size 3.
    """
    if isinstance(cmd, Assign):
        return _expr_size(cmd.rhs)
    if isinstance(cmd, While):
        return _expr_size(cmd.cond) + ast_size(cmd.body)
    return 1 + sum(ast_size(c) for c in subcommands(cmd))


def _expr_vars(e: Expr) -> Iterator[str]:
    if isinstance(e, Var):
        yield e.name
    elif isinstance(e, Add):
        yield from _expr_vars(e.left)
        yield from _expr_vars(e.right)


# -- rendering --------------------------------------------------------------

def render_expr(e: Expr) -> str:
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Lit):
        return str(e.value)
    right = render_expr(e.right)
    if isinstance(e.right, Add):
        right = f"({right})"
    return f"{render_expr(e.left)} + {right}"


def _block(cmd: Command) -> str:
    return "{ " + render_command(cmd) + " }"


def _render_atom(cmd: Command) -> str:
    if isinstance(cmd, Seq):
        return _block(cmd)
    return render_command(cmd)


def render_command(cmd: Command) -> str:
    if isinstance(cmd, Skip):
        return "skip"
    if isinstance(cmd, Assign):
        return f"{cmd.var} := {render_expr(cmd.rhs)}"
    if isinstance(cmd, Seq):
        return f"{_render_atom(cmd.first)} ; {render_command(cmd.second)}"
    if isinstance(cmd, Throw):
        return f"throw {cmd.exn}"
    if isinstance(cmd, While):
        return f"while {render_expr(cmd.cond)} do {_block(cmd.body)}"
    if isinstance(cmd, TryCatch):
        return f"try {_block(cmd.body)} catch {cmd.exn} {_block(cmd.handler)}"
    if isinstance(cmd, SigBind):
        return f"bind {cmd.sig} handler {_block(cmd.handler)} in {_block(cmd.body)}"
    if isinstance(cmd, SigBindOnce):
        return f"bindonce {cmd.sig} handler {_block(cmd.handler)} in {_block(cmd.body)}"
    if isinstance(cmd, SigBlock):
        return f"block {cmd.sig} in {_block(cmd.body)}"
    if isinstance(cmd, SigBlockOnce):
        return f"blockonce {cmd.sig} in {_block(cmd.body)}"
    raise TypeError(f"not a command: {cmd!r}")


def render(program: Program) -> str:
    decls = ", ".join(f"{n}={v}" for n, v in program.initial_vars)
    head = f"vars {decls} ;" if decls else "vars ;"
    return f"{head} {render_command(program.command)}"


# -- parsing ----------------------------------------------------------------

KEYWORDS = frozenset({
    "vars", "skip", "while", "do", "throw", "try", "catch",
    "bind", "bindonce", "handler", "in", "block", "blockonce",
})

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+|\#[^\n]*)
  | (?P<nl>\n)
  | (?P<int>-?[0-9]+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>:=|[;{}()+=,])
""", re.VERBOSE)


class ParseError(Exception):
    def __init__(self, message: str, line: int, column: int,
                 expected: frozenset[str] = frozenset()):
        self.message = message
        self.line = line
        self.column = column
        self.expected = expected
        exp = f" (expected one of: {', '.join(sorted(expected))})" if expected else ""
        super().__init__(f"{line}:{column}: {message}{exp}")


@dataclass(slots=True)
class _Tok:
    kind: str   # 'int', 'ident', 'kw', 'op', 'eof'
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        col = pos - line_start + 1
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "ident":
            word = m.group()
            toks.append(_Tok("kw" if word in KEYWORDS else "ident", word, line, col))
        elif kind in ("int", "op"):
            toks.append(_Tok(kind, m.group(), line, col))
        pos = m.end()
    toks.append(_Tok("eof", "<end of input>", line, pos - line_start + 1))
    return toks


_ATOM_START = frozenset({"skip", "throw", "while", "try", "bind", "bindonce",
                         "block", "blockonce", "{", "<identifier>"})


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def fail(self, expected: frozenset[str], message: str | None = None) -> ParseError:
        t = self.tok
        return ParseError(message or f"unexpected {t.text!r}", t.line, t.col, expected)

    def at(self, text: str) -> bool:
        t = self.tok
        return t.kind in ("kw", "op") and t.text == text

    def expect(self, text: str) -> _Tok:
        if not self.at(text):
            msg = "unclosed block" if text == "}" and self.tok.kind == "eof" else None
            raise self.fail(frozenset({text}), msg)
        t = self.tok
        self.i += 1
        return t

    def ident(self) -> str:
        t = self.tok
        if t.kind != "ident":
            raise self.fail(frozenset({"<identifier>"}))
        self.i += 1
        return t.text

    def integer(self) -> int:
        t = self.tok
        if t.kind != "int":
            raise self.fail(frozenset({"<integer>"}))
        self.i += 1
        return int(t.text)

    def program(self) -> Program:
        self.expect("vars")
        decls: list[tuple[str, int]] = []
        if not self.at(";"):
            while True:
                t = self.tok
                name = self.ident()
                self.expect("=")
                if any(n == name for n, _ in decls):
                    raise ParseError(f"duplicate variable {name!r}", t.line, t.col)
                decls.append((name, self.integer()))
                if not self.at(","):
                    break
                self.i += 1
        self.expect(";")
        cmd = self.command()
        if self.tok.kind != "eof":
            raise self.fail(frozenset({";", "<end of input>"}))
        return Program(cmd, tuple(decls))

    def command(self) -> Command:
        first = self.atom()
        if self.at(";"):
            self.i += 1
            return Seq(first, self.command())
        return first

    def atom(self) -> Command:
        t = self.tok
        if t.kind == "ident":
            self.i += 1
            self.expect(":=")
            return Assign(t.text, self.expr())
        if t.kind not in ("kw", "op"):
            raise self.fail(_ATOM_START)
        word = t.text
        if word == "skip":
            self.i += 1
            return Skip()
        if word == "throw":
            self.i += 1
            return Throw(self.ident())
        if word == "while":
            self.i += 1
            cond = self.expr()
            self.expect("do")
            return While(cond, self.atom())
        if word == "try":
            self.i += 1
            body = self.atom()
            self.expect("catch")
            exn = self.ident()
            return TryCatch(body, exn, self.atom())
        if word in ("bind", "bindonce"):
            self.i += 1
            sig = self.ident()
            self.expect("handler")
            handler = self.atom()
            self.expect("in")
            body = self.atom()
            return (SigBind if word == "bind" else SigBindOnce)(sig, body, handler)
        if word in ("block", "blockonce"):
            self.i += 1
            sig = self.ident()
            self.expect("in")
            body = self.atom()
            return (SigBlock if word == "block" else SigBlockOnce)(sig, body)
        if word == "{":
            self.i += 1
            inner = self.command()
            self.expect("}")
            return inner
        raise self.fail(_ATOM_START)

    def expr(self) -> Expr:
        e = self.term()
        while self.at("+"):
            self.i += 1
            e = Add(e, self.term())
        return e

    def term(self) -> Expr:
        t = self.tok
        if t.kind == "ident":
            self.i += 1
            return Var(t.text)
        if t.kind == "int":
            self.i += 1
            return Lit(int(t.text))
        if self.at("("):
            self.i += 1
            e = self.expr()
            self.expect(")")
            return e
        raise self.fail(frozenset({"<identifier>", "<integer>", "("}))


def parse(text: str) -> Program:
    """Parse a whole program; raises ParseError with position and expected tokens."""
    return _Parser(text).program()


def parse_command(text: str) -> Command:
    p = _Parser(text)
    cmd = p.command()
    if p.tok.kind != "eof":
        raise p.fail(frozenset({";", "<end of input>"}))
    return cmd


# -- static checks ----------------------------------------------------------

def well_formed(program: Program | Command) -> list[Violation]:
    """Report signal names used with both persistent and one-shot constructs.

    A block counts as a use of its kind only when the name is bound somewhere
    by the other kind; blocking a never-bound name is harmless.
    """
    cmd = program.command if isinstance(program, Program) else program
    per_bound: set[str] = set()
    once_bound: set[str] = set()
    per_blocked: set[str] = set()
    once_blocked: set[str] = set()
    for node in _walk(cmd):
        if isinstance(node, SigBind):
            per_bound.add(node.sig)
        elif isinstance(node, SigBindOnce):
            once_bound.add(node.sig)
        elif isinstance(node, SigBlock):
            per_blocked.add(node.sig)
        elif isinstance(node, SigBlockOnce):
            once_blocked.add(node.sig)
    mixed = (per_bound & once_bound) | (per_blocked & once_bound) | (once_blocked & per_bound)
    return [Violation("MixedKind", z) for z in sorted(mixed)]


def undeclared_reads(program: Program) -> list[str]:
    """Variables read somewhere in the program but absent from ``vars``."""
    declared = {n for n, _ in program.initial_vars}
    seen: set[str] = set()
    for node in _walk(program.command):
        if isinstance(node, Assign):
            seen.update(_expr_vars(node.rhs))
        elif isinstance(node, While):
            seen.update(_expr_vars(node.cond))
    return sorted(seen - declared)
