"""Machine runs transcribed row by row from three worked examples.

Each row is ``(current, beta, J, K)`` with J as ``(kind, name, used)`` triples
and K as rendered frames, both top first.  The worked examples sometimes leave
the bottom ``ret`` frame implicit, so a trailing ``ret`` is dropped from K on
both sides before comparing.
"""

from sigsem.machine import STRUCTURAL, FireOnce, FirePersistent
from sigsem.syntax import parse

S = STRUCTURAL

# binding inside a try block; z fires at the third step and its handler throws
BIND_IN_TRY = parse("vars x=0, y=0, r=0; try { bind z handler { y := 1 ; throw e } in "
                    "{ x := 1 } } catch e { r := 1 }")
BIND_IN_TRY_SCHEDULE = [S, S, FirePersistent("z")]
_ZE = [("per", "z", 0), ("exn", "e", 0)]
BIND_IN_TRY_ROWS = [
    ("try { bind z handler { y := 1 ; throw e } in { x := 1 } } catch e { r := 1 }", [], [], []),
    ("bind z handler { y := 1 ; throw e } in { x := 1 }", [], [("exn", "e", 0)], ["popupd[]"]),
    ("x := 1", ["z"], _ZE, ["popupd[]", "popupd[]"]),
    ("y := 1 ; throw e", [], _ZE, ["upd[z]", "x := 1", "popupd[]", "popupd[]"]),
    ("y := 1", [], _ZE, ["throw e", "upd[z]", "x := 1", "popupd[]", "popupd[]"]),
    ("throw e", [], _ZE, ["upd[z]", "x := 1", "popupd[]", "popupd[]"]),
    ("r := 1", [], [], []),
    ("ret", [], [], []),
]
BIND_IN_TRY_STATES = [
    {"r": 0, "x": 0, "y": 0}, {"r": 0, "x": 0, "y": 0}, {"r": 0, "x": 0, "y": 0},
    {"r": 0, "x": 0, "y": 0}, {"r": 0, "x": 0, "y": 0}, {"r": 0, "x": 0, "y": 1},
    {"r": 0, "x": 0, "y": 1}, {"r": 1, "x": 0, "y": 1},
]

# exception handling inside a binding; z fires before the throw and before g
TRY_IN_BIND = parse("vars y=0, r=0; bind z handler { y := y + 1 } in "
                    "{ try { throw e } catch e { r := 1 } }")
TRY_IN_BIND_SCHEDULE = [S, S, FirePersistent("z"), S, S, S, FirePersistent("z")]
_EZ = [("exn", "e", 0), ("per", "z", 0)]
_Z = [("per", "z", 0)]
TRY_IN_BIND_ROWS = [
    ("bind z handler { y := y + 1 } in { try { throw e } catch e { r := 1 } }", [], [], []),
    ("try { throw e } catch e { r := 1 }", ["z"], _Z, ["popupd[]"]),
    ("throw e", ["z"], _EZ, ["popupd[z]", "popupd[]"]),
    ("y := y + 1", [], _EZ, ["upd[z]", "throw e", "popupd[z]", "popupd[]"]),
    ("upd[z]", [], _EZ, ["throw e", "popupd[z]", "popupd[]"]),
    ("throw e", ["z"], _EZ, ["popupd[z]", "popupd[]"]),
    ("r := 1", ["z"], _Z, ["popupd[]"]),
    ("y := y + 1", [], _Z, ["upd[z]", "r := 1", "popupd[]"]),
    ("upd[z]", [], _Z, ["r := 1", "popupd[]"]),
    ("r := 1", ["z"], _Z, ["popupd[]"]),
    ("popupd[]", ["z"], _Z, []),
    ("ret", [], [], []),
]

# one-shot binding around a sequence; fires once before the first command
ONCE_SEQ = parse("vars x=0, y=0, w=0; bindonce z handler { w := 1 } in { x := 1 ; y := 1 }")
ONCE_SEQ_SCHEDULE = [S, S, FireOnce("z")]
ONCE_SEQ_ROWS = [
    ("bindonce z handler { w := 1 } in { x := 1 ; y := 1 }", [], [], []),
    ("x := 1 ; y := 1", ["z"], [("once", "z", 0)], ["popupd[]"]),
    ("x := 1", ["z"], [("once", "z", 0)], ["y := 1", "popupd[]"]),
    ("w := 1", [], [("once", "z", 1)], ["upd[]", "x := 1", "y := 1", "popupd[]"]),
    ("upd[]", [], [("once", "z", 1)], ["x := 1", "y := 1", "popupd[]"]),
    ("x := 1", [], [("once", "z", 1)], ["y := 1", "popupd[]"]),
    ("y := 1", [], [("once", "z", 1)], ["popupd[]"]),
    ("popupd[]", [], [("once", "z", 1)], []),
    ("ret", [], [], []),
]

GOLDEN = {
    "bind-in-try": (BIND_IN_TRY, BIND_IN_TRY_SCHEDULE, BIND_IN_TRY_ROWS),
    "try-in-bind": (TRY_IN_BIND, TRY_IN_BIND_SCHEDULE, TRY_IN_BIND_ROWS),
    "once-seq": (ONCE_SEQ, ONCE_SEQ_SCHEDULE, ONCE_SEQ_ROWS),
}


def row_of(config_doc: dict) -> tuple:
    k = list(config_doc["k"])
    if k and k[-1] == "ret":
        k.pop()
    j = [(t["kind"], t["name"], t["used"]) for t in config_doc["j"]]
    return (config_doc["current"], config_doc["beta"], j, k)
