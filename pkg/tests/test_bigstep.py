import pytest
from hypothesis import given, settings

from sigsem.bigstep import (
    BUDGET_EXCEEDED, Budget, BudgetExceeded, ChoiceOutOfRange, Normal, PriorityMode, Uncaught,
    derivation_render, enumerate, enumerate_split_oracle, iter_derivations, run_scheduled,
)
from sigsem.differential import audit_derivation
from sigsem.store import EMPTY_SIGMAP, SigMap, State
from sigsem.syntax import parse, parse_command
from rule_cases import RULE_CASES, SEQ_PROPAGATION, RuleCase
from strategies import loop_free, programs

EXC = PriorityMode.EXCEPTION
SIG = PriorityMode.SIGNAL


def top(program, budget=Budget(), mode=EXC):
    return enumerate(EMPTY_SIGMAP, EMPTY_SIGMAP, State(program.initial_vars),
                     program.command, budget, mode)


def derivations(program, budget=Budget(), mode=EXC):
    return list(iter_derivations(EMPTY_SIGMAP, EMPTY_SIGMAP, State(program.initial_vars),
                                 program.command, budget, mode))


def norm(**kv):
    return Normal(State(kv))


# -- rule fidelity ----------------------------------------------------------

@pytest.mark.parametrize("case", RULE_CASES + SEQ_PROPAGATION, ids=lambda c: c.label)
def test_rule_instance(case: RuleCase):
    out, d = run_scheduled(case.s_bind, case.o_bind, case.state, case.command,
                           Budget(handler_fuel=1), EXC, case.picks)
    assert out == case.outcome
    assert d.rule == case.label
    assert tuple(p.rule for p in d.premises) == case.premises
    assert (d.s_bind, d.o_bind, d.state, d.command, d.outcome) == \
        (case.s_bind, case.o_bind, case.state, case.command, case.outcome)
    assert out in enumerate(case.s_bind, case.o_bind, case.state, case.command,
                            Budget(handler_fuel=1), EXC)


def test_handler_premises_run_isolated():
    for case in RULE_CASES:
        if "Shot" in case.label:
            _, d = run_scheduled(case.s_bind, case.o_bind, case.state, case.command,
                                 Budget(handler_fuel=1), EXC, case.picks)
            handler = d.premises[1] if case.label in ("PerShotHandl", "OneShotHandl") else d.premises[0]
            assert handler.s_bind == EMPTY_SIGMAP and handler.o_bind == EMPTY_SIGMAP
            assert handler.command == parse_command("y := x")


def test_one_shot_removed_after_firing_before():
    case = next(c for c in RULE_CASES if c.label == "OneShotHandl2")
    _, d = run_scheduled(case.s_bind, case.o_bind, case.state, case.command,
                         Budget(handler_fuel=1), EXC, case.picks)
    assert d.premises[1].o_bind == SigMap()


@given(programs(loop_free))
@settings(max_examples=150, deadline=None)
def test_seq_propagation_matches_hand_rules(p):
    # hand-coded propagation: outcomes of c1; c2 from the outcome sets of c1 and c2
    c = parse_command("x := x + 1")
    from sigsem.syntax import Seq
    b = Budget(handler_fuel=0)
    s0 = State(p.initial_vars)
    seq = enumerate(EMPTY_SIGMAP, EMPTY_SIGMAP, s0, Seq(p.command, c), b, EXC)
    expected = set()
    for o in enumerate(EMPTY_SIGMAP, EMPTY_SIGMAP, s0, p.command, b, EXC):
        if isinstance(o, Normal):
            expected |= enumerate(EMPTY_SIGMAP, EMPTY_SIGMAP, o.state, c, b, EXC)
        else:
            expected.add(o)
    assert seq == expected


# -- enumerate examples -----------------------------------------------------

def test_atomic_example():
    for mode in (EXC, SIG):
        assert top(parse("vars x=0; x := x + 1"), Budget(0, 0), mode) == {norm(x=1)}


def test_throw_keeps_state():
    for mode in (EXC, SIG):
        assert top(parse("vars x=3; throw e"), mode=mode) == {Uncaught("e", State({"x": 3}))}


def test_one_shot_fires_before_after_or_never():
    out = enumerate(EMPTY_SIGMAP, SigMap({"z": parse_command("y := 1")}), State({"x": 0, "y": 0}),
                    parse_command("x := 1"), Budget(handler_fuel=1), EXC)
    assert out == {norm(x=1, y=0), norm(x=1, y=1)}


def test_persistent_with_exception_in_try():
    p = parse("vars x=0, y=0, r=0; try { bind z handler { y := 1 ; throw e } in { x := 1 } }"
              " catch e { r := 1 }")
    out = top(p)
    # fired before x := 1 (exception propagates, g runs), after it, or never
    assert out == {norm(r=1, x=0, y=1), norm(r=1, x=1, y=1), norm(r=0, x=1, y=0)}


def test_splitting_one_shot_in_sequence():
    p = parse("vars x=0, y=0, w=0; bindonce z handler { w := x + y } in { x := 1 ; y := 1 }")
    # fired before x := 1, between the two assignments, after both, or never
    assert top(p) == {norm(w=0, x=1, y=1), norm(w=1, x=1, y=1), norm(w=2, x=1, y=1)}


def test_split_oracle_places_one_shot_in_second_half():
    p = parse("vars x=0, y=0, w=0; bindonce z handler { w := x + y } in { x := 1 ; y := 1 }")
    assert norm(w=2, x=1, y=1) in enumerate_split_oracle(
        EMPTY_SIGMAP, EMPTY_SIGMAP, State(p.initial_vars), p.command, Budget(), EXC)


def test_split_oracle_without_one_shots_matches():
    p = parse("vars x=0; bind z handler { x := x + 1 } in { x := x + 1 ; x := x + 1 }")
    s0 = State(p.initial_vars)
    assert enumerate_split_oracle(EMPTY_SIGMAP, EMPTY_SIGMAP, s0, p.command, Budget(), EXC) == top(p)


def test_one_shot_tree_shape_when_fired_before_first_command():
    p = parse("vars x=0, y=0, w=0; bindonce z handler { w := 5 } in { x := 1 ; y := 1 }")
    # no firing before the sequence as a whole, then fire before x := 1
    out, d = run_scheduled(EMPTY_SIGMAP, EMPTY_SIGMAP, State(p.initial_vars), p.command,
                           Budget(), EXC, (0, 1))
    assert out == norm(w=5, x=1, y=1)
    assert d.rule == "OneSigBind"
    seq = d.premises[0]
    assert seq.rule == "SeqComp"
    assert seq.premises[0].rule == "OneShotHandl2"
    assert seq.premises[0].command == parse_command("x := 1")
    assert seq.premises[1].command == parse_command("y := 1")
    assert seq.premises[1].o_bind == SigMap()


@pytest.mark.parametrize("fuel", [0, 1, 2, 3])
def test_persistent_handler_fires_any_number_up_to_fuel(fuel):
    p = parse("vars x=0, y=0, w=0; bind z handler { w := w + 1 } in { x := 1 ; y := 1 }")
    assert {o.state["w"] for o in top(p, Budget(handler_fuel=fuel))} == set(range(fuel + 1))


def test_scope_confinement_in_catch():
    p = parse("vars y=0, r=0; try { bind z handler { y := y + 1 } in { throw e } } catch e { r := y }")
    for _, _, d in derivations(p):
        if d.rule == "Handl":
            catch_side = d.premises[1]
            assert not any(n.fired for n in catch_side.walk())
    assert top(p) == {norm(r=0, y=0), norm(r=1, y=1), norm(r=2, y=2)}


def test_render_one_shot_before():
    p = parse("vars x=0; bindonce z handler { x := 7 } in { x := x + 1 }")
    _, d = run_scheduled(EMPTY_SIGMAP, EMPTY_SIGMAP, State(p.initial_vars), p.command,
                         Budget(), EXC, (1,))
    lines = derivation_render(d).splitlines()
    assert lines[0].startswith("(OneSigBind)")
    assert lines[1].startswith("  (OneShotHandl2")
    assert any(line.startswith("    (Atomic") and "x := x + 1" in line for line in lines)
    assert derivation_render(d) == derivation_render(d)


def test_render_throw_leaf():
    _, d = run_scheduled(EMPTY_SIGMAP, EMPTY_SIGMAP, State(), parse_command("throw e"))
    assert derivation_render(d).count("\n") == 0
    assert derivation_render(d).startswith("(Throw)")


def test_choice_out_of_range():
    with pytest.raises(ChoiceOutOfRange) as info:
        run_scheduled(SigMap({"a": parse_command("skip"), "b": parse_command("skip")}), EMPTY_SIGMAP,
                      State(), parse_command("skip"), Budget(), EXC, (99,))
    assert (info.value.index, info.value.available) == (99, 3)


def test_empty_picks_on_signal_free_program():
    p = parse("vars x=0; try { x := 2 ; throw e } catch e { x := x + 1 }")
    out, _ = run_scheduled(EMPTY_SIGMAP, EMPTY_SIGMAP, State(p.initial_vars), p.command)
    assert {out} == top(p)


def test_while_rules_and_budget():
    assert top(parse("vars x=0; while x do skip")) == {norm(x=0)}
    assert top(parse("vars x=3; while x do x := x + -1"), Budget(0, 3)) == {norm(x=0)}
    assert top(parse("vars x=3; while x do x := x + -1"), Budget(0, 2)) == {BUDGET_EXCEEDED}
    assert top(parse("vars x=0; while 1 do skip")) == {BUDGET_EXCEEDED}


def test_fuel_does_not_produce_budget_exceeded():
    p = parse("vars x=0; bind z handler { x := x + 1 } in skip")
    assert not any(isinstance(o, BudgetExceeded) for o in top(p, Budget(handler_fuel=0)))


# -- priority modes ---------------------------------------------------------

PRIORITY = parse("vars x=0, y=0, r=0; try { bind z handler { y := y + 1 ; throw e } in "
                 "{ x := 1 } } catch e { r := 1 }")


def test_signal_priority_strictly_larger():
    exc, sig = top(PRIORITY), top(PRIORITY, mode=SIG)
    assert exc < sig
    assert sig - exc == {norm(r=1, x=0, y=2), norm(r=1, x=1, y=2)}


def test_exception_priority_never_fires_after_raise():
    for picks, _, d in derivations(PRIORITY):
        assert audit_derivation(d, EXC) == []


def test_signal_priority_derivations_fire_after_raise():
    exc = top(PRIORITY)
    for _, out, d in derivations(PRIORITY, mode=SIG):
        if out in exc:
            continue
        late = [n for n in d.walk()
                if n.rule.startswith("PerShotHandl") and not n.rule.startswith("PerShotHandl2")
                and isinstance(n.premises[0].outcome, Uncaught)]
        assert late and late[0].premises[1].state != late[0].premises[1].outcome.state


# -- properties -------------------------------------------------------------

@given(programs())
@settings(max_examples=120, deadline=None)
def test_fuel_monotone(p):
    for k in range(2):
        small = top(p, Budget(k, 2)) - {BUDGET_EXCEEDED}
        big = top(p, Budget(k + 1, 2)) - {BUDGET_EXCEEDED}
        assert small <= big


@given(programs())
@settings(max_examples=120, deadline=None)
def test_threading_matches_split_oracle(p):
    s0 = State(p.initial_vars)
    for mode in (EXC, SIG):
        assert enumerate(EMPTY_SIGMAP, EMPTY_SIGMAP, s0, p.command, Budget(2, 2), mode) == \
            enumerate_split_oracle(EMPTY_SIGMAP, EMPTY_SIGMAP, s0, p.command, Budget(2, 2), mode)


@given(programs())
@settings(max_examples=80, deadline=None)
def test_scheduled_runs_cover_enumeration(p):
    b = Budget(1, 2)
    found = {out for _, out, _ in derivations(p, b)}
    assert found == top(p, b)


@given(programs())
@settings(max_examples=80, deadline=None)
def test_derivations_pass_audit(p):
    b = Budget(2, 2)
    for _, _, d in derivations(p, b):
        assert audit_derivation(d, EXC) == []
        fired = sum(1 for n in d.walk() if n.fired)
        assert fired <= b.handler_fuel
