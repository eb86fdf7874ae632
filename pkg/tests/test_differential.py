import json

import pytest
from hypothesis import given, settings

from sigsem.bigstep import Budget, Normal, PriorityMode
from sigsem.differential import (
    CORPUS_POOLS, CorpusTooLarge, DiffReport, GenParams, audit_bigstep, audit_machine,
    check_program, compare, detect_mutation, exhaustive_corpus, fuzz_corpus, gen_program,
    report_json, reports_jsonl, run_batch,
)
from sigsem.machine import MUTATIONS
from sigsem.store import State
from sigsem.syntax import (
    Assign, Skip, Throw, TryCatch, While, Lit, Program, _walk, ast_size, parse, render,
    undeclared_reads, well_formed,
)
from golden import BIND_IN_TRY
from strategies import programs

B22 = Budget(2, 2)


def test_generation_is_deterministic():
    assert fuzz_corpus(50, 7) == fuzz_corpus(50, 7)
    assert fuzz_corpus(50, 7) != fuzz_corpus(50, 8)
    assert gen_program(GenParams(seed=3), 11) == fuzz_corpus(12, 3)[11]


def test_depth_one_is_a_leaf():
    for i in range(100):
        c = gen_program(GenParams(max_depth=1), i).command
        assert isinstance(c, (Skip, Assign, Throw))


def test_generated_programs_are_well_formed():
    for p in fuzz_corpus(1000, 42):
        assert well_formed(p) == []
        assert undeclared_reads(p) == []


def test_throws_are_mostly_inside_try():
    inside = total = 0

    def walk(c, in_try):
        nonlocal inside, total
        if isinstance(c, Throw):
            total += 1
            inside += in_try
        for child in getattr(c, "__dataclass_fields__", {}):
            v = getattr(c, child)
            if isinstance(c, TryCatch) and child == "body":
                walk(v, True)
            elif hasattr(v, "__dataclass_fields__"):
                walk(v, in_try)

    for p in fuzz_corpus(1000, 42):
        walk(p.command, False)
    assert total and inside / total >= 0.5


def test_corpus_size_one_is_the_nullary_commands():
    corpus = exhaustive_corpus(1)
    rendered = sorted(render(p) for p in corpus)
    assert len(corpus) == 5
    assert [render(p).split(";", 1)[1].strip() for p in sorted(corpus, key=render)] == \
        sorted(["skip", "throw e1", "x := 0", "x := 1", "x := x"])
    assert len(set(rendered)) == len(rendered)


def test_corpus_is_unique_bounded_and_well_formed():
    corpus = exhaustive_corpus(4)
    assert len(set(corpus)) == len(corpus)
    for p in corpus:
        assert ast_size(p.command) <= 4
        assert well_formed(p) == []
    assert {p.initial_vars for p in corpus} == {(("x", 0),)}


def test_corpus_limit():
    with pytest.raises(CorpusTooLarge):
        exhaustive_corpus(8)


def test_compare_signal_free():
    r = compare(parse("vars x=0; x := x + 1; x := x + 1"), B22)
    assert r.verdict == "Equal" and r.bigstep_outcomes == {Normal(State({"x": 2}))}


def test_compare_bind_in_try():
    r = compare(BIND_IN_TRY, B22)
    assert r.verdict == "Equal"
    assert Normal(State({"x": 1, "y": 0, "r": 0})) in r.machine_outcomes
    assert Normal(State({"x": 0, "y": 1, "r": 1})) in r.machine_outcomes


def test_compare_divergent_is_incomparable():
    r = compare(Program(While(Lit(1), Skip()), ()), B22)
    assert r.verdict == "BudgetIncomparable" and not r.is_mismatch


def test_verdicts_for_missing_outcomes():
    p = parse("vars x=0; skip")
    a, b = Normal(State({"x": 0})), Normal(State({"x": 1}))
    assert DiffReport(p, frozenset({a, b}), frozenset({a})).verdict == "MissingInMachine"
    assert DiffReport(p, frozenset({a}), frozenset({a, b})).verdict == "MissingInBigstep"
    doc = report_json(DiffReport(p, frozenset({a, b}), frozenset({a})))
    assert doc["witness"] == {"kind": "normal", "state": {"x": 1}, "missing_in": "machine"}


def test_jsonl_fields():
    reports = run_batch(exhaustive_corpus(2), B22)
    lines = list(reports_jsonl(reports))
    assert len(lines) == len(reports)
    for line in lines:
        doc = json.loads(line)
        assert set(doc) == {"program", "verdict", "bigstep_count", "machine_count"}
    assert [json.loads(x)["program"] for x in lines] == sorted(json.loads(x)["program"] for x in lines)


def test_batch_parallel_matches_serial():
    progs = fuzz_corpus(20, 1)
    assert [report_json(r) for r in run_batch(progs, B22, workers=2)] == \
        [report_json(r) for r in run_batch(progs, B22)]


def test_audits_on_skip():
    p = parse("vars x=0; skip")
    assert audit_machine(p) == [] and audit_bigstep(p) == []


def test_used_flip_mutation_refires():
    # the inner block's exit restores a mask saved before the firing, so z is enabled again
    p = parse("vars x=0; bindonce z handler { x := x + 1 } in { block q in skip }")
    kinds = {v.kind for v in audit_machine(p, Budget(2, 0), frozenset({"skip-used-flip"}))}
    assert "OneShotRefired" in kinds
    assert compare(p, Budget(2, 0), frozenset({"skip-used-flip"})).verdict == "MissingInBigstep"


@pytest.mark.parametrize("mutation", sorted(MUTATIONS))
def test_every_mutation_is_detected(mutation):
    hit = detect_mutation(mutation, exhaustive_corpus(6), B22)
    assert hit is not None


def test_check_program_agrees():
    chk = check_program(BIND_IN_TRY, B22)
    assert chk.split_agrees and chk.violations == () and chk.report.verdict == "Equal"


@given(programs())
@settings(max_examples=60, deadline=None)
def test_small_programs_equivalent(p):
    assert not compare(p, Budget(1, 1)).is_mismatch
