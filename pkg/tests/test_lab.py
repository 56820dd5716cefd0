import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracplap.geometry import Ball, Box, Difference, DomainSequence, DomainSequenceSpec, build_grid, rasterize
from fracplap.kernel import DiscreteField, FractionalParams, SourceTerm
from fracplap.lab import (
    CSV_COLUMNS,
    ExperimentOptions,
    PerturbationRun,
    StepRecord,
    assign_verdict,
    convergence_table,
    parse_convergence_table,
    run_experiment,
    run_sequence,
    strong_convergence_check,
)
from fracplap.solver import SolverOptions

RADII = (0.3, 0.15, 0.075, 0.0375, 0.01875)


def rec(k, cap_out, gap, cap_in=0.0, status="ok"):
    return StepRecord(k, 0.1, cap_out, cap_in, gap, 0.0, 0.0, status)


def test_verdict_rules():
    assert assign_verdict([]) == "inconclusive"
    assert assign_verdict([rec(1, 10, 1), rec(2, 1, 0.1)]) == "converged"
    assert assign_verdict([rec(1, 10, 1), rec(2, 5, 0.5)]) == "not_converged"
    assert assign_verdict([rec(1, 10, 1), rec(2, 1, 0.5)]) == "inconclusive"
    assert assign_verdict([rec(1, 10, 1), rec(2, 1, 0.1, status="nonconverged")]) == "inconclusive"
    assert assign_verdict([rec(1, 0, 1, cap_in=5), rec(2, 0, 0.9, cap_in=5)]) == "not_converged"


@pytest.fixture(scope="module")
def hole_run():
    g = build_grid(1, [0], [1], 1 / 63)
    spec = DomainSequenceSpec("shrinking_hole", Difference(Box((0,), (1,)), Ball((0.5,), 0.3)), radii=RADII[:4])
    return run_experiment(spec, SourceTerm.constant(g, 1.0), FractionalParams(0.5, 2))


def test_constant_sequence_all_zero():
    g = build_grid(1, [0], [1], 1 / 31)
    omega = rasterize(g, Box((0.1,), (0.9,)))
    run = run_sequence(DomainSequence(omega, [omega] * 3), SourceTerm.constant(g, 1.0), FractionalParams(0.5, 2))
    for name in ("dH", "cap_out", "cap_in", "sol_gap_sp", "energy_gap"):
        assert np.all(run.column(name) == 0)
    assert run.verdict == "converged"
    check = strong_convergence_check(run)
    assert check.passed and check.energy_gap_ratio == 0.0


def test_shrinking_hole_columns(hole_run):
    assert len(hole_run.records) == 4
    assert all(r.step_status == "ok" for r in hole_run.records)
    for name in ("dH", "cap_out", "sol_gap_sp", "energy_gap"):
        col = hole_run.column(name)
        assert np.all(np.diff(col) < 0), name
    assert np.all(hole_run.column("cap_in") == 0)
    for name in CSV_COLUMNS[1:-1]:
        col = hole_run.column(name)
        assert np.all(np.isfinite(col)) and np.all(col >= 0)


def test_strong_check_detects_corruption(hole_run):
    assert strong_convergence_check(hole_run).passed
    bad = hole_run.solutions[2]
    corrupted = DiscreteField(bad.grid, bad.values * 1.01, bad.support)
    run = PerturbationRun(**{**hole_run.__dict__, "solutions": hole_run.solutions[:2] + [corrupted] + hole_run.solutions[3:]})
    check = strong_convergence_check(run)
    assert not check.passed
    assert max(check.identity_residuals) > 1e-6


def test_table_round_trip(hole_run):
    text = convergence_table(hole_run)
    rows = text.strip().splitlines()
    assert rows[0] == ",".join(CSV_COLUMNS)
    assert all(len(r.split(",")) == 8 for r in rows)
    records, verdict = parse_convergence_table(text)
    assert verdict == hole_run.verdict
    for a, b in zip(records, hole_run.records):
        for name in CSV_COLUMNS:
            va, vb = getattr(a, name), getattr(b, name)
            if isinstance(vb, float):
                assert f"{va:.12g}" == f"{vb:.12g}"
            else:
                assert va == vb


def test_empty_run_table():
    g = build_grid(1, [0], [1], 1 / 15)
    omega = g.interior()
    run = run_sequence(DomainSequence(omega, []), SourceTerm.constant(g, 1.0), FractionalParams(0.5, 2))
    text = convergence_table(run)
    assert text.splitlines() == [",".join(CSV_COLUMNS), "verdict,inconclusive,,,,,,"]
    assert parse_convergence_table(text) == ([], "inconclusive")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(*[st.floats(0, 1e6, allow_nan=False)] * 6), min_size=0, max_size=6),
       st.sampled_from(["converged", "not_converged", "inconclusive"]))
def test_parse_accepts_every_emitted_table(rows, verdict):
    records = [StepRecord(k + 1, *vals, "ok") for k, vals in enumerate(rows)]
    g = build_grid(1, [0], [1], 0.5)
    omega = g.interior()
    zero = DiscreteField.zeros(omega)
    run = PerturbationRun(records, verdict, omega, [omega] * len(records), SourceTerm.constant(g, 0.0),
                          FractionalParams(0.5, 2), zero, [zero] * len(records))
    parsed, v = parse_convergence_table(convergence_table(run))
    assert v == verdict
    for a, b in zip(parsed, records):
        assert f"{a.cap_out:.12g}" == f"{b.cap_out:.12g}"


def test_parse_rejects_bad_tables():
    with pytest.raises(ValueError):
        parse_convergence_table("k,dH\n")
    with pytest.raises(ValueError):
        parse_convergence_table(",".join(CSV_COLUMNS) + "\n1,2,3\n")
    with pytest.raises(ValueError):
        parse_convergence_table(",".join(CSV_COLUMNS) + "\n")


def test_verdict_stable_under_random_initialisation():
    g = build_grid(1, [0], [1], 1 / 31)
    spec = DomainSequenceSpec("shrinking_hole", Difference(Box((0,), (1,)), Ball((0.5,), 0.3)), radii=RADII[:3])
    f = SourceTerm.constant(g, 1.0)
    params = FractionalParams(0.5, 2.5)
    a = run_experiment(spec, f, params, ExperimentOptions(seed=1))
    b = run_experiment(spec, f, params, ExperimentOptions(seed=2))
    assert a.verdict == b.verdict
    np.testing.assert_allclose(a.column("sol_gap_sp"), b.column("sol_gap_sp"), rtol=1e-5)


def test_periodic_perforation_reports_not_converged():
    g = build_grid(1, [0], [1], 1 / 63)
    spec = DomainSequenceSpec("periodic_perforation", Box((0,), (1,)), perforation=((0.03, 0.2),) * 3)
    run = run_experiment(spec, SourceTerm.constant(g, 1.0), FractionalParams(0.5, 2))
    assert run.verdict == "not_converged"
    assert np.all(run.column("cap_in") > 0)


def test_nonconverged_substep_makes_run_inconclusive():
    g = build_grid(1, [0], [1], 1 / 31)
    spec = DomainSequenceSpec("shrinking_hole", Difference(Box((0,), (1,)), Ball((0.5,), 0.3)), radii=RADII[:2])
    run = run_experiment(spec, SourceTerm.constant(g, 1.0), FractionalParams(0.5, 2),
                         ExperimentOptions(solver=SolverOptions(max_iterations=2)))
    assert run.verdict == "inconclusive"
    assert all(r.step_status == "nonconverged" for r in run.records)
