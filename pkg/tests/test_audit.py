"""Inequality audits: row construction, verdicts, caching, and fuzz plumbing."""

import numpy as np
import pytest

from entaudit.audit import (
    VERDICT_SLACK,
    AuditRow,
    REECache,
    audit_protocol,
    overall_verdict,
    pair_subjects,
    refinement_check,
    run_with_audits,
    subject_bracket,
    three_group_subjects,
)
from entaudit.engine import Protocol, ProtocolStep, random_protocol, run
from entaudit.protocols import ghz3_to_bc_singlet
from entaudit.ree import Partition, REEConfig
from entaudit.states import PartyLayout, make_named_state, random_density_matrix

FAST = REEConfig(gap_tol=1e-3, seed=0)


def test_pair_subjects_enumerate_unordered_pairs():
    subjects = pair_subjects(("A", "B", "C"))
    assert sorted(s.key() for s in subjects) == ["A|B", "A|C", "B|C"]


def test_three_group_subjects_cover_all_groupings():
    subjects = three_group_subjects(("A", "B", "C", "D"))
    keys = {s.key() for s in subjects}
    assert len(keys) == 10
    assert all(len(s.blocks) == 3 for s in subjects)
    # Six pair-plus-singles splits and four single-party trios.
    assert "A,B|C|D" in keys and "A|B|C" in keys


def test_ghz3_protocol_audit_passes_with_expected_families():
    result, report = run_with_audits(ghz3_to_bc_singlet(), config=REEConfig(gap_tol=1e-4))
    assert report.verdict == "pass"
    families = {r.family for r in report.rows}
    assert families == {"er_monotone", "gain_vs_entropy", "entropy_monotone"}
    by = {(r.family, r.subject): r for r in report.rows if r.step_index == 0}
    # Measuring at A cannot raise the entanglement of subjects containing A.
    assert by[("er_monotone", "A|B")].rhs == 0.0
    # For B|C the bound is the entropy lost by its complement group {A}.
    assert by[("gain_vs_entropy", "B|C")].rhs == pytest.approx(1.0)
    # Non-acting parties cannot gain entropy under a remote measurement.
    assert by[("entropy_monotone", "B")].rhs == 0.0
    assert by[("entropy_monotone", "B")].lhs_high <= VERDICT_SLACK


def test_audit_report_serializes():
    _, report = run_with_audits(ghz3_to_bc_singlet(), config=FAST)
    d = report.to_dict()
    assert d["verdict"] == "pass"
    assert d["counts"]["violation"] == 0
    assert [r["checkpoint"] for r in d["ledger"]] == ["initial", "after step 0", "final"]


def test_ree_cache_deduplicates_identical_queries():
    cache = REECache()
    state = make_named_state("ghz", [3])
    subject = Partition.parse("B|C")
    subject_bracket(state, subject, FAST, cache)
    assert (cache.hits, cache.misses) == (0, 1)
    subject_bracket(state, subject, FAST, cache)
    assert (cache.hits, cache.misses) == (1, 1)


def test_overall_verdict_aggregation():
    def row(verdict):
        return AuditRow(
            family="er_monotone", step_index=0, acting=("A",), subject="A|B",
            pre_record="-", lhs_low=0.0, lhs_high=0.0, rhs=0.0, verdict=verdict,
        )

    verdict, counts = overall_verdict([row("pass"), row("pass")])
    assert verdict == "pass" and counts["pass"] == 2
    verdict, _ = overall_verdict([row("pass"), row("indeterminate")])
    assert verdict == "indeterminate"
    verdict, _ = overall_verdict([row("indeterminate"), row("violation")])
    assert verdict == "violation"


def test_margin_property():
    r = AuditRow(
        family="gain_vs_entropy", step_index=None, acting=(), subject="B|C",
        pre_record="-", lhs_low=0.1, lhs_high=0.4, rhs=1.0, verdict="pass",
    )
    assert r.margin == pytest.approx(0.6)


def test_whole_protocol_rows_cover_every_subject():
    result = run(ghz3_to_bc_singlet())
    rows = audit_protocol(result, config=FAST)
    assert {r.subject for r in rows} == {"A|B", "A|C", "B|C"}
    assert all(r.step_index is None for r in rows)
    assert all(r.verdict == "pass" for r in rows)


def test_audit_flags_fabricated_gain_as_violation():
    # A protocol that swaps a product state for a singlet at measure time
    # cannot exist, so fabricate the claim directly: pre separable, post
    # entangled, with a zero right side. The verdict must be violation.
    from entaudit.audit import audit_step
    from entaudit.engine import Branch
    from entaudit.states import Ensemble

    product = make_named_state("product_zero", [2, 2])
    singlet = make_named_state("singlet")
    pre = Branch(record=(), probability=1.0, state=product)
    ens = Ensemble(((1.0, singlet),), labels=("0",))
    rows = audit_step(
        pre, ens, "A", config=FAST, cache=None,
        subjects=[Partition.parse("A|B")], step_index=0,
    )
    er_rows = [r for r in rows if r.family == "er_monotone"]
    assert er_rows and er_rows[0].verdict == "violation"
    assert er_rows[0].lhs_low > VERDICT_SLACK


def test_refinement_check_passes_on_random_state():
    rng = np.random.default_rng(8)
    rho = random_density_matrix(PartyLayout.qubits("ABCD"), rng, rank=2)
    row = refinement_check(
        rho, Partition.parse("A|B|C,D"), Partition.parse("A,B|C,D"), FAST
    )
    assert row.family == "refinement_monotone"
    assert row.verdict in ("pass", "indeterminate")
    assert row.verdict == "pass"


def test_refinement_check_rejects_non_refining_pair():
    rng = np.random.default_rng(8)
    rho = random_density_matrix(PartyLayout.qubits("ABCD"), rng, rank=2)
    with pytest.raises(ValueError):
        refinement_check(
            rho, Partition.parse("A,B|C,D"), Partition.parse("A,C|B,D"), FAST
        )


def test_random_protocol_audit_smoke():
    protocol = random_protocol({"A": 1, "B": 1, "C": 1}, rounds=1, seed=21)
    result, report = run_with_audits(protocol, config=FAST)
    assert report.counts["violation"] == 0
    assert report.rows
    assert report.ledger[0].checkpoint == "initial"
    assert report.ledger[-1].checkpoint == "final"
