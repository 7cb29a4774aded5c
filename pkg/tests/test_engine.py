"""Branching protocol engine: schemas, conditions, and determinism."""

import math

import numpy as np
import pytest

from entaudit.engine import (
    MAX_BRANCHES,
    Protocol,
    ProtocolStep,
    build_initial_state,
    random_protocol,
    run,
)
from entaudit.states import DimensionCapExceeded, partial_trace, von_neumann_entropy


def singlet_then_conditional_flip() -> Protocol:
    return Protocol(
        name="flip-on-one",
        initial={"named": "singlet"},
        steps=(
            ProtocolStep("measure", "A", {"basis": "computational"}, audit=True),
            ProtocolStep("local_unitary", "B", {"gate": "X"}, condition=((0, "1"),)),
        ),
    )


def test_step_validation():
    with pytest.raises(ValueError):
        ProtocolStep("teleport", "A")
    with pytest.raises(ValueError):
        ProtocolStep("local_unitary", "A", {"gate": "X"}, audit=True)
    with pytest.raises(ValueError):
        ProtocolStep("attach_ancilla", "A", {"dim": 2}, condition=((0, "0"),))


def test_protocol_condition_must_reference_earlier_measure():
    measure = ProtocolStep("measure", "A", {"basis": "computational"})
    flip = ProtocolStep("local_unitary", "B", {"gate": "X"}, condition=((0, "0"),))
    Protocol(name="ok", initial={"named": "singlet"}, steps=(measure, flip))
    with pytest.raises(ValueError):
        Protocol(name="bad", initial={"named": "singlet"}, steps=(flip, measure))
    unitary = ProtocolStep("local_unitary", "A", {"gate": "H"})
    with pytest.raises(ValueError):
        Protocol(name="bad2", initial={"named": "singlet"}, steps=(unitary, flip))


def test_json_round_trip_is_byte_stable():
    p = singlet_then_conditional_flip()
    text = p.to_json()
    again = Protocol.from_json(text)
    assert again == p
    assert again.to_json() == text


def test_initial_state_forms():
    named = build_initial_state({"named": "ghz", "params": [3]})
    assert named.layout.parties == ("A", "B", "C")

    relabeled = build_initial_state({"named": "singlet", "parties": ["X", "Y"]})
    assert relabeled.layout.parties == ("X", "Y")

    s = 1.0 / math.sqrt(2.0)
    literal = build_initial_state(
        {"layout": {"A": [2], "B": [2]}, "amplitudes": [[s, 0.0], [0.0, 0.0], [0.0, 0.0], [s, 0.0]]}
    )
    assert von_neumann_entropy(partial_trace(literal, ["A"])) == pytest.approx(1.0)

    joined = build_initial_state(
        {
            "tensor": [
                {"named": "singlet", "parties": ["A", "B"]},
                {"named": "singlet", "parties": ["B", "C"]},
            ]
        }
    )
    assert joined.layout.dims == ((2,), (2, 2), (2,))

    with pytest.raises(DimensionCapExceeded):
        build_initial_state({"named": "ghz", "params": [4]}, dim_cap=8)


def test_conditioned_step_applies_only_to_matching_branches():
    result = run(singlet_then_conditional_flip())
    assert len(result.branches) == 2
    assert sum(b.probability for b in result.branches) == pytest.approx(1.0)
    by_record = {b.record[0][1]: b.state for b in result.branches}
    # Outcome "0" leaves |00>, outcome "1" collapses to |11> then flips B.
    np.testing.assert_allclose(abs(by_record["0"].amplitudes[0]), 1.0, atol=1e-12)
    np.testing.assert_allclose(abs(by_record["1"].amplitudes[2]), 1.0, atol=1e-12)


def test_attach_ancilla_grows_every_branch():
    p = Protocol(
        name="grow",
        initial={"named": "singlet"},
        steps=(
            ProtocolStep("measure", "A", {"basis": "computational"}),
            ProtocolStep("attach_ancilla", "B", {"dim": 3}),
        ),
    )
    result = run(p)
    for b in result.branches:
        assert b.state.layout.dims == ((2,), (2, 3))


def test_measure_event_probabilities_sum_to_one():
    result = run(singlet_then_conditional_flip())
    ev = result.events[0]
    assert ev.audit
    probs = ev.outcome_probabilities()
    assert sum(probs.values()) == pytest.approx(1.0)
    assert set(probs) == {"0", "1"}


def test_subsystem_targeted_measurement():
    p = Protocol(
        name="partial-measure",
        initial={
            "tensor": [
                {"named": "singlet", "parties": ["A", "B"]},
                {"named": "singlet", "parties": ["B", "C"]},
            ]
        },
        steps=(
            ProtocolStep("measure", "B", {"basis": "computational", "subsystems": [0]}),
        ),
    )
    result = run(p)
    # Only the first B qubit collapses; the B2-C singlet survives intact.
    assert len(result.branches) == 2
    for b in result.branches:
        assert von_neumann_entropy(partial_trace(b.state, ["C"])) == pytest.approx(1.0)


def test_branch_cap_is_enforced():
    # Alternating bases keep every measurement binary, so branches double.
    steps = (
        ProtocolStep("measure", "A", {"basis": "x"}),
        ProtocolStep("measure", "A", {"basis": "computational"}),
    )
    p = Protocol(name="cap", initial={"named": "singlet"}, steps=steps)
    with pytest.raises(ValueError):
        run(p, branch_cap=2)


def test_random_protocol_is_seed_deterministic():
    a = random_protocol({"A": 1, "B": 1, "C": 1}, rounds=2, seed=9)
    b = random_protocol({"A": 1, "B": 1, "C": 1}, rounds=2, seed=9)
    c = random_protocol({"A": 1, "B": 1, "C": 1}, rounds=2, seed=10)
    assert a.to_json() == b.to_json()
    assert a.to_json() != c.to_json()


def test_random_protocol_runs_and_conserves_probability():
    p = random_protocol({"A": 2, "B": 1, "C": 1}, rounds=3, seed=4)
    result = run(p)
    assert 1 <= len(result.branches) <= MAX_BRANCHES
    assert sum(b.probability for b in result.branches) == pytest.approx(1.0, abs=1e-9)
    audited = [ev for ev in result.events if ev.audit]
    assert audited
    for ev in audited:
        for pre, ens in ev.groups:
            total = sum(q for q, _ in ens.members)
            assert total == pytest.approx(1.0, abs=1e-9)
