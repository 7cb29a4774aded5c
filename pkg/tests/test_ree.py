"""Separable-distance optimizer: brackets, certificates, and identities."""

import math

import numpy as np
import pytest

from entaudit.ree import (
    Partition,
    ProductAtom,
    REEConfig,
    SeparableModel,
    donald_identity_residual,
    er_monotonicity_probe,
    ree,
)
from entaudit.states import (
    DensityMatrix,
    Ensemble,
    PartyLayout,
    PureState,
    bell_vector,
    make_named_state,
    partial_trace,
    random_density_matrix,
    random_pure_state,
    relative_entropy,
    von_neumann_entropy,
)

FAST = REEConfig(gap_tol=1e-4, seed=0)


def bell_diagonal(weights) -> DensityMatrix:
    layout = PartyLayout.qubits(("A", "B"))
    acc = np.zeros((4, 4), dtype=np.complex128)
    for w, label in zip(weights, ("phi+", "phi-", "psi+", "psi-")):
        v = bell_vector(label)
        acc += w * np.outer(v, v.conj())
    return DensityMatrix(layout, acc)


def test_partition_parse_key_refines():
    p = Partition.parse("B , C | A")
    # Blocks are canonicalized, so equivalent spellings share one key.
    assert p.key() == Partition.parse("A|B,C").key()
    assert p.parties == {"A", "B", "C"}
    fine = Partition.parse("A|B|C")
    assert fine.refines(p)
    assert not p.refines(fine)
    with pytest.raises(ValueError):
        Partition.parse("A,B")  # single block is not a partition
    with pytest.raises(ValueError):
        Partition.parse("A|A,B")  # duplicate party


def test_singlet_bracket_contains_one_ebit():
    r = ree(make_named_state("singlet"), "A|B", FAST)
    assert r.converged
    assert r.lower <= 1.0 + 1e-6
    assert r.upper >= 1.0 - 1e-6
    assert r.gap <= FAST.gap_tol + 1e-12


def test_upper_bound_is_independently_checkable():
    # The certificate must reproduce the reported upper bound on its own.
    state = make_named_state("singlet")
    r = ree(state, "A|B", FAST)
    sigma = r.model.assemble(state.layout)
    np.testing.assert_allclose(np.trace(sigma).real, 1.0, atol=1e-9)
    assert np.linalg.eigvalsh(sigma).min() > 0.0
    recomputed = relative_entropy(state.density_matrix(), sigma)
    assert abs(recomputed - r.upper) <= 1e-9


def test_product_state_distance_is_zero():
    layout = PartyLayout.qubits(("A", "B"))
    amps = np.zeros(4)
    amps[0] = 1.0
    r = ree(PureState(layout, amps), "A|B", FAST)
    assert r.upper <= 1e-6
    assert r.lower == 0.0


def test_separable_mixture_distance_is_zero():
    rho = bell_diagonal([0.25, 0.25, 0.25, 0.25])  # maximally mixed, separable
    r = ree(rho, "A|B", FAST)
    assert r.upper <= 1e-6


def test_bell_diagonal_oracle_single_case():
    # E = 1 - H(lmax) for Bell-diagonal states with lmax >= 1/2.
    lmax = 0.75
    expected = 0.18872187554086717
    rho = bell_diagonal([lmax] + [(1 - lmax) / 3] * 3)
    r = ree(rho, "A|B", FAST)
    assert abs(r.midpoint - expected) <= 5e-3
    assert r.lower - 5e-3 <= expected <= r.upper + 5e-3


def test_pure_state_distance_matches_reduced_entropy():
    rng = np.random.default_rng(11)
    layout = PartyLayout.of({"A": [2], "B": [3]})
    psi = random_pure_state(layout, rng)
    expected = von_neumann_entropy(partial_trace(psi, ["A"]))
    r = ree(psi, "A|B", FAST)
    assert abs(r.midpoint - expected) <= 5e-3


def test_local_unitary_invariance():
    rng = np.random.default_rng(3)
    rho = random_density_matrix(PartyLayout.qubits(("A", "B")), rng, rank=2)
    from entaudit.states import haar_unitary

    u = np.kron(haar_unitary(2, rng), haar_unitary(2, rng))
    rotated = DensityMatrix(rho.layout, u @ rho.matrix @ u.conj().T)
    r1 = ree(rho, "A|B", FAST)
    r2 = ree(rotated, "A|B", FAST)
    slack = r1.gap + r2.gap + 1e-6
    assert abs(r1.midpoint - r2.midpoint) <= slack + 5e-4


def test_multi_partition_distance_takes_the_union():
    # Allowing mixtures over both splits can only shrink the distance.
    state = make_named_state("phi1", [math.sqrt(0.5)])
    joint = ree(state, ["A|B,C", "A,C|B"], FAST)
    single = ree(state, "A|B,C", FAST)
    assert joint.upper <= single.upper + 1e-6


def test_refinement_coarsening_cannot_increase_distance():
    rng = np.random.default_rng(5)
    rho = random_density_matrix(PartyLayout.qubits(("A", "B", "C")), rng, rank=2)
    coarse = ree(rho, "A|B,C", FAST)
    fine = ree(rho, "A|B|C", FAST)
    assert coarse.upper <= fine.upper + coarse.gap + fine.gap + 1e-6


def test_separable_model_validation():
    layout = PartyLayout.qubits(("A", "B"))
    atom = ProductAtom((np.array([1.0, 0.0]), np.array([1.0, 0.0])), 0)
    model = SeparableModel(
        partitions=(Partition.parse("A|B"),),
        atoms=(atom,),
        weights=(1.0,),
        floor_weight=0.5,
    )
    sigma = model.assemble(layout)
    np.testing.assert_allclose(np.trace(sigma).real, 1.0, atol=1e-12)
    expected = 0.5 * np.diag([1.0, 0.0, 0.0, 0.0]) + 0.5 * np.eye(4) / 4
    np.testing.assert_allclose(sigma, expected, atol=1e-12)
    with pytest.raises(ValueError):
        SeparableModel(
            partitions=(Partition.parse("A|B"),),
            atoms=(atom,),
            weights=(0.5,),
            floor_weight=0.0,
        ).assemble(layout)


def test_donald_identity_exact_small_case():
    layout = PartyLayout.qubits(("A",))
    members = (
        (0.5, DensityMatrix(layout, np.diag([0.9, 0.1]))),
        (0.5, DensityMatrix(layout, np.diag([0.2, 0.8]))),
    )
    sigma = DensityMatrix(layout, np.diag([0.6, 0.4]))
    assert donald_identity_residual(Ensemble(members), sigma) <= 1e-12


def test_donald_identity_rejects_support_leak():
    layout = PartyLayout.qubits(("A",))
    members = ((1.0, DensityMatrix(layout, np.diag([1.0, 0.0]))),)
    sigma = DensityMatrix(layout, np.diag([0.0, 1.0]))
    with pytest.raises(ValueError):
        donald_identity_residual(Ensemble(members), sigma)


def test_monotonicity_probe_accepts_local_channels():
    report = er_monotonicity_probe(
        make_named_state("singlet"),
        "A|B",
        [{"kind": "random_measure", "party": "A"}],
        trials=3,
        seed=2,
        config=FAST,
    )
    assert report.passed
    assert report.violations == 0


def test_bracket_ordering_invariants():
    rng = np.random.default_rng(17)
    for _ in range(3):
        rho = random_density_matrix(PartyLayout.qubits(("A", "B")), rng)
        r = ree(rho, "A|B", REEConfig(gap_tol=1e-3, seed=1))
        assert 0.0 <= r.lower <= r.upper
        assert r.gap == pytest.approx(r.upper - r.lower)
