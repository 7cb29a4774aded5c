"""Named conversion protocols and their closed-form bookkeeping.

The protocol builders return :class:`~entaudit.engine.Protocol` values ready
for :func:`~entaudit.engine.run` or the audit harness.  Every operator is
embedded literally in the payloads, so the protocols serialize cleanly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .engine import (
    Protocol,
    ProtocolStep,
    RunResult,
    matrix_payload,
    run,
)
from .states import (
    BELL_LABELS,
    Ensemble,
    PartyLayout,
    PureState,
    bell_vector,
    binary_entropy,
    hamming_weight_measurement,
    make_named_state,
    measure,
    partial_trace,
    tensor_states,
)

_CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=np.complex128
)

# Teleportation corrections when the Bell measurement lists the input qubit
# first and the shared-pair half second, for a shared (|00>+|11>)/sqrt(2) pair.
TELEPORT_CORRECTIONS: dict[str, tuple[str, ...]] = {
    "phi+": (),
    "phi-": ("Z",),
    "psi+": ("X",),
    "psi-": ("X", "Z"),
}


def _bell_decoupler(label: str) -> np.ndarray:
    """A two-qubit unitary sending the given Bell vector to |00>."""
    rest = [l for l in BELL_LABELS if l != label]
    cols = np.stack([bell_vector(l) for l in [label, *rest]], axis=1)
    return cols.conj().T


def ghz3_to_bc_singlet(
    measure_party: str = "A",
    correct_party: str = "B",
    measure_subsystems: Sequence[int] | None = None,
    correct_subsystems: Sequence[int] | None = None,
) -> Protocol:
    """Convert a three-party GHZ into a shared pair between the other two.

    The first party measures its qubit in the |+>/|-> basis; on outcome ``-``
    the second party applies Z.  Every branch then holds (|00>+|11>)/sqrt(2)
    between the two non-measuring parties.  The subsystem arguments aim the
    steps inside larger layouts when the protocol is chained onto another.
    """
    m_payload: dict = {"basis": "x"}
    if measure_subsystems is not None:
        m_payload["subsystems"] = [int(i) for i in measure_subsystems]
    c_payload: dict = {"gate": "Z"}
    if correct_subsystems is not None:
        c_payload["subsystems"] = [int(i) for i in correct_subsystems]
    steps = (
        ProtocolStep("measure", measure_party, m_payload, audit=True),
        ProtocolStep(
            "local_unitary",
            correct_party,
            c_payload,
            condition=((0, "-"),),
        ),
    )
    return Protocol(
        name="ghz3-to-pair",
        initial={"named": "ghz", "params": [3]},
        steps=steps,
    )


def two_singlets_to_ghz() -> Protocol:
    """Assemble a three-party GHZ from pairs A-B and B-C, all work at B.

    B attaches three |0> qubits, builds a local GHZ on them, then teleports
    two of its legs through the shared pairs: a Bell measurement on (leg,
    pair half) with the usual corrections at the far end, followed by a
    conditioned rotation returning the measured pair to |00>.  Every leaf is
    the GHZ on (A, B's middle qubit, C) with all other qubits at |0>.

    B's subsystems after the ancilla steps: 0 = half of the A pair, 1 = half
    of the C pair, 2, 3, 4 = the local GHZ legs.
    """
    initial = {
        "tensor": [
            {"named": "singlet", "parties": ["A", "B"]},
            {"named": "singlet", "parties": ["B", "C"]},
        ]
    }
    steps: list[ProtocolStep] = [
        ProtocolStep("attach_ancilla", "B", {"dim": 2}),
        ProtocolStep("attach_ancilla", "B", {"dim": 2}),
        ProtocolStep("attach_ancilla", "B", {"dim": 2}),
        ProtocolStep("local_unitary", "B", {"gate": "H", "subsystems": [2]}),
        ProtocolStep(
            "local_unitary", "B",
            {"matrix": matrix_payload(_CNOT), "subsystems": [2, 3]},
        ),
        ProtocolStep(
            "local_unitary", "B",
            {"matrix": matrix_payload(_CNOT), "subsystems": [2, 4]},
        ),
    ]

    def teleport(leg: int, half: int, far_party: str) -> None:
        m_idx = len(steps)
        steps.append(
            ProtocolStep(
                "measure", "B", {"basis": "bell", "subsystems": [leg, half]},
                audit=True,
            )
        )
        for label in BELL_LABELS:
            for gate in TELEPORT_CORRECTIONS[label]:
                steps.append(
                    ProtocolStep(
                        "local_unitary", far_party, {"gate": gate},
                        condition=((m_idx, label),),
                    )
                )
            steps.append(
                ProtocolStep(
                    "local_unitary", "B",
                    {
                        "matrix": matrix_payload(_bell_decoupler(label)),
                        "subsystems": [leg, half],
                    },
                    condition=((m_idx, label),),
                )
            )

    teleport(3, 0, "A")
    teleport(4, 1, "C")
    return Protocol(name="pairs-to-ghz3", initial=initial, steps=tuple(steps))


def ghz_leaf_target(layout: PartyLayout) -> PureState:
    """The expected leaf of :func:`two_singlets_to_ghz`: GHZ on (A, B2, C)."""
    if layout.to_dict() != {"A": [2], "B": [2, 2, 2, 2, 2], "C": [2]}:
        raise ValueError(f"unexpected layout {layout.to_dict()!r}")
    t = np.zeros(layout.subsystem_dims, dtype=np.complex128)
    s = 1.0 / math.sqrt(2.0)
    t[(0,) * 7] = s
    t[1, 0, 0, 1, 0, 0, 1] = s
    return PureState(layout, t.reshape(-1))


def chain_protocols(first: Protocol, second: Protocol, name: str | None = None) -> Protocol:
    """Concatenate two protocols, replaying the second on the first's output.

    The second protocol's initial-state description is discarded; its steps
    must fit the layout the first protocol produces, and their condition
    indices are shifted past the first protocol's steps.
    """
    offset = len(first.steps)
    shifted = tuple(
        ProtocolStep(
            kind=s.kind,
            party=s.party,
            payload=s.payload,
            condition=tuple((i + offset, l) for i, l in s.condition),
            audit=s.audit,
        )
        for s in second.steps
    )
    return Protocol(
        name=name or f"{first.name}+{second.name}",
        initial=first.initial,
        steps=first.steps + shifted,
    )


def ghz_roundtrip() -> Protocol:
    """Pairs to GHZ and back: assemble at B, then convert to a B-C pair.

    After assembly the GHZ sits on (A, B's subsystem 2, C); the conversion
    measures A in the |+>/|-> basis and corrects at B's subsystem 2.
    """
    build = two_singlets_to_ghz()
    unwind = ghz3_to_bc_singlet(
        measure_party="A",
        correct_party="B",
        correct_subsystems=[2],
    )
    return chain_protocols(build, unwind, name="ghz-roundtrip")


# ---------------------------------------------------------------------------
# Entanglement concentration on copies of the two-term three-party state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConcentrationOutcome:
    """One Hamming-weight outcome of concentrating n three-party copies."""

    weight: int
    probability: float
    rank: int

    @property
    def ghz_yield_bits(self) -> float:
        return math.log2(self.rank)

    def to_dict(self) -> dict:
        return {
            "weight": self.weight,
            "probability": self.probability,
            "rank": self.rank,
            "ghz_yield_bits": self.ghz_yield_bits,
        }


def concentration_distribution(n: int, alpha_sq: float) -> list[ConcentrationOutcome]:
    """Outcome table for concentrating n copies of a|000> + b|111>.

    One party measures the number of 1s across its n qubits.  Outcome k has
    probability C(n, k) a^(2(n-k)) b^(2k) and leaves a uniform GHZ-type state
    of rank C(n, k), worth log2 C(n, k) GHZ-bits.
    """
    if not 0.0 < alpha_sq < 1.0:
        raise ValueError("alpha_sq must lie strictly between 0 and 1")
    beta_sq = 1.0 - alpha_sq
    out = []
    for k in range(n + 1):
        c = math.comb(n, k)
        p = c * alpha_sq ** (n - k) * beta_sq**k
        out.append(ConcentrationOutcome(weight=k, probability=p, rank=c))
    return out


def expected_yield_bits(n: int, alpha_sq: float) -> float:
    """Average GHZ-bits per concentration run on n copies."""
    return sum(
        o.probability * o.ghz_yield_bits for o in concentration_distribution(n, alpha_sq)
    )


def concentration_dense_check(n: int, alpha: float) -> list[dict]:
    """Cross-check the outcome table on the dense simulator (small n only).

    Builds the n-copy state explicitly, measures the first party's Hamming
    weight, and reports each branch's probability, the rank of its one-party
    marginal, and the largest deviation of that marginal's spectrum from
    uniform.
    """
    if n > 4:
        raise ValueError("dense check is limited to n <= 4 copies")
    copy = make_named_state("phi1", [alpha])
    state = tensor_states([(copy, ["A", "B", "C"])] * n)
    ens = measure(state, hamming_weight_measurement(state.layout, "A"))
    rows = []
    for (p, s), label in zip(ens.members, ens.labels):
        marginal = partial_trace(s, ["A"])
        eigs = np.sort(np.linalg.eigvalsh(marginal.matrix))[::-1]
        rank = int(np.sum(eigs > 1e-9))
        spread = float(np.max(np.abs(eigs[:rank] - 1.0 / rank)))
        rows.append(
            {
                "weight": int(label),
                "probability": float(p),
                "rank": rank,
                "spectrum_spread": spread,
            }
        )
    return rows


def run_and_check_leaves(protocol: Protocol, target: PureState) -> tuple[RunResult, float]:
    """Run a protocol and return the worst leaf fidelity against a target."""
    result = run(protocol)
    worst = 1.0
    for b in result.branches:
        worst = min(worst, b.state.fidelity(target))
    return result, worst
