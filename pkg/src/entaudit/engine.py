"""Branching executor for protocols of local operations and classical messages.

A protocol is a named initial state plus an ordered list of steps.  Each step
acts at one party and may be conditioned on the outcomes of earlier
measurement steps, which is how classical communication enters: a step with
condition ``((3, "psi-"),)`` runs only on branches whose measurement at step 3
returned ``psi-``.  The executor keeps every surviving branch explicitly, so
after a run the full outcome tree with probabilities and post-states is
available for entropy and entanglement accounting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .states import (
    DEFAULT_DIM_CAP,
    DimensionCapExceeded,
    Ensemble,
    PartyLayout,
    ProjectiveMeasurement,
    PureState,
    _embed_projectors,
    apply_local_unitary,
    attach_ancilla,
    bell_basis_measurement,
    computational_measurement,
    gate_matrix,
    hamming_weight_measurement,
    haar_unitary,
    make_named_state,
    measure,
    random_pure_state,
    tensor_states,
    x_basis_measurement,
)

MAX_BRANCHES = 4096

STEP_KINDS = ("local_unitary", "measure", "attach_ancilla")


def matrix_payload(m: np.ndarray) -> list:
    """Encode a complex matrix as nested ``[re, im]`` pairs for JSON."""
    m = np.asarray(m, dtype=np.complex128)
    return [[[float(x.real), float(x.imag)] for x in row] for row in m]


def payload_matrix(rows: Sequence) -> np.ndarray:
    return np.array(
        [[complex(e[0], e[1]) for e in row] for row in rows], dtype=np.complex128
    )


@dataclass(frozen=True)
class ProtocolStep:
    """One protocol step: an operation at a party, optionally conditioned.

    Parameters
    ----------
    kind : str
        ``local_unitary``, ``measure``, or ``attach_ancilla``.
    party : str
        The party the operation acts at.
    payload : mapping
        Kind-specific description; see :func:`build_measurement` and
        :func:`build_unitary`.  For ``attach_ancilla``: ``{"dim": d}``.
    condition : tuple of (int, str)
        Pairs of (earlier measure-step index, outcome label); the step runs
        only on branches matching every pair.
    audit : bool
        Mark this measurement for entanglement accounting.
    """

    kind: str
    party: str
    payload: Mapping = field(default_factory=dict)
    condition: tuple[tuple[int, str], ...] = ()
    audit: bool = False

    def __post_init__(self) -> None:
        if self.kind not in STEP_KINDS:
            raise ValueError(f"unknown step kind {self.kind!r}; expected {STEP_KINDS}")
        object.__setattr__(self, "payload", dict(self.payload))
        cond = tuple((int(i), str(l)) for i, l in self.condition)
        object.__setattr__(self, "condition", cond)
        if self.kind == "attach_ancilla" and cond:
            # Conditioned ancillas would give branches mismatched layouts.
            raise ValueError("attach_ancilla steps cannot be conditioned")
        if self.audit and self.kind != "measure":
            raise ValueError("only measure steps can be audited")

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind, "party": self.party, "payload": dict(self.payload)}
        if self.condition:
            d["condition"] = [[i, l] for i, l in self.condition]
        if self.audit:
            d["audit"] = True
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ProtocolStep":
        return cls(
            kind=d["kind"],
            party=d["party"],
            payload=d.get("payload", {}),
            condition=tuple((int(i), str(l)) for i, l in d.get("condition", [])),
            audit=bool(d.get("audit", False)),
        )


@dataclass(frozen=True)
class Protocol:
    """A named initial-state description plus an ordered tuple of steps."""

    name: str
    initial: Mapping
    steps: tuple[ProtocolStep, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "initial", dict(self.initial))
        object.__setattr__(self, "steps", tuple(self.steps))
        for idx, step in enumerate(self.steps):
            for j, _ in step.condition:
                if not 0 <= j < idx:
                    raise ValueError(
                        f"step {idx} conditions on step {j}, which is not earlier"
                    )
                if self.steps[j].kind != "measure":
                    raise ValueError(f"step {idx} conditions on non-measure step {j}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "initial": dict(self.initial),
            "steps": [s.to_dict() for s in self.steps],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: Mapping) -> "Protocol":
        return cls(
            name=str(d["name"]),
            initial=d["initial"],
            steps=tuple(ProtocolStep.from_dict(s) for s in d["steps"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "Protocol":
        return cls.from_dict(json.loads(text))


def rename_parties(state: PureState, names: Sequence[str]) -> PureState:
    """Relabel parties in order, keeping dimensions and amplitudes."""
    old = state.layout
    if len(names) != len(old.parties):
        raise ValueError(
            f"state has {len(old.parties)} parties, got {len(names)} names"
        )
    layout = PartyLayout.of({str(n): old.party_dims(p) for n, p in zip(names, old.parties)})
    return PureState(layout, state.amplitudes)


def build_initial_state(spec: Mapping, dim_cap: int = DEFAULT_DIM_CAP) -> PureState:
    """Resolve an initial-state description to a pure state.

    Supported forms:

    - ``{"named": name, "params": [...]}`` for the named-state catalogue;
    - ``{"layout": {...}, "amplitudes": [[re, im], ...]}`` for literal data;
    - ``{"tensor": [factor, ...]}`` where each factor is itself one of the
      above, optionally with ``"parties": [...]`` to relabel its parties.
      Factors sharing a party label are merged onto that party.
    """
    if "tensor" in spec:
        factors = []
        for f in spec["tensor"]:
            sub = {k: v for k, v in f.items() if k != "parties"}
            state = build_initial_state(sub, dim_cap)
            labels = f.get("parties", state.layout.parties)
            factors.append((state, [str(p) for p in labels]))
        out = tensor_states(factors, dim_cap)
    elif "named" in spec:
        out = make_named_state(str(spec["named"]), spec.get("params", ()))
        if "parties" in spec:
            out = rename_parties(out, [str(p) for p in spec["parties"]])
    elif "amplitudes" in spec:
        out = PureState.from_dict(spec)
    else:
        raise ValueError(f"unrecognized initial-state description {dict(spec)!r}")
    if out.layout.joint_dim > dim_cap:
        raise DimensionCapExceeded(
            f"initial state dimension {out.layout.joint_dim} exceeds cap {dim_cap}"
        )
    return out


def build_measurement(
    layout: PartyLayout, party: str, payload: Mapping
) -> ProjectiveMeasurement:
    """Resolve a measurement payload at one party.

    Supported forms:

    - ``{"basis": "computational" | "x" | "hamming", "subsystems": [...]}``
      (``subsystems`` optional, defaults to the party's full local space;
      ``hamming`` ignores it);
    - ``{"basis": "bell", "subsystems": [i, j]}`` on an ordered qubit pair;
    - ``{"projectors": [...], "labels": [...], "subsystems": [...]}`` with
      explicit projector matrices in ``[re, im]`` pair encoding.
    """
    if "projectors" in payload:
        projs = [payload_matrix(rows) for rows in payload["projectors"]]
        labels = [str(l) for l in payload["labels"]]
        if len(labels) != len(projs):
            raise ValueError("projector and label counts differ")
        subs = payload.get("subsystems")
        if subs is None:
            subs = tuple(range(len(layout.party_dims(party))))
        return _embed_projectors(layout, party, tuple(int(i) for i in subs), projs, labels)
    basis = payload.get("basis")
    subs = payload.get("subsystems")
    if basis == "computational":
        return computational_measurement(layout, party, subs)
    if basis == "x":
        return x_basis_measurement(layout, party, subs)
    if basis == "bell":
        if subs is None:
            raise ValueError("bell basis requires an ordered pair of subsystems")
        return bell_basis_measurement(layout, party, subs)
    if basis == "hamming":
        return hamming_weight_measurement(layout, party)
    raise ValueError(f"unrecognized measurement payload {dict(payload)!r}")


def build_unitary(payload: Mapping) -> tuple[np.ndarray, Sequence[int] | None]:
    """Resolve a unitary payload to (matrix, target subsystems or None)."""
    u = gate_matrix(payload)
    subs = payload.get("subsystems")
    return u, None if subs is None else tuple(int(i) for i in subs)


@dataclass(frozen=True)
class Branch:
    """One live branch of a run: its outcome record, probability, and state."""

    record: tuple[tuple[int, str], ...]
    probability: float
    state: PureState

    def to_dict(self) -> dict:
        return {
            "record": [[i, l] for i, l in self.record],
            "probability": self.probability,
            "state": self.state.to_dict(),
        }


def condition_matches(record: Sequence[tuple[int, str]], condition: Sequence) -> bool:
    """True when every (step, outcome) pair of the condition is in the record."""
    have = set((int(i), str(l)) for i, l in record)
    return all((int(i), str(l)) in have for i, l in condition)


@dataclass(frozen=True)
class MeasureEvent:
    """A measurement step's outcome tree, grouped by pre-measurement branch."""

    step_index: int
    party: str
    audit: bool
    groups: tuple[tuple[Branch, Ensemble], ...]

    def outcome_probabilities(self) -> dict[str, float]:
        """Total probability of each outcome label across all groups."""
        out: dict[str, float] = {}
        for pre, ens in self.groups:
            for (p, _), label in zip(ens.members, ens.labels):
                out[label] = out.get(label, 0.0) + pre.probability * p
        return out


@dataclass(frozen=True)
class RunResult:
    protocol: Protocol
    initial_state: PureState
    branches: tuple[Branch, ...]
    events: tuple[MeasureEvent, ...]

    @property
    def layout(self) -> PartyLayout:
        return self.branches[0].state.layout

    def final_ensemble(self) -> Ensemble:
        """The run's terminal branches as a labeled ensemble."""
        labels = tuple(
            ",".join(f"{i}:{l}" for i, l in b.record) or "-" for b in self.branches
        )
        return Ensemble(
            tuple((b.probability, b.state) for b in self.branches), labels=labels
        )

    def event_at(self, step_index: int) -> MeasureEvent:
        for ev in self.events:
            if ev.step_index == step_index:
                return ev
        raise KeyError(f"no measurement event at step {step_index}")


def run(
    protocol: Protocol,
    *,
    initial_state: PureState | None = None,
    dim_cap: int = DEFAULT_DIM_CAP,
    branch_cap: int = MAX_BRANCHES,
) -> RunResult:
    """Execute a protocol, tracking every branch of the outcome tree.

    ``initial_state`` overrides the protocol's own initial description, which
    lets one protocol be replayed on the output of another.  Branches whose
    cumulative probability falls below 1e-12 are dropped.
    """
    if initial_state is None:
        initial_state = build_initial_state(protocol.initial, dim_cap)
    branches = [Branch((), 1.0, initial_state)]
    events: list[MeasureEvent] = []
    for idx, step in enumerate(protocol.steps):
        if step.kind == "measure":
            groups = []
            nxt: list[Branch] = []
            for b in branches:
                if not condition_matches(b.record, step.condition):
                    nxt.append(b)
                    continue
                m = build_measurement(b.state.layout, step.party, step.payload)
                ens = measure(b.state, m)
                groups.append((b, ens))
                for (p, s), label in zip(ens.members, ens.labels):
                    q = b.probability * p
                    if q < 1e-12:
                        continue
                    nxt.append(Branch(b.record + ((idx, label),), q, s))
            branches = nxt
            if len(branches) > branch_cap:
                raise ValueError(
                    f"branch count {len(branches)} exceeds cap {branch_cap}"
                )
            events.append(MeasureEvent(idx, step.party, step.audit, tuple(groups)))
        elif step.kind == "local_unitary":
            u, subs = build_unitary(step.payload)
            branches = [
                Branch(b.record, b.probability, apply_local_unitary(b.state, step.party, u, subs))
                if condition_matches(b.record, step.condition)
                else b
                for b in branches
            ]
        elif step.kind == "attach_ancilla":
            dim = int(step.payload["dim"])
            branches = [
                Branch(b.record, b.probability, attach_ancilla(b.state, step.party, dim, dim_cap))
                for b in branches
            ]
    return RunResult(protocol, initial_state, tuple(branches), tuple(events))


# ---------------------------------------------------------------------------
# Random protocols (seeded; used by the fuzz harness)
# ---------------------------------------------------------------------------


def _random_measurement_payload(
    dim: int, rng: np.random.Generator, max_outcomes: int = 3
) -> dict:
    """A random projective measurement payload with 2 or 3 outcomes.

    Projector ranks are drawn first, then a Haar-random frame is split into
    blocks of those ranks, so coarse (rank > 1) outcomes occur routinely.
    """
    hi = min(max_outcomes, dim)
    n_out = 2 if hi <= 2 or rng.random() < 0.7 else 3
    cuts = sorted(rng.choice(np.arange(1, dim), size=n_out - 1, replace=False))
    frame = haar_unitary(dim, rng)
    projs = []
    bounds = [0, *cuts, dim]
    for a, b in zip(bounds[:-1], bounds[1:]):
        block = frame[:, a:b]
        projs.append(block @ block.conj().T)
    return {
        "projectors": [matrix_payload(p) for p in projs],
        "labels": [str(i) for i in range(len(projs))],
    }


def random_protocol(
    party_qubits: Mapping[str, int],
    rounds: int = 2,
    seed: int = 0,
) -> Protocol:
    """Generate a seeded random protocol over qubit parties.

    Each round applies a Haar-random local unitary at one party, measures a
    random 2-or-3-outcome projective observable at another (flagged for
    audit), then applies outcome-conditioned random unitaries at a third
    party.  All operators are embedded literally in the payloads, so the
    protocol serializes to the same JSON bytes for the same seed.
    """
    rng = np.random.default_rng(seed)
    layout = PartyLayout.of({p: [2] * int(k) for p, k in party_qubits.items()})
    parties = list(layout.parties)
    initial = random_pure_state(layout, rng).to_dict()
    steps: list[ProtocolStep] = []
    for _ in range(rounds):
        actor = parties[rng.integers(len(parties))]
        u = haar_unitary(layout.local_dim(actor), rng)
        steps.append(ProtocolStep("local_unitary", actor, {"matrix": matrix_payload(u)}))

        measurer = parties[rng.integers(len(parties))]
        payload = _random_measurement_payload(layout.local_dim(measurer), rng)
        m_idx = len(steps)
        steps.append(ProtocolStep("measure", measurer, payload, audit=True))

        others = [p for p in parties if p != measurer]
        receiver = others[rng.integers(len(others))]
        for label in payload["labels"]:
            v = haar_unitary(layout.local_dim(receiver), rng)
            steps.append(
                ProtocolStep(
                    "local_unitary",
                    receiver,
                    {"matrix": matrix_payload(v)},
                    condition=((m_idx, label),),
                )
            )
    name = "fuzz-" + "".join(f"{p}{k}" for p, k in sorted(party_qubits.items()))
    return Protocol(name=f"{name}-s{seed}", initial=initial, steps=tuple(steps))
