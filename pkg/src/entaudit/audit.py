"""Conservation-law audits for measurement steps and whole protocols.

Every audited measurement produces a table of inequality rows.  For a
measurement at party ``X`` with outcome ensemble ``{p_k, rho_k}``:

- ``gain_vs_entropy``: for a pair of parties not containing ``X``, the average
  entanglement gain of the pair is bounded by the exact entropy lost by the
  pair's complement group:
  ``sum_k p_k E(pair)_k - E(pair) <= S(comp) - sum_k p_k S(comp)_k``.
- ``er_monotone``: for a pair containing ``X``, the measurement is a local
  operation of the pair itself, so ``sum_k p_k E(pair)_k - E(pair) <= 0``.
- ``entropy_monotone``: for every party other than ``X``, the average marginal
  is unchanged, so by concavity ``sum_k p_k S(P)_k - S(P) <= 0``.

Entanglement terms carry certified brackets from the separable-mixture
optimizer, so each row gets one of three verdicts: ``pass`` when the claim
holds even reading every bracket adversarially, ``violation`` when it fails
even reading every bracket favorably, and ``indeterminate`` otherwise.
"""

from __future__ import annotations

import hashlib
import itertools
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .engine import (
    Branch,
    MeasureEvent,
    Protocol,
    RunResult,
    random_protocol,
    run,
)
from .ree import Partition, REEConfig, REEResult, ree
from .states import (
    DEFAULT_DIM_CAP,
    DensityMatrix,
    Ensemble,
    PartyLayout,
    PureState,
    partial_trace,
    random_density_matrix,
    von_neumann_entropy,
)

VERDICT_SLACK = 1e-6


def record_label(record: Sequence[tuple[int, str]]) -> str:
    return ",".join(f"{i}:{l}" for i, l in record) or "-"


class REECache:
    """Memoizes separable-distance brackets by state, partition, and config.

    States are keyed by their rounded matrix bytes, so branches that agree to
    twelve decimals (for example a spectator marginal untouched by a step)
    share one optimization.
    """

    def __init__(self) -> None:
        self._store: dict[tuple, REEResult] = {}
        self.hits = 0
        self.misses = 0

    def key(self, rho: DensityMatrix, partition: Partition, config: REEConfig) -> tuple:
        digest = hashlib.sha256(np.round(rho.matrix, 12).tobytes()).hexdigest()
        return (
            digest,
            tuple(rho.layout.parties),
            rho.layout.dims,
            partition.key(),
            tuple(sorted(config.to_dict().items())),
        )

    def get(self, rho: DensityMatrix, partition: Partition, config: REEConfig) -> REEResult:
        k = self.key(rho, partition, config)
        if k not in self._store:
            self.misses += 1
            self._store[k] = ree(rho, partition, config)
        else:
            self.hits += 1
        return self._store[k]


def subject_bracket(
    state: PureState | DensityMatrix,
    subject: Partition,
    config: REEConfig,
    cache: REECache | None = None,
) -> REEResult:
    """Certified bracket on a marginal's distance from a partition's mixtures.

    The subject partition names the parties to keep (its blocks) and how they
    are grouped; the rest of the state is traced out first.
    """
    keep = [p for p in state.layout.parties if p in subject.parties]
    marginal = partial_trace(state, keep)
    if cache is None:
        return ree(marginal, subject, config)
    return cache.get(marginal, subject, config)


def pair_subjects(parties: Iterable[str]) -> list[Partition]:
    """One two-block subject per unordered pair of parties."""
    return [
        Partition.parse(f"{a}|{b}") for a, b in itertools.combinations(parties, 2)
    ]


def party_entropy(state: PureState | DensityMatrix, parties: Iterable[str]) -> float:
    """Marginal entropy (bits) of a group of parties."""
    return von_neumann_entropy(partial_trace(state, list(parties)))


@dataclass(frozen=True)
class AuditRow:
    """One audited inequality with a certified verdict.

    ``lhs_low``/``lhs_high`` bracket the claim's left side and ``rhs`` is its
    exact right side; ``margin`` is ``rhs - lhs_high`` (how much slack the
    claim has under the adversarial reading, negative when indeterminate or
    violated).
    """

    family: str
    step_index: int | None
    acting: tuple[str, ...]
    subject: str
    pre_record: str
    lhs_low: float
    lhs_high: float
    rhs: float
    verdict: str
    detail: dict = field(default_factory=dict)

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs_high

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "step": self.step_index,
            "acting": list(self.acting),
            "subject": self.subject,
            "pre_record": self.pre_record,
            "lhs_low": self.lhs_low,
            "lhs_high": self.lhs_high,
            "rhs": self.rhs,
            "margin": self.margin,
            "verdict": self.verdict,
            "detail": dict(self.detail),
        }


def _verdict(lhs_low: float, lhs_high: float, rhs: float) -> str:
    """Three-way verdict for a claim ``lhs <= rhs`` with a bracketed lhs."""
    if lhs_high <= rhs + VERDICT_SLACK:
        return "pass"
    if lhs_low > rhs + VERDICT_SLACK:
        return "violation"
    return "indeterminate"


def _entanglement_row(
    family: str,
    step_index: int | None,
    acting: Sequence[str],
    subject: Partition,
    pre_record: str,
    pre: REEResult,
    posts: Sequence[tuple[float, REEResult]],
    rhs: float,
    detail: dict,
) -> AuditRow:
    """Assemble a row for ``sum_k p_k E_k - E_pre <= rhs``.

    The adversarial reading takes every post bracket at its top and the pre
    bracket at its bottom; the favorable reading charges the full (unweighted)
    sum of optimizer gaps against the claim, which can only widen the bracket,
    so a ``violation`` verdict is sound.
    """
    avg_upper = sum(p * r.upper for p, r in posts)
    avg_lower = sum(p * r.lower for p, r in posts)
    lhs_high = avg_upper - pre.lower
    gap_total = pre.gap + sum(r.gap for _, r in posts)
    lhs_low = (avg_upper - pre.upper) - gap_total
    lhs_low = min(lhs_low, avg_lower - pre.upper)
    detail = dict(detail)
    detail.update(
        {
            "pre_bracket": [pre.lower, pre.upper],
            "post_avg_bracket": [avg_lower, avg_upper],
            "gap_total": gap_total,
        }
    )
    return AuditRow(
        family=family,
        step_index=step_index,
        acting=tuple(acting),
        subject=subject.key(),
        pre_record=pre_record,
        lhs_low=lhs_low,
        lhs_high=lhs_high,
        rhs=rhs,
        verdict=_verdict(lhs_low, lhs_high, rhs),
        detail=detail,
    )


def audit_step(
    pre: Branch,
    ensemble: Ensemble,
    acting_party: str,
    *,
    config: REEConfig,
    cache: REECache | None = None,
    subjects: Sequence[Partition] | None = None,
    step_index: int | None = None,
) -> list[AuditRow]:
    """Audit one measurement group (a pre-measurement branch and its outcomes).

    ``subjects`` lists the partitions to audit; the default is every
    unordered pair of parties.  A subject containing the acting party gets
    the no-gain bound (the measurement is one of its own local operations);
    a subject not containing it gets the gain-versus-entropy-loss bound
    against its complement group.
    """
    layout = pre.state.layout
    if subjects is None:
        subjects = pair_subjects(layout.parties)
    posts = list(ensemble.members)
    rows: list[AuditRow] = []
    rec = record_label(pre.record)

    for subject in subjects:
        pre_b = subject_bracket(pre.state, subject, config, cache)
        post_b = [(p, subject_bracket(s, subject, config, cache)) for p, s in posts]
        if acting_party in subject.parties:
            rows.append(
                _entanglement_row(
                    "er_monotone", step_index, (acting_party,), subject, rec,
                    pre_b, post_b, 0.0, {},
                )
            )
        else:
            comp = tuple(p for p in layout.parties if p not in subject.parties)
            s_pre = party_entropy(pre.state, comp)
            s_post = sum(p * party_entropy(s, comp) for p, s in posts)
            rows.append(
                _entanglement_row(
                    "gain_vs_entropy", step_index, (acting_party,), subject, rec,
                    pre_b, post_b, s_pre - s_post,
                    {"complement": list(comp), "entropy_pre": s_pre, "entropy_post_avg": s_post},
                )
            )

    for party in layout.parties:
        if party == acting_party:
            continue
        s_pre = party_entropy(pre.state, [party])
        s_post = sum(p * party_entropy(s, [party]) for p, s in posts)
        lhs = s_post - s_pre
        rows.append(
            AuditRow(
                family="entropy_monotone",
                step_index=step_index,
                acting=(acting_party,),
                subject=party,
                pre_record=rec,
                lhs_low=lhs,
                lhs_high=lhs,
                rhs=0.0,
                verdict=_verdict(lhs, lhs, 0.0),
                detail={"entropy_pre": s_pre, "entropy_post_avg": s_post},
            )
        )
    return rows


def audit_event(
    event: MeasureEvent,
    *,
    config: REEConfig,
    cache: REECache | None = None,
    subjects: Sequence[Partition] | None = None,
) -> list[AuditRow]:
    """Audit every pre-measurement group of one measurement step."""
    rows: list[AuditRow] = []
    if cache is None:
        cache = REECache()
    for pre, ens in event.groups:
        rows.extend(
            audit_step(
                pre, ens, event.party,
                config=config, cache=cache, subjects=subjects,
                step_index=event.step_index,
            )
        )
    return rows


def audit_protocol(
    result: RunResult,
    *,
    config: REEConfig,
    cache: REECache | None = None,
    subjects: Sequence[Partition] | None = None,
) -> list[AuditRow]:
    """Whole-protocol rows comparing the initial state with the final tree.

    The gain bound telescopes across any sequence of local steps, so each
    subject is checked against its own complement group's total entropy
    loss.  The stricter no-gain bound is only emitted for subjects that
    contain every measuring party.
    """
    layout = result.initial_state.layout
    if subjects is None:
        subjects = pair_subjects(layout.parties)
    if cache is None:
        # Identical leaves (and shared marginals) collapse to one optimization.
        cache = REECache()
    acting = sorted({ev.party for ev in result.events})
    finals = [(b.probability, b.state) for b in result.branches]
    rows: list[AuditRow] = []
    for subject in subjects:
        pre_b = subject_bracket(result.initial_state, subject, config, cache)
        post_b = [(p, subject_bracket(s, subject, config, cache)) for p, s in finals]
        if acting and all(a in subject.parties for a in acting):
            rows.append(
                _entanglement_row(
                    "er_monotone", None, acting, subject, "-", pre_b, post_b, 0.0, {},
                )
            )
        elif len(subject.parties) < len(layout.parties):
            comp = tuple(p for p in layout.parties if p not in subject.parties)
            s_pre = party_entropy(result.initial_state, comp)
            s_post = sum(p * party_entropy(s, comp) for p, s in finals)
            rows.append(
                _entanglement_row(
                    "gain_vs_entropy", None, acting, subject, "-", pre_b, post_b,
                    s_pre - s_post,
                    {"complement": list(comp), "entropy_pre": s_pre, "entropy_post_avg": s_post},
                )
            )
    return rows


# ---------------------------------------------------------------------------
# Entropy and entanglement ledgers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LedgerRow:
    """State of the accounting at one checkpoint of a run."""

    checkpoint: str
    party_entropy: dict[str, float]
    subject_bracket: dict[str, tuple[float, float]]

    def to_dict(self) -> dict:
        return {
            "checkpoint": self.checkpoint,
            "party_entropy": dict(self.party_entropy),
            "subject_bracket": {k: list(v) for k, v in self.subject_bracket.items()},
        }


def _ledger_row(
    checkpoint: str,
    members: Sequence[tuple[float, PureState]],
    subjects: Sequence[Partition],
    config: REEConfig,
    cache: REECache | None,
) -> LedgerRow:
    layout = members[0][1].layout
    ent = {
        party: sum(p * party_entropy(s, [party]) for p, s in members)
        for party in layout.parties
    }
    sb: dict[str, tuple[float, float]] = {}
    for subject in subjects:
        lo = hi = 0.0
        for p, s in members:
            r = subject_bracket(s, subject, config, cache)
            lo += p * r.lower
            hi += p * r.upper
        sb[subject.key()] = (lo, hi)
    return LedgerRow(checkpoint, ent, sb)


@dataclass(frozen=True)
class AuditReport:
    """Everything a run's audit produced: rows, ledger, and the verdict."""

    protocol_name: str
    rows: tuple[AuditRow, ...]
    ledger: tuple[LedgerRow, ...]
    verdict: str
    counts: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol_name,
            "verdict": self.verdict,
            "counts": dict(self.counts),
            "rows": [r.to_dict() for r in self.rows],
            "ledger": [r.to_dict() for r in self.ledger],
        }


def overall_verdict(rows: Iterable[AuditRow]) -> tuple[str, dict[str, int]]:
    counts = {"pass": 0, "violation": 0, "indeterminate": 0}
    for r in rows:
        counts[r.verdict] += 1
    if counts["violation"]:
        return "violation", counts
    if counts["indeterminate"]:
        return "indeterminate", counts
    return "pass", counts


def run_with_audits(
    protocol: Protocol,
    *,
    config: REEConfig | None = None,
    initial_state: PureState | None = None,
    dim_cap: int = DEFAULT_DIM_CAP,
    subjects: Sequence[Partition] | None = None,
    whole_protocol: bool = True,
) -> tuple[RunResult, AuditReport]:
    """Run a protocol and audit its flagged measurements.

    The ledger records per-party entropies and per-subject entanglement
    brackets at the start, after every audited measurement, and at the end.
    """
    config = config or REEConfig()
    cache = REECache()
    result = run(protocol, initial_state=initial_state, dim_cap=dim_cap)
    layout = result.initial_state.layout
    if subjects is None:
        subjects = pair_subjects(layout.parties)

    rows: list[AuditRow] = []
    ledger: list[LedgerRow] = [
        _ledger_row("initial", [(1.0, result.initial_state)], subjects, config, cache)
    ]
    # Replay branch snapshots after each audited step for the ledger.
    snapshots = _branch_snapshots(result)
    for ev in result.events:
        if not ev.audit:
            continue
        rows.extend(audit_event(ev, config=config, cache=cache, subjects=subjects))
        ledger.append(
            _ledger_row(
                f"after step {ev.step_index}",
                snapshots[ev.step_index],
                subjects,
                config,
                cache,
            )
        )
    if whole_protocol:
        rows.extend(audit_protocol(result, config=config, cache=cache, subjects=subjects))
    ledger.append(
        _ledger_row(
            "final",
            [(b.probability, b.state) for b in result.branches],
            subjects,
            config,
            cache,
        )
    )
    verdict, counts = overall_verdict(rows)
    report = AuditReport(protocol.name, tuple(rows), tuple(ledger), verdict, counts)
    return result, report


def _branch_snapshots(result: RunResult) -> dict[int, list[tuple[float, PureState]]]:
    """Branch lists right after each measurement step, rebuilt from events."""
    # Re-execute cheaply: events carry the post-measurement ensembles, and
    # later steps do not change a snapshot taken at measurement time.
    snaps: dict[int, list[tuple[float, PureState]]] = {}
    for ev in result.events:
        members: list[tuple[float, PureState]] = []
        for pre, ens in ev.groups:
            for (p, s), _ in zip(ens.members, ens.labels):
                members.append((pre.probability * p, s))
        snaps[ev.step_index] = members
    return snaps


# ---------------------------------------------------------------------------
# Fuzz batches
# ---------------------------------------------------------------------------

FUZZ_LAYOUTS: tuple[dict[str, int], ...] = (
    {"A": 1, "B": 1, "C": 1},
    {"A": 2, "B": 1, "C": 1},
    {"A": 1, "B": 2, "C": 1},
    {"A": 1, "B": 1, "C": 2},
)


def three_group_subjects(parties: Sequence[str]) -> list[Partition]:
    """Every partition of four parties into three groups, plus each
    fully split three-party subset."""
    parties = list(parties)
    out: list[Partition] = []
    for pair in itertools.combinations(parties, 2):
        rest = [p for p in parties if p not in pair]
        out.append(Partition((tuple(pair), (rest[0],), (rest[1],))))
    for trio in itertools.combinations(parties, 3):
        out.append(Partition(tuple((p,) for p in trio)))
    return out


def _summarize(protocols: list[dict], rows: list[AuditRow], t0: float) -> dict:
    totals = {"pass": 0, "violation": 0, "indeterminate": 0}
    er_rows = er_indet = 0
    for r in rows:
        totals[r.verdict] += 1
        if r.family in ("er_monotone", "gain_vs_entropy"):
            er_rows += 1
            if r.verdict == "indeterminate":
                er_indet += 1
    return {
        "protocols": protocols,
        "row_counts": totals,
        "rows_total": len(rows),
        "er_rows": er_rows,
        "er_indeterminate": er_indet,
        "indeterminate_fraction": (er_indet / er_rows if er_rows else 0.0),
        "violations": totals["violation"],
        "elapsed_seconds": time.perf_counter() - t0,
    }


def fuzz_audit_batch(
    count: int,
    seed: int = 0,
    *,
    config: REEConfig | None = None,
    max_rounds: int = 3,
) -> dict:
    """Audit random three-party protocols; summarize verdicts.

    Layouts rotate through qubit mixes of at most two qubits per party, round
    counts cycle 1..max_rounds, and every pair of parties is audited.  The
    ``indeterminate_fraction`` counts only rows with optimizer brackets.
    """
    config = config or REEConfig(gap_tol=1e-4)
    t0 = time.perf_counter()
    protocols = []
    all_rows: list[AuditRow] = []
    for i in range(count):
        party_qubits = FUZZ_LAYOUTS[i % len(FUZZ_LAYOUTS)]
        rounds = 1 + i % max_rounds
        prot = random_protocol(party_qubits, rounds=rounds, seed=seed + i)
        _, report = run_with_audits(prot, config=config)
        all_rows.extend(report.rows)
        protocols.append(
            {"name": prot.name, "verdict": report.verdict, "counts": report.counts}
        )
    return _summarize(protocols, all_rows, t0)


def fuzz_four_party_batch(
    count: int,
    seed: int = 0,
    *,
    config: REEConfig | None = None,
    subjects_per_protocol: int = 2,
) -> dict:
    """Per-step audits of random four-party protocols under three-group
    partitions.

    Each protocol is audited against a rotating window of the three-group
    subjects (three-block splits of all four parties and fully split
    three-party subsets), bounding the optimizer budget per protocol.  Only
    the per-measurement rows are produced; whole-protocol and ledger rows are
    the three-party batch's job.
    """
    config = config or REEConfig(gap_tol=1e-3)
    t0 = time.perf_counter()
    layout = {"A": 1, "B": 1, "C": 1, "D": 1}
    all_subjects = three_group_subjects(sorted(layout))
    protocols = []
    all_rows: list[AuditRow] = []
    for i in range(count):
        prot = random_protocol(layout, rounds=1 + i % 2, seed=seed + i)
        subjects = [
            all_subjects[(i * subjects_per_protocol + j) % len(all_subjects)]
            for j in range(subjects_per_protocol)
        ]
        cache = REECache()
        result = run(prot)
        rows: list[AuditRow] = []
        for ev in result.events:
            if ev.audit:
                rows.extend(
                    audit_event(ev, config=config, cache=cache, subjects=subjects)
                )
        verdict, counts = overall_verdict(rows)
        all_rows.extend(rows)
        protocols.append({"name": prot.name, "verdict": verdict, "counts": counts})
    return _summarize(protocols, all_rows, t0)


def refinement_check(
    rho: DensityMatrix,
    fine: Partition,
    coarse: Partition,
    config: REEConfig,
) -> AuditRow:
    """Check that refining the partition cannot shrink the distance.

    The claim is ``E(coarse) <= E(fine)``: every mixture respecting the finer
    split also respects the coarser one.  The row's left side is the coarse
    bracket, its right side the fine lower bound plus the fine gap carried in
    the bracket.
    """
    if not fine.refines(coarse):
        raise ValueError(f"{fine.key()} does not refine {coarse.key()}")
    rc = ree(rho, coarse, config)
    rf = ree(rho, fine, config)
    if rc.upper <= rf.lower + VERDICT_SLACK:
        verdict = "pass"
    elif rc.lower > rf.upper + VERDICT_SLACK:
        verdict = "violation"
    else:
        verdict = "indeterminate"
    return AuditRow(
        family="refinement_monotone",
        step_index=None,
        acting=(),
        subject=f"{coarse.key()} <= {fine.key()}",
        pre_record="-",
        lhs_low=rc.lower,
        lhs_high=rc.upper,
        rhs=rf.upper,
        verdict=verdict,
        detail={
            "coarse_bracket": [rc.lower, rc.upper],
            "fine_bracket": [rf.lower, rf.upper],
        },
    )


def fuzz_refinement_batch(
    count: int,
    seed: int = 0,
    *,
    config: REEConfig | None = None,
) -> dict:
    """Refinement-monotonicity rows on random four-party mixed states.

    Each state is checked on a chain coarse -> finer -> fully split drawn
    from rotating groupings; a ``violation`` verdict means the coarse
    distance certifiably exceeds the fine one, which monotonicity forbids.
    """
    config = config or REEConfig(gap_tol=1e-3)
    t0 = time.perf_counter()
    layout = PartyLayout.qubits("ABCD")
    chains = [
        ("A,B|C,D", "A|B|C,D", "A|B|C|D"),
        ("A,C|B,D", "A,C|B|D", "A|B|C|D"),
        ("A,B,C|D", "A,B|C|D", "A|B|C|D"),
        ("A,D|B,C", "A|D|B,C", "A|B|C|D"),
    ]
    rng = np.random.default_rng(seed)
    rows: list[AuditRow] = []
    protocols = []
    for i in range(count):
        rho = random_density_matrix(layout, rng, rank=2 + i % 3)
        keys = chains[i % len(chains)]
        parts = [Partition.parse(k) for k in keys]
        for coarse, fine in zip(parts[:-1], parts[1:]):
            rows.append(refinement_check(rho, fine, coarse, config))
        protocols.append({"name": f"refine-{i}", "verdict": rows[-1].verdict})
    return _summarize(protocols, rows, t0)
