"""Entropy profiles, extraction rates, and singlet-matching feasibility.

The extraction model treats a pure three-party state as asymptotically
equivalent to ``g`` three-party GHZ states plus ``s_XY`` shared pairs per
copy.  One-party entropies then satisfy ``S_X = g + s_XY + s_XZ``, and each
pair's reduced state carries exactly ``s_XY`` bits of two-party
entanglement, which pins the pair rates to the measured brackets and leaves
``g`` triply overdetermined.  The spread of the three ``g`` estimates is the
profile's inconsistency with the model.

For four parties the analogous question, whether shared pairs alone can
reproduce an entropy profile, becomes a small linear feasibility problem
with one equality per party and one per balanced two-against-two split.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linprog

from .ree import Partition, REEConfig, REEResult, ree
from .states import (
    DensityMatrix,
    PartyLayout,
    PureState,
    partial_trace,
    von_neumann_entropy,
)

RATE_TOL = 1e-6
NEG_TOL = 1e-9


@dataclass(frozen=True)
class EntropyProfile:
    """One-party entropies, balanced-cut entropies, and pair brackets."""

    parties: tuple[str, ...]
    one_party: dict[str, float]
    bipartitions: dict[str, float]
    pair_ree: dict[str, tuple[float, float]]

    def pair_key(self, a: str, b: str) -> str:
        return "|".join(sorted((a, b)))

    def to_dict(self) -> dict:
        return {
            "parties": list(self.parties),
            "one_party": dict(self.one_party),
            "bipartitions": dict(self.bipartitions),
            "pair_ree": {k: list(v) for k, v in self.pair_ree.items()},
        }


def profile_of(
    state: PureState | DensityMatrix,
    config: REEConfig | None = None,
) -> EntropyProfile:
    """Measure the entropy profile of a three- or four-party state.

    Computes every one-party entropy, every balanced two-against-two cut
    entropy (four parties only), and a certified bracket on each pair's
    reduced two-party entanglement.
    """
    config = config or REEConfig()
    layout = state.layout
    parties = layout.parties
    if len(parties) not in (3, 4):
        raise ValueError(f"profile needs 3 or 4 parties, got {len(parties)}")
    one = {p: von_neumann_entropy(partial_trace(state, [p])) for p in parties}
    cuts: dict[str, float] = {}
    if len(parties) == 4:
        seen = set()
        for pair in itertools.combinations(parties, 2):
            rest = tuple(p for p in parties if p not in pair)
            key = min(",".join(pair), ",".join(rest))
            if key in seen:
                continue
            seen.add(key)
            cuts[key] = von_neumann_entropy(partial_trace(state, list(pair)))
    pair_ree: dict[str, tuple[float, float]] = {}
    for a, b in itertools.combinations(parties, 2):
        r = ree(partial_trace(state, [a, b]), Partition.parse(f"{a}|{b}"), config)
        pair_ree["|".join(sorted((a, b)))] = (r.lower, r.upper)
    return EntropyProfile(tuple(parties), one, cuts, pair_ree)


@dataclass(frozen=True)
class ExtractionSolution:
    """GHZ and pair rates forced by a three-party profile."""

    g: float
    s: dict[str, float]
    residual: float
    feasible: bool
    tolerance: float
    g_estimates: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "g": self.g,
            "s": dict(self.s),
            "residual": self.residual,
            "feasible": self.feasible,
            "tolerance": self.tolerance,
            "g_estimates": dict(self.g_estimates),
        }


def solve_ghz_singlet_rates(profile: EntropyProfile) -> ExtractionSolution:
    """Solve the rate equations ``S_X = g + s_XY + s_XZ`` for a 3-party profile.

    Pair rates are pinned to the bracket midpoints of the measured pair
    entanglements; each one-party equation then yields its own estimate of
    ``g``.  The residual is the spread of those estimates plus any
    negativity of the rates, and the profile is feasible when the residual
    is within the brackets' own uncertainty.
    """
    if len(profile.parties) != 3:
        raise ValueError("rate equations apply to 3-party profiles")
    s = {k: 0.5 * (lo + hi) for k, (lo, hi) in profile.pair_ree.items()}
    width_sum = sum(hi - lo for lo, hi in profile.pair_ree.values())
    g_est: dict[str, float] = {}
    for x in profile.parties:
        adjacent = [k for k in s if x in k.split("|")]
        g_est[x] = profile.one_party[x] - sum(s[k] for k in adjacent)
    spread = max(g_est.values()) - min(g_est.values())
    g = sum(g_est.values()) / len(g_est)
    negativity = max(0.0, -min([g, *s.values()]))
    residual = spread + negativity
    tolerance = max(RATE_TOL, 3.0 * width_sum)
    if -tolerance <= g < 0.0:
        # Optimizer floor bias can push an exactly-zero rate a hair negative.
        g = 0.0
    feasible = residual <= tolerance and min([g, *s.values()]) >= -NEG_TOL
    return ExtractionSolution(
        g=g,
        s=s,
        residual=residual,
        feasible=feasible,
        tolerance=tolerance,
        g_estimates=g_est,
    )


@dataclass(frozen=True)
class PairMatch:
    """Pair rates matching three one-party entropies, if any exist."""

    s: dict[str, float]
    feasible: bool

    def to_dict(self) -> dict:
        return {"s": dict(self.s), "feasible": self.feasible}


def match_singlets_3party(sA: float, sB: float, sC: float) -> PairMatch:
    """Closed-form pair rates for three one-party entropies.

    ``S_X = s_XY + s_XZ`` inverts to ``s_AB = (S_A + S_B - S_C)/2`` and
    cyclic; the profile is matchable exactly when the triangle conditions
    hold (no rate negative).
    """
    s = {
        "A|B": 0.5 * (sA + sB - sC),
        "A|C": 0.5 * (sA + sC - sB),
        "B|C": 0.5 * (sB + sC - sA),
    }
    return PairMatch(s=s, feasible=all(v >= -NEG_TOL for v in s.values()))


@dataclass(frozen=True)
class MatchingCertificate:
    """Outcome of the singlet-matching feasibility system.

    When infeasible, ``combination`` names a signed sum of constraint rows
    whose left sides cancel to a multiple of the total pair mass while the
    right sides disagree, and ``totals`` carries the two contradictory
    values of that total.
    """

    feasible: bool
    rates: dict[str, float]
    residual: float
    combination: dict[str, float]
    totals: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "rates": dict(self.rates),
            "residual": self.residual if math.isfinite(self.residual) else None,
            "combination": dict(self.combination),
            "totals": dict(self.totals),
        }

    def describe(self) -> str:
        if self.feasible:
            body = ", ".join(f"{k}={v:.6f}" for k, v in sorted(self.rates.items()))
            return f"feasible: {body}"
        lines = ["infeasible; contradictory constraint combination:"]
        for name, coef in sorted(self.combination.items()):
            if abs(coef) > 1e-9:
                lines.append(f"  {coef:+.3f} x [{name}]")
        if "pair_mass_from_cuts" in self.totals:
            lines.append(
                "  one-party rows force total pair mass "
                f"{self.totals['pair_mass_from_one_party']:.6f} "
                f"(row sum {self.totals['one_party_rows_sum']:.6f}), cut rows "
                f"force {self.totals['pair_mass_from_cuts']:.6f} "
                f"(row sum {self.totals['cut_rows_sum']:.6f})"
            )
        return "\n".join(lines)


def _matching_system(
    profile: EntropyProfile,
) -> tuple[np.ndarray, np.ndarray, list[str], list[str]]:
    parties = list(profile.parties)
    pairs = ["|".join(sorted(p)) for p in itertools.combinations(parties, 2)]
    rows: list[list[float]] = []
    rhs: list[float] = []
    names: list[str] = []
    for x in parties:
        rows.append([1.0 if x in k.split("|") else 0.0 for k in pairs])
        rhs.append(profile.one_party[x])
        names.append(f"S_{x}")
    if len(parties) == 4:
        for key, value in sorted(profile.bipartitions.items()):
            group = set(key.split(","))
            row = []
            for k in pairs:
                a, b = k.split("|")
                row.append(1.0 if (a in group) != (b in group) else 0.0)
            rows.append(row)
            rhs.append(value)
            names.append(f"S_{key.replace(',', '')}|rest")
    return np.array(rows), np.array(rhs), pairs, names


def singlet_matching_lp(profile: EntropyProfile) -> MatchingCertificate:
    """Decide whether shared pairs alone can reproduce an entropy profile.

    Seeks ``s_ij >= 0`` with one equality per party (``sum_j s_ij = S_i``)
    and, for four parties, one per balanced cut (pairs crossing the cut sum
    to the cut entropy).  Three-party systems are solved in closed form;
    four-party systems go through a linear program, and infeasibility comes
    with a signed combination of constraints with contradictory totals.
    """
    parties = list(profile.parties)
    a_eq, b_eq, pairs, names = _matching_system(profile)
    if len(parties) == 3:
        rates: dict[str, float] = {}
        for a, b in itertools.combinations(parties, 2):
            c = next(p for p in parties if p not in (a, b))
            rates["|".join(sorted((a, b)))] = 0.5 * (
                profile.one_party[a] + profile.one_party[b] - profile.one_party[c]
            )
        residual = float(
            np.max(np.abs(a_eq @ np.array([rates[k] for k in pairs]) - b_eq))
        )
        feasible = all(v >= -NEG_TOL for v in rates.values())
        _, totals = _aggregate_identity(profile, names)
        return MatchingCertificate(feasible, rates, residual, {}, totals)

    res = linprog(
        c=np.zeros(len(pairs)),
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=[(0.0, None)] * len(pairs),
        method="highs",
    )
    combination, totals = _aggregate_identity(profile, names)
    if res.status == 0:
        rates = dict(zip(pairs, np.maximum(res.x, 0.0).tolist()))
        residual = float(np.max(np.abs(a_eq @ res.x - b_eq)))
        return MatchingCertificate(True, rates, residual, {}, totals)
    farkas = _farkas_certificate(a_eq, b_eq, names)
    return MatchingCertificate(False, {}, math.inf, farkas or combination, totals)


def _aggregate_identity(
    profile: EntropyProfile, names: Sequence[str]
) -> tuple[dict[str, float], dict[str, float]]:
    """The hand-derived contradiction witness for four-party profiles.

    Summing the one-party rows counts every pair twice, so the total pair
    mass is half the entropy sum.  Each pair crosses exactly two of the
    three balanced cuts, so summing the cut rows counts every pair twice as
    well, giving a second value for the same total.
    """
    n = len(profile.parties)
    one_sum = sum(profile.one_party.values())
    combination = {name: 0.5 for name in names if "|rest" not in name}
    totals = {"one_party_rows_sum": one_sum, "pair_mass_from_one_party": one_sum / 2.0}
    if n == 4:
        cut_sum = sum(profile.bipartitions.values())
        totals["cut_rows_sum"] = cut_sum
        totals["pair_mass_from_cuts"] = cut_sum / 2.0
        for name in names:
            if "|rest" in name:
                combination[name] = -0.5
    return combination, totals


def _farkas_certificate(
    a_eq: np.ndarray, b_eq: np.ndarray, names: Sequence[str]
) -> dict[str, float] | None:
    """A dual vector ``y`` with ``A^T y <= 0`` and ``b . y > 0``.

    Such a ``y`` proves ``Ax = b, x >= 0`` unsolvable: it is a signed
    combination of the equality rows that is nonpositive on every variable
    yet positive on the right-hand side.
    """
    m = a_eq.shape[0]
    res = linprog(
        c=-b_eq,
        A_ub=a_eq.T,
        b_ub=np.zeros(a_eq.shape[1]),
        bounds=[(-1.0, 1.0)] * m,
        method="highs",
    )
    if res.status != 0 or -res.fun <= 1e-9:
        return None
    return {name: float(y) for name, y in zip(names, res.x)}


# ---------------------------------------------------------------------------
# Multi-party GHZ reductions
# ---------------------------------------------------------------------------


def ghz_reduction_scan(n: int, k: int, config: REEConfig | None = None) -> dict:
    """Verify no ``k`` parties of an ``n``-party GHZ share any entanglement.

    Every ``k``-party reduction is checked to be exactly the even classical
    mixture of the all-zero and all-one products, and an explicit two-atom
    separable model certifies distance ``<= 1e-6`` from the fully split
    mixtures.  A clean scan means the GHZ's entanglement is invisible to any
    proper subset, so no reversible conversion into ``k``-party entangled
    pieces exists.
    """
    from .states import make_named_state

    if not 1 <= k < n:
        raise ValueError("need 1 <= k < n")
    if n > 5:
        raise ValueError("scan supports n <= 5")
    state = make_named_state("ghz", [n])
    parties = state.layout.parties
    rows = []
    for subset in itertools.combinations(parties, k):
        red = partial_trace(state, list(subset))
        d = red.layout.joint_dim
        expected = np.zeros((d, d), dtype=np.complex128)
        expected[0, 0] = 0.5
        expected[d - 1, d - 1] = 0.5
        exact = float(np.max(np.abs(red.matrix - expected)))
        if k >= 2:
            partition = Partition(tuple((p,) for p in subset))
            upper = _two_atom_upper(red, partition)
        else:
            upper = 0.0
        rows.append(
            {
                "subset": list(subset),
                "mixture_deviation": exact,
                "separable_upper": upper,
                "separable": exact <= 1e-9 and upper <= 1e-6,
            }
        )
    return {
        "n": n,
        "k": k,
        "all_separable": all(r["separable"] for r in rows),
        "rows": rows,
    }


def _two_atom_upper(red: DensityMatrix, partition: Partition) -> float:
    """Distance bound from the explicit all-zero/all-one two-atom model."""
    from .ree import SeparableModel, ProductAtom
    from .states import relative_entropy

    dims = [red.layout.local_dim(p) for b in partition.blocks for p in b]
    atoms = []
    for fill in (0, -1):
        factors = []
        for d in dims:
            v = np.zeros(d, dtype=np.complex128)
            v[fill] = 1.0
            factors.append(v)
        atoms.append(ProductAtom(tuple(factors), 0))
    model = SeparableModel(
        partitions=(partition,),
        atoms=tuple(atoms),
        weights=(0.5, 0.5),
        floor_weight=1e-9,
    )
    return relative_entropy(red, model.assemble(red.layout))
