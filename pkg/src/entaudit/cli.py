"""Command-line front end: state measures, protocol runs, rates, and fuzzing.

Exit codes: 0 for a clean pass, 1 for a certified violation or infeasible
system, 2 for usage errors, 3 when optimizer brackets are too wide to decide.
JSON reports are deterministic for a fixed command line; ``--no-meta`` drops
the provenance block (which carries a timestamp) so outputs are byte-stable.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from datetime import datetime, timezone
from typing import Sequence

from . import __version__
from .accounting import profile_of, singlet_matching_lp, solve_ghz_singlet_rates
from .audit import (
    fuzz_audit_batch,
    fuzz_four_party_batch,
    fuzz_refinement_batch,
    run_with_audits,
)
from .engine import Protocol, build_initial_state, random_protocol, run
from .protocols import (
    concentration_dense_check,
    concentration_distribution,
    expected_yield_bits,
)
from .ree import Partition, REEConfig, ree
from .states import (
    DEFAULT_DIM_CAP,
    PureState,
    make_named_state,
    partial_trace,
    von_neumann_entropy,
)

EXIT_PASS = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2
EXIT_INDETERMINATE = 3


class UsageError(ValueError):
    pass


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="random seed for the optimizer")
    p.add_argument(
        "--gap-tol", type=float, default=1e-6, help="optimizer bracket-width target"
    )
    p.add_argument(
        "--max-dim", type=int, default=DEFAULT_DIM_CAP, help="joint dimension cap"
    )
    p.add_argument(
        "--format", choices=("json", "csv"), default="json", help="report format"
    )
    p.add_argument(
        "--no-meta",
        action="store_true",
        help="omit the provenance block (timestamps) for byte-stable output",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="entaudit",
        description="entanglement accounting for small multiparty states",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    m = sub.add_parser("measure", help="entropies and separable-distance brackets")
    m.add_argument("--state", help="named state: singlet, ghzN, phi1, phi2, product")
    m.add_argument("--state-file", help="JSON file with an initial-state description")
    m.add_argument("--alpha2", type=float, default=0.5, help="alpha^2 for phi1/phi2")
    m.add_argument("--parties", type=int, default=3, help="party count for product")
    m.add_argument("--pair", help="two parties, e.g. B,C")
    m.add_argument("--partition", help="partition of parties, e.g. A|B,C")
    _common_flags(m)
    m.set_defaults(func=cmd_measure)

    r = sub.add_parser("run", help="execute a protocol file (or 'fuzz') with audits")
    r.add_argument("protocol", help="protocol JSON path, or the literal 'fuzz'")
    r.add_argument("--audit", action="store_true", help="audit flagged measurements")
    r.add_argument("--rounds", type=int, default=2, help="rounds for generated protocols")
    r.add_argument(
        "--qubits",
        default="1,1,1",
        help="qubits per party for generated protocols, e.g. 2,1,1",
    )
    _common_flags(r)
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("rates", help="extraction rates / singlet matching for a state")
    t.add_argument("--state", required=True, help="named state (3 or 4 parties)")
    t.add_argument("--alpha2", type=float, default=0.5, help="alpha^2 for phi1/phi2")
    t.add_argument("--parties", type=int, default=3, help="party count for product")
    _common_flags(t)
    t.set_defaults(func=cmd_rates)

    c = sub.add_parser("concentrate", help="concentration outcome table")
    c.add_argument("--copies", type=int, required=True, help="number of copies n")
    c.add_argument("--alpha2", type=float, default=0.5, help="alpha^2 per copy")
    c.add_argument(
        "--check",
        action="store_true",
        help="cross-check against the dense simulator (n <= 4)",
    )
    _common_flags(c)
    c.set_defaults(func=cmd_concentrate)

    f = sub.add_parser("fuzz", help="randomized audit batches")
    f.add_argument("--count", type=int, default=10, help="number of trials")
    f.add_argument(
        "--mode",
        choices=("pairs", "four-party", "refinement"),
        default="pairs",
        help="three-party pair audits, four-party group audits, or refinement checks",
    )
    _common_flags(f)
    f.set_defaults(func=cmd_fuzz)
    return parser


def _config(args: argparse.Namespace) -> REEConfig:
    return REEConfig(gap_tol=args.gap_tol, seed=args.seed)


def _meta(args: argparse.Namespace) -> dict:
    return {
        "command": args.command,
        "seed": args.seed,
        "gap_tol": args.gap_tol,
        "max_dim": args.max_dim,
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }


def _emit(report: dict, args: argparse.Namespace, csv_rows: list[dict] | None = None) -> None:
    if not args.no_meta:
        report = {**report, "meta": _meta(args)}
    if args.format == "csv" and csv_rows:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(csv_rows[0].keys()))
        writer.writeheader()
        for row in csv_rows:
            writer.writerow(row)
        sys.stdout.write(buf.getvalue())
        return
    print(json.dumps(report, sort_keys=True, separators=(",", ":")))


def resolve_state(args: argparse.Namespace) -> tuple[str, PureState]:
    if getattr(args, "state_file", None):
        with open(args.state_file) as fh:
            spec = json.load(fh)
        state = build_initial_state(spec, args.max_dim)
        return args.state_file, state
    name = args.state
    if not name:
        raise UsageError("provide --state or --state-file")
    if name in ("singlet", "psi_plus", "psi_minus"):
        return name, make_named_state(name)
    if name.startswith("ghz") and name[3:].isdigit():
        return name, make_named_state("ghz", [int(name[3:])])
    if name in ("phi1", "phi2"):
        if not 0.0 < args.alpha2 < 1.0:
            raise UsageError("--alpha2 must lie strictly between 0 and 1")
        return f"{name}(a2={args.alpha2})", make_named_state(name, [math.sqrt(args.alpha2)])
    if name == "product":
        return name, make_named_state("product_zero", [2] * args.parties)
    raise UsageError(f"unknown state name {name!r}")


def cmd_measure(args: argparse.Namespace) -> int:
    label, state = resolve_state(args)
    if state.layout.joint_dim > args.max_dim:
        raise UsageError(
            f"state dimension {state.layout.joint_dim} exceeds --max-dim {args.max_dim}"
        )
    if args.partition:
        partition = Partition.parse(args.partition)
    elif args.pair:
        a, b = (x.strip() for x in args.pair.split(","))
        partition = Partition.parse(f"{a}|{b}")
    else:
        partition = Partition(tuple((p,) for p in state.layout.parties))
    keep = [p for p in state.layout.parties if p in partition.parties]
    missing = partition.parties - set(state.layout.parties)
    if missing:
        raise UsageError(f"parties {sorted(missing)} not in state {label}")
    reduced = partial_trace(state, keep)
    result = ree(reduced, partition, _config(args))
    report = {
        "state": label,
        "partition": partition.key(),
        "bracket": [result.lower, result.upper],
        "midpoint": result.midpoint,
        "width": result.gap,
        "iterations": result.iterations,
        "converged": result.converged,
        "entropies": {
            p: von_neumann_entropy(partial_trace(reduced, [p])) for p in keep
        },
    }
    csv_rows = [
        {
            "state": label,
            "partition": partition.key(),
            "lower": result.lower,
            "upper": result.upper,
            "converged": result.converged,
        }
    ]
    _emit(report, args, csv_rows)
    return EXIT_PASS


def _ledger_csv(report: dict) -> list[dict]:
    rows = []
    for row in report.get("ledger", []):
        for party, value in sorted(row["party_entropy"].items()):
            rows.append(
                {
                    "checkpoint": row["checkpoint"],
                    "quantity": "entropy",
                    "key": party,
                    "low": value,
                    "high": value,
                }
            )
        for key, (lo, hi) in sorted(row["subject_bracket"].items()):
            rows.append(
                {
                    "checkpoint": row["checkpoint"],
                    "quantity": "entanglement",
                    "key": key,
                    "low": lo,
                    "high": hi,
                }
            )
    for r in report.get("rows", []):
        rows.append(
            {
                "checkpoint": f"step {r['step']}" if r["step"] is not None else "overall",
                "quantity": r["family"],
                "key": r["subject"],
                "low": r["lhs_low"],
                "high": r["lhs_high"],
            }
        )
    return rows


def cmd_run(args: argparse.Namespace) -> int:
    if args.protocol == "fuzz":
        counts = [int(x) for x in args.qubits.split(",")]
        party_qubits = {chr(ord("A") + i): c for i, c in enumerate(counts)}
        protocol = random_protocol(party_qubits, rounds=args.rounds, seed=args.seed)
        audit = True
    else:
        with open(args.protocol) as fh:
            protocol = Protocol.from_json(fh.read())
        audit = args.audit

    if audit:
        result, audit_report = run_with_audits(
            protocol, config=_config(args), dim_cap=args.max_dim
        )
        report = audit_report.to_dict()
        report["branches"] = len(result.branches)
        report["outcome_probabilities"] = [
            {
                "step": ev.step_index,
                "party": ev.party,
                "probabilities": ev.outcome_probabilities(),
            }
            for ev in result.events
        ]
        _emit(report, args, _ledger_csv(report))
        return {
            "pass": EXIT_PASS,
            "violation": EXIT_VIOLATION,
            "indeterminate": EXIT_INDETERMINATE,
        }[audit_report.verdict]

    result = run(protocol, dim_cap=args.max_dim)
    checkpoints = [("initial", [(1.0, result.initial_state)])]
    if protocol.steps:
        checkpoints.append(("final", [(b.probability, b.state) for b in result.branches]))
    ledger = []
    for name, members in checkpoints:
        layout = members[0][1].layout
        ledger.append(
            {
                "checkpoint": name,
                "party_entropy": {
                    p: sum(
                        w * von_neumann_entropy(partial_trace(s, [p]))
                        for w, s in members
                    )
                    for p in layout.parties
                },
                "subject_bracket": {},
            }
        )
    report = {
        "protocol": protocol.name,
        "verdict": "pass",
        "branches": len(result.branches),
        "ledger": ledger,
    }
    _emit(report, args, _ledger_csv(report))
    return EXIT_PASS


def cmd_rates(args: argparse.Namespace) -> int:
    label, state = resolve_state(args)
    n = len(state.layout.parties)
    config = _config(args)
    if n == 3:
        profile = profile_of(state, config)
        solution = solve_ghz_singlet_rates(profile)
        width_sum = sum(hi - lo for lo, hi in profile.pair_ree.values())
        if solution.feasible and width_sum <= 0.01:
            verdict, code = "feasible", EXIT_PASS
        elif solution.feasible:
            verdict, code = "indeterminate", EXIT_INDETERMINATE
        else:
            verdict, code = "infeasible", EXIT_VIOLATION
        report = {
            "state": label,
            "profile": profile.to_dict(),
            "solution": solution.to_dict(),
            "verdict": verdict,
        }
        csv_rows = [
            {"key": "g", "value": solution.g, "verdict": verdict},
            *(
                {"key": k, "value": v, "verdict": verdict}
                for k, v in sorted(solution.s.items())
            ),
        ]
        _emit(report, args, csv_rows)
        return code
    if n == 4:
        profile = profile_of(state, config)
        cert = singlet_matching_lp(profile)
        report = {
            "state": label,
            "profile": profile.to_dict(),
            "certificate": cert.to_dict(),
            "description": cert.describe(),
            "verdict": "feasible" if cert.feasible else "infeasible",
        }
        csv_rows = [
            {"key": k, "value": v, "verdict": report["verdict"]}
            for k, v in sorted(cert.rates.items())
        ] or [{"key": "feasible", "value": False, "verdict": "infeasible"}]
        _emit(report, args, csv_rows)
        return EXIT_PASS if cert.feasible else EXIT_VIOLATION
    raise UsageError(f"rates needs a 3- or 4-party state, got {n} parties")


def cmd_concentrate(args: argparse.Namespace) -> int:
    n = args.copies
    if n < 1:
        raise UsageError("--copies must be at least 1")
    if not 0.0 < args.alpha2 < 1.0:
        raise UsageError("--alpha2 must lie strictly between 0 and 1")
    outcomes = concentration_distribution(n, args.alpha2)
    report = {
        "copies": n,
        "alpha2": args.alpha2,
        "outcomes": [o.to_dict() for o in outcomes],
        "expected_yield_bits": expected_yield_bits(n, args.alpha2),
    }
    if args.check:
        if n > 4:
            raise UsageError("--check supports at most 4 copies")
        dense = concentration_dense_check(n, math.sqrt(args.alpha2))
        by_weight = {o.weight: o.probability for o in outcomes}
        deviation = max(
            abs(d["probability"] - by_weight[d["weight"]]) for d in dense
        )
        report["dense_check"] = dense
        report["dense_probability_deviation"] = deviation
    csv_rows = [
        {
            "weight": o.weight,
            "probability": o.probability,
            "rank": o.rank,
            "ghz_yield_bits": o.ghz_yield_bits,
        }
        for o in outcomes
    ]
    _emit(report, args, csv_rows)
    return EXIT_PASS


def cmd_fuzz(args: argparse.Namespace) -> int:
    config = REEConfig(gap_tol=max(args.gap_tol, 1e-4), seed=args.seed)
    if args.mode == "pairs":
        out = fuzz_audit_batch(args.count, seed=args.seed, config=config)
    elif args.mode == "four-party":
        out = fuzz_four_party_batch(args.count, seed=args.seed, config=config)
    else:
        out = fuzz_refinement_batch(
            args.count, seed=args.seed, config=REEConfig(gap_tol=1e-3, seed=args.seed)
        )
    csv_rows = [
        {"name": p["name"], "verdict": p["verdict"]} for p in out["protocols"]
    ]
    _emit(out, args, csv_rows)
    if out["violations"]:
        return EXIT_VIOLATION
    if out["indeterminate_fraction"] > 0.10:
        return EXIT_INDETERMINATE
    return EXIT_PASS


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
