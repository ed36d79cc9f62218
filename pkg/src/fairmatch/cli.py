"""Command-line front door: solve, verify, decompose, reproduce, list.

Exit codes: 0 = success / property PASS / reproduction matched, 1 =
property FAIL (a witness is printed), 2 = usage or input error.  All
rationals print as "p/q"; --json switches to machine-readable reports that
round-trip through the allocation parser.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from typing import Any, Sequence

from .core import (
    AllocationMatrix,
    Dominance,
    InstanceError,
    MatchingDistribution,
    as_fraction,
    dominates,
    format_fraction,
    metric_as_proto,
)
from .fairness import (
    check_ef,
    check_if,
    check_mutual_replacement_if,
    check_piif,
    check_rank_if,
    check_tau_piif,
    validate_strict_if,
)
from .instances import (
    CATALOG_KEYS,
    allocation_to_json,
    build,
    parse_allocation,
    parse_instance,
    serialize_allocation,
)
from .mechanisms import (
    bvn_decompose,
    compose_sample_gs,
    doctors_first,
    gale_shapley,
    global_stability_solve,
    hospitals_first,
)
from .stability import (
    active_contracts,
    check_local_stability,
    check_weak_ex_ante,
    contract_instability_mass,
    tau_weak_ex_ante,
)

DEFAULT_TAU = Fraction(1, 64)
REPRODUCE_TAU = Fraction(1, 1024)


class UsageError(Exception):
    pass


def _read(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc


def _print_distribution(md: MatchingDistribution, out: list[str]) -> None:
    out.append("allocation:")
    for weight, pairs in md.parts:
        joined = " ".join(f"({d},{h})" for d, h in pairs)
        out.append(f"  {format_fraction(weight)}  {joined}")
    matrix = md.marginals()
    out.append("marginals (rows = doctors, columns = " + ",".join(matrix.hospitals) + "):")
    for d, row in zip(matrix.doctors, matrix.rows):
        out.append(f"  {d}: " + " ".join(format_fraction(v) for v in row))


def _cmd_solve(args: argparse.Namespace) -> int:
    inst = parse_instance(_read(args.input))
    tau = as_fraction(args.tau) if args.tau else DEFAULT_TAU
    trace_rounds = None
    if args.alg == "gs":
        orders = {}
        for h in inst.hospitals:
            prefs = inst.hospital_prefs[h]
            if not hasattr(prefs, "order"):
                raise UsageError("alg gs needs deterministic hospital preferences")
            orders[h] = prefs.order
        matching = gale_shapley(inst.doctor_prefs, orders, args.proposing)
        md = MatchingDistribution.from_parts(
            inst.doctors, inst.hospitals, [(Fraction(1), matching)]
        )
    elif args.alg == "sampled-gs":
        md = compose_sample_gs(inst, args.proposing)
    elif args.alg == "hospitals-first":
        if tau <= 0:
            raise UsageError("tau must be > 0 for propose-and-reject mechanisms")
        md, trace = hospitals_first(inst, tau)
        trace_rounds = len(trace)
    elif args.alg == "doctors-first":
        if tau <= 0:
            raise UsageError("tau must be > 0 for propose-and-reject mechanisms")
        md, trace = doctors_first(inst, tau)
        trace_rounds = len(trace)
    elif args.alg == "global":
        md = global_stability_solve(inst)
    else:
        raise UsageError(f"unknown algorithm {args.alg!r}")
    payload = serialize_allocation(md, trace_rounds if args.trace else None)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(payload)
    if args.json:
        print(payload, end="")
    else:
        out: list[str] = []
        _print_distribution(md, out)
        if args.trace and trace_rounds is not None:
            out.append(f"rounds: {trace_rounds}")
        print("\n".join(out))
    return 0


_FAIRNESS_PROPS = {"if", "ef", "piif", "tau-piif"}
_PREF_PROPS = {"strict-if-prefs", "rank-if-prefs", "mr-if-prefs"}


def _cmd_verify(args: argparse.Namespace) -> int:
    inst = parse_instance(_read(args.input))
    tau = as_fraction(args.tau) if args.tau else None
    prop = args.property
    report: dict[str, Any]
    if prop in _PREF_PROPS:
        if prop == "strict-if-prefs":
            proto = metric_as_proto(inst.metric)
            bad = [
                h for h in inst.hospitals if not validate_strict_if(inst.hospital_prefs[h], proto)
            ]
            passed = not bad
            report = {"property": prop, "pass": passed}
            if bad:
                report["witness"] = {"hospitals": bad}
        else:
            checker = check_rank_if if prop == "rank-if-prefs" else check_mutual_replacement_if
            report = {"property": prop, "pass": True}
            for h in inst.hospitals:
                verdict = checker(inst.hospital_prefs[h], inst.metric)
                if not verdict.passed:
                    report = verdict.to_json(prop)
                    report["witness"]["hospital"] = h
                    break
    else:
        if not args.allocation:
            raise UsageError(f"property {prop!r} needs --allocation")
        md = parse_allocation(_read(args.allocation))
        if md.doctors != inst.doctors or md.hospitals != inst.hospitals:
            raise UsageError("allocation and instance disagree on the participant sets")
        if prop == "if":
            report = check_if(md, inst.metric).to_json(prop)
        elif prop == "ef":
            report = check_ef(md, inst.doctor_prefs).to_json(prop)
        elif prop == "piif":
            report = check_piif(md, inst.metric, inst.doctor_prefs).to_json(prop)
        elif prop == "tau-piif":
            if tau is None:
                raise UsageError("tau-piif needs --tau")
            report = check_tau_piif(md, inst.metric, inst.doctor_prefs, tau).to_json(prop)
        elif prop == "contract":
            contracts = active_contracts(md, inst)
            report = {"property": prop, "pass": not contracts}
            if contracts:
                report["witness"] = {"contracts": [c.to_json() for c in contracts]}
        elif prop == "tau-contract":
            if tau is None:
                raise UsageError("tau-contract needs --tau")
            mass = contract_instability_mass(md, inst)
            report = {
                "property": prop,
                "pass": mass <= tau,
                "instability_mass": format_fraction(mass),
                "tau": format_fraction(tau),
            }
        elif prop == "weak-ex-ante":
            if tau is not None:
                verdict = tau_weak_ex_ante(md, inst, tau)
                report = verdict.to_json(prop)
            else:
                report = check_weak_ex_ante(md, inst).to_json(prop)
        elif prop == "local":
            report = {"property": prop, "pass": check_local_stability(md, inst).passed}
        else:
            raise UsageError(f"unknown property {prop!r}")
    passed = bool(report.get("pass"))
    if args.json:
        print(json.dumps(report, sort_keys=True))
    else:
        status = report.get("status", "PASS" if passed else "FAIL")
        line = f"{prop}: {status}"
        if "witness" in report:
            line += f"  witness: {json.dumps(report['witness'], sort_keys=True)}"
        if "instability_mass" in report:
            line += f"  mass: {report['instability_mass']}"
        print(line)
    return 0 if passed else 1


def _cmd_decompose(args: argparse.Namespace) -> int:
    data = json.loads(_read(args.matrix))
    rows = data["matrix"] if isinstance(data, dict) else data
    n = len(rows)
    doctors = tuple(f"d{i}" for i in range(n))
    hospitals = tuple(f"h{i}" for i in range(n))
    matrix = AllocationMatrix(
        doctors,
        hospitals,
        tuple(tuple(as_fraction(v) for v in row) for row in rows),
    )
    md = bvn_decompose(matrix)
    if args.json:
        print(json.dumps(allocation_to_json(md), indent=2, sort_keys=True))
    else:
        out: list[str] = []
        _print_distribution(md, out)
        print("\n".join(out))
    return 0


def _check(label: str, ok: bool, out: list[str], failures: list[str]) -> None:
    out.append(f"{label}: {'OK' if ok else 'MISMATCH'}")
    if not ok:
        failures.append(label)


def _reproduce(key: str, alpha: Fraction | None, out: list[str]) -> list[str]:
    named = build(key, alpha)
    inst = named.instance
    expected = named.expected
    failures: list[str] = []
    if key in ("gs-doctor-compose", "gs-hospital-compose"):
        md = compose_sample_gs(inst, expected["proposing_side"])
        _print_distribution(md, out)
        _check("output law", md == expected["distribution"], out, failures)
        verdict = check_piif(md, inst.metric, inst.doctor_prefs)
        w = verdict.witness
        ok = (
            not verdict.passed
            and (w.i, w.j) == expected["piif_witness"]
            and w.value == expected["piif_deficit"]
        )
        out.append(f"PIIF: FAIL ({w.i}, {w.j})" if not verdict.passed else "PIIF: PASS")
        _check("PIIF audit", ok, out, failures)
    elif key == "algs-differ":
        for alg, runner in (("hospitals_first", hospitals_first), ("doctors_first", doctors_first)):
            md, _ = runner(inst, REPRODUCE_TAU)
            got = md.marginals()
            want = expected[alg]
            close = all(
                abs(got.rows[i][j] - want.rows[i][j]) <= 2 * REPRODUCE_TAU
                for i in range(inst.n)
                for j in range(inst.n)
            )
            out.append(f"{alg} marginals:")
            for d, row in zip(got.doctors, got.rows):
                out.append(f"  {d}: " + " ".join(format_fraction(v) for v in row))
            _check(f"{alg} within 2*tau of the limit", close, out, failures)
    elif key == "not-optimal":
        md_h, _ = hospitals_first(inst, REPRODUCE_TAU)
        md_d, _ = doctors_first(inst, REPRODUCE_TAU)
        got_h, got_d = md_h.marginals(), md_d.marginals()
        _check("hospitals_first matrix", got_h.rows == expected["hospitals_first"].rows, out, failures)
        _check("doctors_first matrix", got_d.rows == expected["doctors_first"].rows, out, failures)
        for d in inst.doctors:
            verdict = dominates(
                got_h.doctor_prospect(d), got_d.doctor_prospect(d), inst.doctor_prefs[d]
            )
            out.append(f"domination for {d}: {verdict.value}")
    elif key in ("nonconv-hospitals-first", "nonconv-doctors-first"):
        runner = hospitals_first if key == "nonconv-hospitals-first" else doctors_first
        _, trace = runner(inst, Fraction(0), max_rounds=21)
        free = trace.free_mass
        out.append("free mass by round: " + " ".join(format_fraction(v) for v in free))
        ok = all(free[2 * k] == free[0] / 2**k for k in range(1, 11))
        _check("geometric free-mass decay", ok, out, failures)
    elif key == "tilde-prefs":
        from .core import rank_distribution

        prefs = inst.hospital_prefs[inst.hospitals[0]]
        got = tuple(
            tuple(rank_distribution(prefs, d)[r] for d in inst.doctors)
            for r in range(inst.n)
        )
        for r, row in enumerate(got):
            out.append(f"rank {r + 1}: " + " ".join(format_fraction(v) for v in row))
        _check("rank matrix", got == expected["rank_matrix"], out, failures)
        verdict = check_mutual_replacement_if(prefs, inst.metric)
        _check("mutual-replacement fairness", verdict.passed, out, failures)
    elif key == "imposs-unfair-lahp":
        stable = expected["case1_stable"]
        unstable = expected["case1_unstable"]
        v_stable = check_weak_ex_ante(stable, inst)
        v_unstable = check_weak_ex_ante(unstable, inst)
        _check("case-1 coin-flip allocation stable", v_stable.stable, out, failures)
        want_h, want_set, want_sigma = expected["case1_witness"]
        ok = (
            not v_unstable.stable
            and v_unstable.witness.hospital == want_h
            and v_unstable.witness.doctor_set == want_set
            and dict(v_unstable.witness.lottery.mass) == want_sigma
        )
        if v_unstable.witness is not None:
            out.append("witness: " + json.dumps(v_unstable.witness.to_json(), sort_keys=True))
        _check("case-1 cluster-locked allocation flagged", ok, out, failures)
    elif key == "imposs-metric-ladp":
        case2 = expected["case2"]
        verdict = check_weak_ex_ante(expected["case2_unstable"], case2)
        want_h, want_set, want_sigma = expected["case2_witness"]
        ok = (
            not verdict.stable
            and verdict.witness.hospital == want_h
            and verdict.witness.doctor_set == want_set
            and dict(verdict.witness.lottery.mass) == want_sigma
        )
        if verdict.witness is not None:
            out.append("witness: " + json.dumps(verdict.witness.to_json(), sort_keys=True))
        _check("case-2 witness", ok, out, failures)
    elif key == "imposs-unfair-ladp":
        matching = expected["case1_stable_matching"]
        md = MatchingDistribution.from_parts(
            inst.doctors, inst.hospitals, [(Fraction(1), matching)]
        )
        verdict = check_weak_ex_ante(md, inst)
        _check("case-1 unique stable matching verified", verdict.stable, out, failures)
    elif key in ("imposs-metric-lahp", "imposs-unfair-lahp-alpha", "imposs-metric-lahp-alpha"):
        case2 = expected["case2"]
        matching = expected["case2_stable_matching"]
        md = MatchingDistribution.from_parts(
            case2.doctors, case2.hospitals, [(Fraction(1), matching)]
        )
        verdict = check_weak_ex_ante(md, case2)
        _check("case-2 stable matching verified", verdict.stable, out, failures)
    else:
        raise UsageError(f"no reproduction recipe for {key!r}")
    return failures


def _cmd_reproduce(args: argparse.Namespace) -> int:
    alpha = as_fraction(args.alpha) if args.alpha else None
    out: list[str] = [f"reproduce {args.key}"]
    failures = _reproduce(args.key, alpha, out)
    if args.json:
        print(
            json.dumps(
                {"key": args.key, "pass": not failures, "failures": failures},
                sort_keys=True,
            )
        )
    else:
        print("\n".join(out))
        print("result: " + ("MATCH" if not failures else "MISMATCH"))
    return 0 if not failures else 1


def _cmd_list(args: argparse.Namespace) -> int:
    for key in CATALOG_KEYS:
        print(key)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairmatch",
        description="Exact-rational fair and stable probabilistic matching",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="run a mechanism on an instance file")
    solve.add_argument(
        "--alg",
        required=True,
        choices=["gs", "sampled-gs", "hospitals-first", "doctors-first", "global"],
    )
    solve.add_argument("--tau", default=None, help="approximation parameter, e.g. 1/64")
    solve.add_argument("--proposing", default="doctors", choices=["doctors", "hospitals"])
    solve.add_argument("--input", required=True)
    solve.add_argument("--output", default=None)
    solve.add_argument("--trace", action="store_true")
    solve.add_argument("--json", action="store_true")
    solve.set_defaults(func=_cmd_solve)

    verify = sub.add_parser("verify", help="check a property of an allocation or instance")
    verify.add_argument(
        "--property",
        required=True,
        choices=sorted(
            _FAIRNESS_PROPS | _PREF_PROPS | {"contract", "tau-contract", "weak-ex-ante", "local"}
        ),
    )
    verify.add_argument("--input", required=True, help="instance JSON file")
    verify.add_argument("--allocation", default=None, help="allocation JSON file")
    verify.add_argument("--tau", default=None)
    verify.add_argument("--json", action="store_true")
    verify.set_defaults(func=_cmd_verify)

    decompose = sub.add_parser("decompose", help="Birkhoff-von-Neumann decomposition")
    decompose.add_argument("--matrix", required=True, help="JSON file with a square matrix")
    decompose.add_argument("--json", action="store_true")
    decompose.set_defaults(func=_cmd_decompose)

    reproduce = sub.add_parser("reproduce", help="re-run a catalog instance and diff")
    reproduce.add_argument("key")
    reproduce.add_argument("--alpha", default=None)
    reproduce.add_argument("--json", action="store_true")
    reproduce.set_defaults(func=_cmd_reproduce)

    lister = sub.add_parser("list", help="list catalog keys")
    lister.set_defaults(func=_cmd_list)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (UsageError, InstanceError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
