"""Stability oracles for probabilistic allocations.

Covers the full ladder: classical blocking pairs on deterministic matchings,
(tau-)contract stability on proto-metrics, weak ex-ante stability on general
metrics via an exact-rational LP search over alternative doctor lotteries,
set contracts (with a bounded heuristic search), and ex-post local stability
decided as a coupling-feasibility max-flow between the preference randomness
and the allocation.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations, product
from typing import Mapping, Sequence

from .core import (
    ZERO,
    ONE,
    Dominance,
    EnumerationLimitError,
    Instance,
    MatchingDistribution,
    Prospect,
    dominates_by_hospital,
    format_fraction,
    hospital_prefix_vector,
    max_enum,
    pref_support,
    rank_prefix,
)
from .simplex import OPTIMAL, max_flow, solve_lp

# ---------------------------------------------------------------------------
# Classical blocking pairs


def blocking_pairs(
    matching: Mapping[str, str],
    doctor_prefs: Mapping[str, Sequence[str]],
    hospital_orders: Mapping[str, Sequence[str]],
) -> list[tuple[str, str]]:
    """All (doctor, hospital) pairs who mutually prefer each other to their match."""
    partner = {h: d for d, h in matching.items()}
    pairs = []
    for d, order in doctor_prefs.items():
        current_rank = order.index(matching[d])
        for h in order[:current_rank]:
            h_order = hospital_orders[h]
            if h_order.index(d) < h_order.index(partner[h]):
                pairs.append((d, h))
    return sorted(pairs)


# ---------------------------------------------------------------------------
# Contract stability (proto-metric)


@dataclass(frozen=True)
class Contract:
    """A cross-cluster swap (h, i; h', i').

    Triggering event: h is matched to i' while i is matched to h'.  The
    contract swaps them on every such realization; it exists only when
    d(i, i') = 1, the doctor prefers h over h', and the hospital strictly
    prefers the swapped prospect.
    """

    hospital: str
    doctor: str
    other_hospital: str
    other_doctor: str

    def to_json(self) -> dict:
        return {
            "h": self.hospital,
            "i": self.doctor,
            "h_prime": self.other_hospital,
            "i_prime": self.other_doctor,
        }


def _contract_events(
    md: MatchingDistribution, inst: Instance
) -> dict[tuple[str, str, str, str], Fraction]:
    """Joint-event mass per tuple (h, i, h', i') satisfying the static conditions."""
    inst.proto()  # contract stability is defined for proto-metrics only
    rank = {d: {h: r for r, h in enumerate(inst.doctor_prefs[d])} for d in inst.doctors}
    events: dict[tuple[str, str, str, str], Fraction] = {}
    for weight, m in md.matchings():
        partner = {h: d for d, h in m.items()}
        for h in inst.hospitals:
            other_doctor = partner[h]
            for i in inst.doctors:
                if i == other_doctor or inst.distance(i, other_doctor) != 1:
                    continue
                other_hospital = m[i]
                if other_hospital == h or rank[i][h] >= rank[i][other_hospital]:
                    continue
                key = (h, i, other_hospital, other_doctor)
                events[key] = events.get(key, ZERO) + weight
    return events


def active_contracts(md: MatchingDistribution, inst: Instance) -> list[Contract]:
    """All contracts whose swap event has positive mass and helps the hospital."""
    events = _contract_events(md, inst)
    out = []
    d_idx = {d: k for k, d in enumerate(inst.doctors)}
    h_idx = {h: k for k, h in enumerate(inst.hospitals)}
    for (h, i, hp, ip), mass in sorted(
        events.items(),
        key=lambda kv: (h_idx[kv[0][0]], d_idx[kv[0][1]], h_idx[kv[0][2]], d_idx[kv[0][3]]),
    ):
        current = md.hospital_prospect(h)
        swapped_mass = dict(current.mass)
        swapped_mass[ip] = swapped_mass.get(ip, ZERO) - mass
        swapped_mass[i] = swapped_mass.get(i, ZERO) + mass
        swapped = Prospect("doctors", swapped_mass)
        if dominates_by_hospital(swapped, current, inst.hospital_prefs[h]) is Dominance.STRONG:
            out.append(Contract(h, i, hp, ip))
    return out


def contract_instability_mass(md: MatchingDistribution, inst: Instance) -> Fraction:
    """Exact probability that some active contract's swap event is realized."""
    active = active_contracts(md, inst)
    if not active:
        return ZERO
    total = ZERO
    for weight, m in md.matchings():
        partner = {h: d for d, h in m.items()}
        for c in active:
            if partner[c.hospital] == c.other_doctor and m[c.doctor] == c.other_hospital:
                total += weight
                break
    return total


# ---------------------------------------------------------------------------
# Weak ex-ante stability (general metrics)


@dataclass(frozen=True)
class AlternativeAllocation:
    """A selectively fair alternative lottery nu = (hospital, doctor set, sigma)."""

    hospital: str
    doctor_set: tuple[str, ...]
    lottery: Prospect

    def to_json(self) -> dict:
        return {
            "h": self.hospital,
            "doctors": list(self.doctor_set),
            "sigma": {d: format_fraction(m) for d, m in sorted(self.lottery.mass.items())},
        }


@dataclass(frozen=True)
class StabilityVerdict:
    stable: bool
    witness: AlternativeAllocation | None = None

    def to_json(self, prop: str) -> dict:
        out: dict = {"property": prop, "pass": self.stable}
        if self.witness is not None:
            out["witness"] = self.witness.to_json()
        return out


def _weakly_prefers_h_to_support(inst: Instance, doctor: str, h: str, prospect: Prospect) -> bool:
    return all(hp == h or inst.prefers(doctor, h, hp) for hp in prospect.support)


def _strictly_prefers_support_to_h(inst: Instance, doctor: str, h: str, prospect: Prospect) -> bool:
    return all(hp != h and inst.prefers(doctor, hp, h) for hp in prospect.support)


def _dominating_lottery(
    inst: Instance, h: str, members: Sequence[str], baseline: Sequence[Fraction]
) -> Prospect | None:
    """Best selectively fair sigma over the members, or None.

    Exact LP: sigma on the simplex, |sigma(a) - sigma(b)| <= d(a, b) per
    pair, and every hospital-side prefix at least the baseline.  Strict
    inequalities are not LP-expressible, so total prefix mass is maximized;
    the optimum exceeds the baseline total iff some prefix is strict, i.e.
    iff a strongly dominating fair lottery exists.
    """
    n = inst.n
    prefs = inst.hospital_prefs[h]
    rp = {d: [rank_prefix(prefs, d, k) for k in range(1, n + 1)] for d in members}
    nv = len(members)
    a_ub: list[list[Fraction]] = []
    b_ub: list[Fraction] = []
    for x, y in combinations(range(nv), 2):
        bound = inst.distance(members[x], members[y])
        if bound >= 1:
            continue
        row = [ZERO] * nv
        row[x], row[y] = ONE, -ONE
        a_ub.append(row)
        b_ub.append(bound)
        a_ub.append([-v for v in row])
        b_ub.append(bound)
    for k in range(n):
        a_ub.append([-rp[d][k] for d in members])
        b_ub.append(-baseline[k])
    objective = [sum(rp[d], ZERO) for d in members]
    result = solve_lp(objective, a_ub, b_ub, a_eq=[[ONE] * nv], b_eq=[ONE])
    if result.status != OPTIMAL:
        return None
    if result.objective <= sum(baseline, ZERO):
        return None
    return Prospect("doctors", dict(zip(members, result.solution)))


def check_weak_ex_ante(md: MatchingDistribution, inst: Instance) -> StabilityVerdict:
    """Search for an active selectively fair alternative allocation.

    For each hospital, candidate doctor sets are the subsets of doctors who
    weakly prefer the hospital to their entire prospect support, filtered by
    the outside-doctor condition, in size-then-index order; per set the
    lottery is an exact LP feasibility problem.  The first active
    alternative found is returned as the witness.
    """
    if 2 ** inst.n > max_enum():
        raise EnumerationLimitError(
            f"weak ex-ante search over {inst.n} doctors exceeds the enumeration budget"
        )
    prospects = {d: md.doctor_prospect(d) for d in inst.doctors}
    d_idx = {d: k for k, d in enumerate(inst.doctors)}
    for h in inst.hospitals:
        baseline = hospital_prefix_vector(md.hospital_prospect(h), inst.hospital_prefs[h])
        eligible = [
            d for d in inst.doctors if _weakly_prefers_h_to_support(inst, d, h, prospects[d])
        ]
        subsets: list[tuple[str, ...]] = []
        for size in range(1, len(eligible) + 1):
            subsets.extend(combinations(eligible, size))
        for members in subsets:
            chosen = set(members)
            ok = True
            for outsider in inst.doctors:
                if outsider in chosen:
                    continue
                if all(inst.distance(outsider, d) >= 1 for d in members):
                    continue
                if not _strictly_prefers_support_to_h(inst, outsider, h, prospects[outsider]):
                    ok = False
                    break
            if not ok:
                continue
            sigma = _dominating_lottery(inst, h, members, baseline)
            if sigma is not None:
                return StabilityVerdict(False, AlternativeAllocation(h, members, sigma))
    return StabilityVerdict(True, None)


@dataclass(frozen=True)
class TauWeakVerdict:
    status: str  # "PASS" or "UNKNOWN"
    witness: AlternativeAllocation | None = None

    def to_json(self, prop: str) -> dict:
        out: dict = {"property": prop, "status": self.status, "pass": self.status == "PASS"}
        if self.witness is not None:
            out["witness"] = self.witness.to_json()
        return out


def tau_weak_ex_ante(md: MatchingDistribution, inst: Instance, tau: Fraction) -> TauWeakVerdict:
    """Verification-grade tau relaxation: PASS when exactly stable, else UNKNOWN.

    A weakly stable allocation within TV distance tau may still exist when
    the exact check fails; deciding the tau-ball is out of scope, so the
    failing witness is reported with an UNKNOWN status instead of FAIL.
    """
    verdict = check_weak_ex_ante(md, inst)
    if verdict.stable:
        return TauWeakVerdict("PASS", None)
    return TauWeakVerdict("UNKNOWN", verdict.witness)


def blocking_allocation_exists(
    md: MatchingDistribution, inst: Instance, h: str, sigma: Prospect
) -> bool:
    """Does (h, sigma) block: sigma strongly beats pi(h) and every doctor in
    supp(sigma) weakly prefers h to everything in its own support?"""
    for d in sigma.support:
        if not _weakly_prefers_h_to_support(inst, d, h, md.doctor_prospect(d)):
            return False
    return (
        dominates_by_hospital(sigma, md.hospital_prospect(h), inst.hospital_prefs[h])
        is Dominance.STRONG
    )


# ---------------------------------------------------------------------------
# Set contracts (general metrics)


@dataclass(frozen=True)
class SetContract:
    """mu = (hospital, replaced doctor set D', activation probability a, lottery sigma)."""

    hospital: str
    replaced: tuple[str, ...]
    activation: Fraction
    lottery: Prospect

    def to_json(self) -> dict:
        return {
            "h": self.hospital,
            "replaced": list(self.replaced),
            "a": format_fraction(self.activation),
            "sigma": {d: format_fraction(m) for d, m in sorted(self.lottery.mass.items())},
        }


@dataclass(frozen=True)
class SetContractResult:
    status: str  # "active" | "inactive" | "not-a-contract"
    reason: str | None = None
    resampled: MatchingDistribution | None = None


def apply_set_contract(
    md: MatchingDistribution, inst: Instance, mu: SetContract
) -> MatchingDistribution:
    """Expand the resample-and-propose process into an exact distribution.

    On every realization matching the hospital to a doctor in D': with
    probability 1-a nothing happens; with probability a * sigma(x) the
    hospital proposes to x, who accepts iff it strictly prefers the hospital
    to its realized match, in which case the two swap partners.
    """
    a = mu.activation
    parts: list[tuple[Fraction, Mapping[str, str]]] = []
    replaced = set(mu.replaced)
    for weight, m in md.matchings():
        partner = next(d for d, hh in m.items() if hh == mu.hospital)
        if partner not in replaced or a == 0:
            parts.append((weight, m))
            continue
        if a < 1:
            parts.append((weight * (1 - a), m))
        declined = ZERO
        for x, p in mu.lottery.mass.items():
            if inst.prefers(x, mu.hospital, m[x]):
                swapped = dict(m)
                swapped[x] = mu.hospital
                swapped[partner] = m[x]
                parts.append((weight * a * p, swapped))
            else:
                declined += p
        if declined > 0:
            parts.append((weight * a * declined, m))
    return MatchingDistribution.from_parts(md.doctors, md.hospitals, parts)


def check_set_contract(
    md: MatchingDistribution, inst: Instance, mu: SetContract
) -> SetContractResult:
    """Validate the structural conditions of a set contract, then test activity."""
    from .fairness import piif_deficit  # local import avoids a cycle

    replaced = set(mu.replaced)
    if not replaced <= set(inst.doctors):
        return SetContractResult("not-a-contract", "replaced set contains unknown doctors")
    if not (0 <= mu.activation <= 1):
        return SetContractResult("not-a-contract", "activation probability outside [0, 1]")
    if set(mu.lottery.mass) & replaced:
        return SetContractResult("not-a-contract", "lottery support intersects the replaced set")
    if mu.lottery.total != 1:
        return SetContractResult("not-a-contract", "lottery mass does not sum to 1")
    supp = mu.lottery.support
    for x, y in combinations(supp, 2):
        if abs(mu.lottery.get(x) - mu.lottery.get(y)) > inst.distance(x, y):
            return SetContractResult(
                "not-a-contract", f"lottery is not individually fair on ({x}, {y})"
            )
    resampled = apply_set_contract(md, inst, mu)
    matrix = resampled.marginals()
    outside = [d for d in inst.doctors if d not in replaced]
    for i in outside:
        for j in sorted(replaced, key=inst.doctors.index):
            bound = inst.distance(i, j)
            if piif_deficit(matrix, i, j, inst.doctor_prefs[i]) > bound:
                return SetContractResult(
                    "not-a-contract", f"resampled allocation violates PIIF for ({i}, {j})"
                )
            if piif_deficit(matrix, j, i, inst.doctor_prefs[j]) > bound:
                return SetContractResult(
                    "not-a-contract", f"resampled allocation violates PIIF for ({j}, {i})"
                )
    verdict = dominates_by_hospital(
        resampled.hospital_prospect(mu.hospital),
        md.hospital_prospect(mu.hospital),
        inst.hospital_prefs[mu.hospital],
    )
    if verdict is Dominance.STRONG:
        return SetContractResult("active", None, resampled)
    return SetContractResult("inactive", None, resampled)


DEFAULT_ACTIVATION_GRID = (Fraction(1, 4), Fraction(1, 2), Fraction(3, 4), Fraction(1))


def set_contract_search(
    md: MatchingDistribution,
    inst: Instance,
    grid: Sequence[Fraction] = DEFAULT_ACTIVATION_GRID,
) -> list[SetContract]:
    """Bounded search for active set contracts.

    Enumerates replaced sets D' and activation values on the grid; per
    (h, D', a) the lottery is found by an LP that maximizes the hospital's
    total prefix mass subject to all-pairs individual fairness of sigma,
    cross-pair PIIF of the resampled marginals, and weak domination.  Every
    LP hit is revalidated by check_set_contract under the exact
    support-based rules.  Completeness over continuous (a, sigma) is not
    claimed.
    """
    if 2 ** inst.n > max_enum():
        raise EnumerationLimitError("set-contract search exceeds the enumeration budget")
    found: list[SetContract] = []
    for h in inst.hospitals:
        pi_h = md.hospital_prospect(h)
        for size in range(1, inst.n):
            for replaced in combinations(inst.doctors, size):
                if all(pi_h.get(d) == 0 for d in replaced):
                    continue  # resampling never triggers
                outside = [d for d in inst.doctors if d not in replaced]
                for a in grid:
                    sigma = _set_contract_lottery(md, inst, h, replaced, outside, a)
                    if sigma is None:
                        continue
                    mu = SetContract(h, replaced, a, sigma)
                    if check_set_contract(md, inst, mu).status == "active":
                        found.append(mu)
    return found


def _set_contract_lottery(
    md: MatchingDistribution,
    inst: Instance,
    h: str,
    replaced: Sequence[str],
    outside: Sequence[str],
    a: Fraction,
) -> Prospect | None:
    """LP over sigma for a fixed (h, D', a); None when nothing dominates."""
    n = inst.n
    nv = len(outside)
    var = {d: k for k, d in enumerate(outside)}

    # Affine representation of every marginal prospect of the resampled
    # allocation: value(outcome) = const(outcome) + sum_x sigma_x * coef[x][outcome].
    def affine() -> tuple[dict, dict, dict]:
        hosp_const: dict[str, Fraction] = {}
        hosp_coef: dict[str, dict[str, Fraction]] = {x: {} for x in outside}
        doc_const: dict[str, dict[str, Fraction]] = {d: {} for d in inst.doctors}
        doc_coef: dict[str, dict[str, dict[str, Fraction]]] = {
            d: {x: {} for x in outside} for d in inst.doctors
        }

        def bump(table: dict, key: str, amount: Fraction) -> None:
            table[key] = table.get(key, ZERO) + amount

        for weight, m in md.matchings():
            partner = next(d for d, hh in m.items() if hh == h)
            triggers = partner in replaced
            for d in inst.doctors:
                bump(doc_const[d], m[d], weight)
            if not triggers:
                bump(hosp_const, partner, weight)
                continue
            bump(hosp_const, partner, weight * (1 - a))
            for x in outside:
                if inst.prefers(x, h, m[x]):
                    bump(hosp_coef[x], x, weight * a)
                    # x moves to h; the displaced partner takes x's hospital
                    bump(doc_coef[x][x], h, weight * a)
                    bump(doc_coef[x][x], m[x], -weight * a)
                    bump(doc_coef[partner][x], m[x], weight * a)
                    bump(doc_coef[partner][x], h, -weight * a)
                else:
                    bump(hosp_coef[x], partner, weight * a)
        return hosp_const, hosp_coef, (doc_const, doc_coef)

    hosp_const, hosp_coef, (doc_const, doc_coef) = affine()
    prefs = inst.hospital_prefs[h]
    rp = {d: [rank_prefix(prefs, d, k) for k in range(1, n + 1)] for d in inst.doctors}

    a_ub: list[list[Fraction]] = []
    b_ub: list[Fraction] = []
    for x, y in combinations(outside, 2):
        bound = inst.distance(x, y)
        if bound >= 1:
            continue
        row = [ZERO] * nv
        row[var[x]], row[var[y]] = ONE, -ONE
        a_ub.append(row)
        b_ub.append(bound)
        a_ub.append([-v for v in row])
        b_ub.append(bound)

    # Hospital-side prefix domination over the current prospect.
    base_prefix = hospital_prefix_vector(md.hospital_prospect(h), prefs)
    hosp_prefix_const = []
    hosp_prefix_coef: list[list[Fraction]] = []
    for k in range(n):
        const = sum((mass * rp[d][k] for d, mass in hosp_const.items()), ZERO)
        coefs = [
            sum((mass * rp[d][k] for d, mass in hosp_coef[x].items()), ZERO) for x in outside
        ]
        hosp_prefix_const.append(const)
        hosp_prefix_coef.append(coefs)
        a_ub.append([-c for c in coefs])
        b_ub.append(const - base_prefix[k])

    # Cross-pair PIIF of the resampled marginals, both directions.
    def doctor_prefix(d: str, ranking: Sequence[str]) -> list[tuple[Fraction, list[Fraction]]]:
        rows = []
        const_acc = ZERO
        coef_acc = [ZERO] * nv
        for hh in ranking:
            const_acc += doc_const[d].get(hh, ZERO)
            for x in outside:
                coef_acc[var[x]] += doc_coef[d][x].get(hh, ZERO)
            rows.append((const_acc, list(coef_acc)))
        return rows

    for i in outside:
        for j in replaced:
            bound = inst.distance(i, j)
            if bound >= 1:
                continue
            for viewer, other in ((i, j), (j, i)):
                ranking = inst.doctor_prefs[viewer]
                pv = doctor_prefix(viewer, ranking)
                po = doctor_prefix(other, ranking)
                for k in range(n):
                    row = [pc - vc for pc, vc in zip(po[k][1], pv[k][1])]
                    a_ub.append(row)
                    b_ub.append(bound - (po[k][0] - pv[k][0]))

    objective = [sum((hosp_prefix_coef[k][var[x]] for k in range(n)), ZERO) for x in outside]
    result = solve_lp(objective, a_ub, b_ub, a_eq=[[ONE] * nv], b_eq=[ONE])
    if result.status != OPTIMAL:
        return None
    achieved = sum(hosp_prefix_const, ZERO) + result.objective
    if achieved <= sum(base_prefix, ZERO):
        return None
    return Prospect("doctors", dict(zip(outside, result.solution)))


# ---------------------------------------------------------------------------
# Local (ex-post) stability


@dataclass(frozen=True)
class LocalStabilityVerdict:
    passed: bool


def _has_blocking_pair(
    matching: Mapping[str, str],
    doctor_prefs: Mapping[str, Sequence[str]],
    profile: Mapping[str, Sequence[str]],
) -> bool:
    partner = {h: d for d, h in matching.items()}
    for d, order in doctor_prefs.items():
        current = order.index(matching[d])
        for h in order[:current]:
            h_order = profile[h]
            if h_order.index(d) < h_order.index(partner[h]):
                return True
    return False


def check_local_stability(md: MatchingDistribution, inst: Instance) -> LocalStabilityVerdict:
    """Coupling feasibility between preference profiles and matchings.

    Hospitals draw their orders independently; the allocation is locally
    stable iff some joint law with those two marginals is supported on
    (profile, matching) cells without blocking pairs.  Decided exactly as a
    max-flow saturation problem on the profile/matching bipartite graph.
    """
    limit = max_enum()
    supports = {h: pref_support(inst.hospital_prefs[h], limit) for h in inst.hospitals}
    count = 1
    for rows in supports.values():
        count *= len(rows)
        if count > limit:
            raise EnumerationLimitError(
                f"profile space exceeds the enumeration budget ({limit})"
            )
    matchings = md.matchings()
    # Profiles with the same compatibility row merge into one flow node.
    groups: dict[frozenset[int], Fraction] = {}
    for combo in product(*(supports[h] for h in inst.hospitals)):
        profile = {h: order for h, (order, _) in zip(inst.hospitals, combo)}
        weight = ONE
        for _, w in combo:
            weight *= w
        allowed = frozenset(
            idx
            for idx, (_, m) in enumerate(matchings)
            if not _has_blocking_pair(m, inst.doctor_prefs, profile)
        )
        groups[allowed] = groups.get(allowed, ZERO) + weight
    group_list = sorted(groups.items(), key=lambda kv: sorted(kv[0]))
    source = 0
    sink = 1
    n_groups = len(group_list)
    edges: list[tuple[int, int, Fraction]] = []
    for gi, (allowed, weight) in enumerate(group_list):
        node = 2 + gi
        edges.append((source, node, weight))
        for mi in allowed:
            edges.append((node, 2 + n_groups + mi, Fraction(2)))
    for mi, (weight, _) in enumerate(matchings):
        edges.append((2 + n_groups + mi, sink, weight))
    flow = max_flow(2 + n_groups + len(matchings), source, sink, edges)
    return LocalStabilityVerdict(flow == 1)
