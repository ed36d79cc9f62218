"""Constructive mechanisms: deferred acceptance and its fair generalizations.

All mechanisms run on exact rationals and are deterministic: "arbitrary"
choices resolve lowest-index-first, simultaneous proposals are collected
first and answered in index order, and the Birkhoff-von-Neumann step picks
the lexicographically smallest perfect matching at every extraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import permutations, product
from typing import Mapping, Sequence

from .core import (
    ZERO,
    ONE,
    AllocationMatrix,
    EnumerationLimitError,
    HospitalPrefModel,
    Instance,
    MatchingDistribution,
    ProtoMetric,
    Prospect,
    StrictIFPrefs,
    max_enum,
    pref_support,
    rank_distribution,
)
from .stability import blocking_allocation_exists


# ---------------------------------------------------------------------------
# Round traces


@dataclass(frozen=True)
class RoundRecord:
    index: int
    proposals: tuple[tuple[str, str, Fraction], ...]  # (proposer, target, mass)
    rejections: tuple[tuple[str, str, Fraction], ...]  # (mass owner, rejecter, mass)
    free_after: Fraction
    matrix: AllocationMatrix


@dataclass
class RoundTrace:
    rounds: list[RoundRecord] = field(default_factory=list)

    @property
    def free_mass(self) -> list[Fraction]:
        return [r.free_after for r in self.rounds]

    def __len__(self) -> int:
        return len(self.rounds)


# ---------------------------------------------------------------------------
# Gale-Shapley on deterministic preferences


def gale_shapley(
    doctor_prefs: Mapping[str, Sequence[str]],
    hospital_orders: Mapping[str, Sequence[str]],
    proposing_side: str = "doctors",
) -> dict[str, str]:
    """Deferred acceptance; returns the matching as doctor -> hospital.

    The lowest-index unmatched proposer moves at every step, so the run is
    deterministic (the outcome is proposer-optimal and independent of that
    choice anyway).
    """
    doctors = list(doctor_prefs)
    hospitals = list(hospital_orders)
    if proposing_side == "doctors":
        proposers, accepters = doctors, hospitals
        prop_prefs = {d: list(doctor_prefs[d]) for d in doctors}
        acc_rank = {h: {d: r for r, d in enumerate(hospital_orders[h])} for h in hospitals}
    elif proposing_side == "hospitals":
        proposers, accepters = hospitals, doctors
        prop_prefs = {h: list(hospital_orders[h]) for h in hospitals}
        acc_rank = {d: {h: r for r, h in enumerate(doctor_prefs[d])} for d in doctors}
    else:
        raise ValueError(f"unknown proposing side {proposing_side!r}")

    match_p: dict[str, str] = {}
    match_a: dict[str, str] = {}
    pointer = {p: 0 for p in proposers}
    while True:
        unmatched = [p for p in proposers if p not in match_p]
        if not unmatched:
            break
        p = unmatched[0]
        target = prop_prefs[p][pointer[p]]
        holder = match_a.get(target)
        if holder is None:
            match_a[target] = p
            match_p[p] = target
        elif acc_rank[target][p] < acc_rank[target][holder]:
            del match_p[holder]
            pointer[holder] += 1
            match_a[target] = p
            match_p[p] = target
        else:
            pointer[p] += 1
    if proposing_side == "doctors":
        return dict(match_p)
    return {d: h for h, d in match_p.items()}


def compose_sample_gs(
    inst: Instance, proposing_side: str = "doctors", limit: int | None = None
) -> MatchingDistribution:
    """Exact output law of sampling hospital preferences and running GS.

    Enumerates the product support of the hospitals' preference
    distributions rather than sampling, so the returned weights are exact.
    """
    if limit is None:
        limit = max_enum()
    supports = {h: pref_support(inst.hospital_prefs[h], limit) for h in inst.hospitals}
    count = 1
    for rows in supports.values():
        count *= len(rows)
        if count > limit:
            raise EnumerationLimitError(f"profile space exceeds the enumeration budget ({limit})")
    parts = []
    for combo in product(*(supports[h] for h in inst.hospitals)):
        orders = {h: order for h, (order, _) in zip(inst.hospitals, combo)}
        weight = ONE
        for _, w in combo:
            weight *= w
        parts.append((weight, gale_shapley(inst.doctor_prefs, orders, proposing_side)))
    return MatchingDistribution.from_parts(inst.doctors, inst.hospitals, parts)


# ---------------------------------------------------------------------------
# Allocation subroutines


def psp(
    doctors: Sequence[str],
    proposed: Mapping[str, Fraction],
    doctor_prefs: Mapping[str, Sequence[str]],
) -> dict[str, Prospect]:
    """Probabilistic serial ("eating") procedure, event-driven and exact.

    Every doctor simultaneously eats its most-preferred hospital with
    positive remaining mass at unit speed; time advances between exhaustion
    breakpoints, which are rational, until t = 1 or nothing is left.
    """
    remaining = {h: Fraction(m) for h, m in proposed.items() if m > 0}
    eaten: dict[str, dict[str, Fraction]] = {d: {} for d in doctors}
    t = ZERO
    while t < 1 and remaining:
        targets: dict[str, str] = {}
        for d in doctors:
            for h in doctor_prefs[d]:
                if remaining.get(h, ZERO) > 0:
                    targets[d] = h
                    break
        if not targets:
            break
        eaters: dict[str, int] = {}
        for h in targets.values():
            eaters[h] = eaters.get(h, 0) + 1
        dt = ONE - t
        for h, k in eaters.items():
            dt = min(dt, Fraction(remaining[h], k))
        for d, h in targets.items():
            eaten[d][h] = eaten[d].get(h, ZERO) + dt
        for h, k in eaters.items():
            remaining[h] -= dt * k
            if remaining[h] == 0:
                del remaining[h]
        t += dt
    return {d: Prospect("hospitals", eaten[d]) for d in doctors}


def rising_tide(
    proposed: Mapping[str, Fraction],
    cluster_order: Sequence[Sequence[str]],
    budget: Fraction = ONE,
) -> Prospect:
    """Water-filling of one hospital's budget over proposed doctor masses.

    Clusters are served best-first; within the active cluster every doctor
    with leftover proposal receives min(budget/n_C, smallest leftover), so a
    doctor ends up below a cluster-mate only when it proposed less.
    """
    left = {d: Fraction(m) for d, m in proposed.items() if m > 0}
    out: dict[str, Fraction] = {}
    p = Fraction(budget)
    while p > 0 and left:
        cluster = next(
            [d for d in c if d in left] for c in cluster_order if any(d in left for d in c)
        )
        share = min(Fraction(p, len(cluster)), min(left[d] for d in cluster))
        for d in cluster:
            left[d] -= share
            out[d] = out.get(d, ZERO) + share
            if left[d] == 0:
                del left[d]
        p -= share * len(cluster)
    return Prospect("doctors", out)


def allocate_free_mass(
    doctors: Sequence[str],
    hospitals: Sequence[str],
    entries: Mapping[tuple[str, str], Fraction],
) -> AllocationMatrix:
    """Greedy doctor-major, hospital-minor fill to a complete matrix."""
    grid = {
        (d, h): Fraction(entries.get((d, h), ZERO)) for d in doctors for h in hospitals
    }
    col_load = {h: sum((grid[(d, h)] for d in doctors), ZERO) for h in hospitals}
    for d in doctors:
        residual = ONE - sum((grid[(d, h)] for h in hospitals), ZERO)
        if residual < 0:
            raise ValueError(f"row sum exceeds 1 for {d}")
        for h in hospitals:
            if residual == 0:
                break
            take = min(residual, ONE - col_load[h])
            if take > 0:
                grid[(d, h)] += take
                col_load[h] += take
                residual -= take
        if residual != 0:
            raise ValueError("free mass does not fit; input was not sub-doubly-stochastic")
    rows = tuple(tuple(grid[(d, h)] for h in hospitals) for d in doctors)
    return AllocationMatrix(tuple(doctors), tuple(hospitals), rows)


# ---------------------------------------------------------------------------
# Birkhoff-von-Neumann decomposition


def _kuhn_matching(adj: Sequence[Sequence[int]], n: int) -> list[int] | None:
    """Perfect matching on a bipartite support graph, or None."""
    match_col = [-1] * n

    def augment(row: int, seen: list[bool]) -> bool:
        for col in adj[row]:
            if not seen[col]:
                seen[col] = True
                if match_col[col] < 0 or augment(match_col[col], seen):
                    match_col[col] = row
                    return True
        return False

    for row in range(n):
        if not augment(row, [False] * n):
            return None
    out = [-1] * n
    for col, row in enumerate(match_col):
        out[row] = col
    return out


def _lex_perfect_matching(rows: list[list[Fraction]]) -> list[int]:
    """Lexicographically smallest perfect matching on the positive support."""
    n = len(rows)
    chosen: list[int] = []
    used: set[int] = set()
    for i in range(n):
        for j in range(n):
            if j in used or rows[i][j] <= 0:
                continue
            rest = list(range(i + 1, n))
            free = [c for c in range(n) if c not in used and c != j]
            col_index = {c: k for k, c in enumerate(free)}
            adj = [
                [col_index[c] for c in free if rows[r][c] > 0] for r in rest
            ]
            if _kuhn_matching(adj, len(rest)) is not None:
                chosen.append(j)
                used.add(j)
                break
        else:
            raise ValueError("support has no perfect matching; matrix is not doubly stochastic")
    return chosen


def _nullspace_vector(columns: list[list[Fraction]]) -> list[Fraction] | None:
    """One nonzero solution of [columns] x = 0, by exact Gaussian elimination."""
    m = len(columns)
    if m == 0:
        return None
    height = len(columns[0])
    rows = [[columns[j][i] for j in range(m)] for i in range(height)]
    pivots: list[tuple[int, int]] = []
    r = 0
    for c in range(m):
        pivot_row = next((i for i in range(r, height) if rows[i][c] != 0), None)
        if pivot_row is None:
            continue
        rows[r], rows[pivot_row] = rows[pivot_row], rows[r]
        inv = rows[r][c]
        rows[r] = [v / inv for v in rows[r]]
        for i in range(height):
            if i != r and rows[i][c] != 0:
                f = rows[i][c]
                rows[i] = [v - f * p for v, p in zip(rows[i], rows[r])]
        pivots.append((r, c))
        r += 1
        if r == height:
            break
    pivot_cols = {c for _, c in pivots}
    free = next((c for c in range(m) if c not in pivot_cols), None)
    if free is None:
        return None
    x = [ZERO] * m
    x[free] = ONE
    for row, col in pivots:
        x[col] = -rows[row][free]
    return x


def _caratheodory_reduce(
    parts: list[tuple[Fraction, list[int]]], n: int
) -> list[tuple[Fraction, list[int]]]:
    """Shrink a convex combination of permutations to <= (n-1)^2 + 1 parts.

    Permutation matrices live in an affine space of dimension (n-1)^2, so
    any longer combination is affinely dependent; moving along a dependency
    direction zeroes out a weight without changing the combination.
    """
    bound = (n - 1) ** 2 + 1
    parts = list(parts)
    while len(parts) > bound:
        columns = []
        for _, perm in parts:
            vec = [ZERO] * (n * n)
            for i, j in enumerate(perm):
                vec[i * n + j] = ONE
            vec.append(ONE)  # affine combination constraint
            columns.append(vec)
        direction = _nullspace_vector(columns)
        if direction is None:
            break
        if all(c <= 0 for c in direction):
            direction = [-c for c in direction]
        step = min(
            Fraction(w, c) for (w, _), c in zip(parts, direction) if c > 0
        )
        parts = [
            (w - step * c, perm)
            for (w, perm), c in zip(parts, direction)
            if w - step * c != 0
        ]
    return parts


def bvn_decompose(matrix: AllocationMatrix) -> MatchingDistribution:
    """Express a doubly stochastic matrix as a lottery over matchings.

    Greedy extraction (lexicographic matching, weight = its minimum entry),
    followed by an exact Caratheodory reduction whenever the greedy count
    exceeds the (n-1)^2 + 1 bound.  Recomposition is exact by construction.
    """
    if not matrix.is_complete():
        raise ValueError("matrix is not doubly stochastic")
    n = len(matrix.doctors)
    work = [list(row) for row in matrix.rows]
    parts: list[tuple[Fraction, list[int]]] = []
    while any(v > 0 for row in work for v in row):
        perm = _lex_perfect_matching(work)
        weight = min(work[i][perm[i]] for i in range(n))
        parts.append((weight, perm))
        for i in range(n):
            work[i][perm[i]] -= weight
    parts = _caratheodory_reduce(parts, n)
    return MatchingDistribution.from_parts(
        matrix.doctors,
        matrix.hospitals,
        (
            (w, {matrix.doctors[i]: matrix.hospitals[j] for i, j in enumerate(perm)})
            for w, perm in parts
        ),
    )


# ---------------------------------------------------------------------------
# Fair propose-and-reject, hospitals first


def _strict_if_cluster_order(inst: Instance, h: str) -> list[tuple[str, ...]]:
    prefs = inst.hospital_prefs[h]
    if not isinstance(prefs, StrictIFPrefs):
        raise ValueError(f"hospital {h} does not have cluster-indifferent preferences")
    return list(prefs.cluster_order)


def _snapshot(inst: Instance, grid: Mapping[tuple[str, str], Fraction]) -> AllocationMatrix:
    rows = tuple(
        tuple(grid.get((d, h), ZERO) for h in inst.hospitals) for d in inst.doctors
    )
    return AllocationMatrix(inst.doctors, inst.hospitals, rows)


def hospitals_first(
    inst: Instance, tau: Fraction, max_rounds: int | None = None
) -> tuple[MatchingDistribution, RoundTrace]:
    """Hospitals propose free mass to clusters; clusters eat via the serial procedure.

    Rejected mass returns to the hospital and strikes the cluster from its
    list.  The loop runs while total free mass exceeds tau; the residual is
    then spread uniformly inside under-full clusters (lowest index first),
    the matrix is completed to doubly stochastic, and decomposed.
    """
    tau = Fraction(tau)
    if tau <= 0 and max_rounds is None:
        raise ValueError("tau must be positive (the loop need not converge at tau = 0)")
    proto = inst.proto()
    clusters = list(proto.clusters)
    free = {h: ONE for h in inst.hospitals}
    lists = {h: _strict_if_cluster_order(inst, h) for h in inst.hospitals}
    held: dict[tuple[str, ...], dict[str, Fraction]] = {c: {} for c in clusters}
    grid: dict[tuple[str, str], Fraction] = {}
    trace = RoundTrace()
    round_cap = max_rounds
    if round_cap is None:
        # Termination bound; exceeding it means the implementation is wrong.
        round_cap = int(inst.n * len(clusters) / tau) + 2

    k = 0
    while sum(free.values(), ZERO) > tau and k < round_cap:
        k += 1
        proposals = []
        for h in inst.hospitals:
            if free[h] > 0:
                cluster = lists[h][0]
                held[cluster][h] = held[cluster].get(h, ZERO) + free[h]
                proposals.append((h, "+".join(cluster), free[h]))
                free[h] = ZERO
        rejections = []
        for cluster in clusters:
            plate = held[cluster]
            if not plate:
                continue
            prospects = psp(cluster, plate, inst.doctor_prefs)
            for d in cluster:
                for h in inst.hospitals:
                    grid[(d, h)] = prospects[d].get(h)
            for h in list(plate):
                eaten_total = sum((prospects[d].get(h) for d in cluster), ZERO)
                leftover = plate[h] - eaten_total
                if leftover > 0:
                    free[h] += leftover
                    plate[h] = eaten_total
                    if cluster in lists[h]:
                        lists[h].remove(cluster)
                    rejections.append((h, "+".join(cluster), leftover))
                if plate[h] == 0:
                    del plate[h]
        trace.rounds.append(
            RoundRecord(
                k,
                tuple(proposals),
                tuple(rejections),
                sum(free.values(), ZERO),
                _snapshot(inst, grid),
            )
        )
    if max_rounds is None and sum(free.values(), ZERO) > tau:
        raise RuntimeError("propose-and-reject loop exceeded its termination bound")

    # Spread the residual uniformly inside under-full clusters.
    for h in inst.hospitals:
        while free[h] > 0:
            cluster = next(
                c for c in clusters if sum(held[c].values(), ZERO) < len(c)
            )
            room = len(cluster) - sum(held[cluster].values(), ZERO)
            take = min(free[h], room)
            free[h] -= take
            held[cluster][h] = held[cluster].get(h, ZERO) + take
            share = Fraction(take, len(cluster))
            for d in cluster:
                grid[(d, h)] = grid.get((d, h), ZERO) + share
    matrix = _snapshot(inst, grid)
    if max_rounds is None and not matrix.is_complete():
        raise RuntimeError("final matrix is not doubly stochastic")
    if matrix.is_complete():
        return bvn_decompose(matrix), trace
    # Round-capped diagnostic runs may stop mid-way; complete greedily.
    completed = allocate_free_mass(inst.doctors, inst.hospitals, grid)
    return bvn_decompose(completed), trace


# ---------------------------------------------------------------------------
# Fair propose-and-reject, doctors first


def doctors_first(
    inst: Instance, tau: Fraction, max_rounds: int | None = None
) -> tuple[MatchingDistribution, RoundTrace]:
    """Doctors propose free mass; hospitals respond with the rising tide.

    Rejected mass returns to the doctor and strikes the hospital from its
    list.  After the loop the residual is filled greedily to a doubly
    stochastic matrix and decomposed.
    """
    tau = Fraction(tau)
    if tau <= 0 and max_rounds is None:
        raise ValueError("tau must be positive (the loop need not converge at tau = 0)")
    cluster_orders = {h: _strict_if_cluster_order(inst, h) for h in inst.hospitals}
    free = {d: ONE for d in inst.doctors}
    lists = {d: list(inst.doctor_prefs[d]) for d in inst.doctors}
    held: dict[str, dict[str, Fraction]] = {h: {} for h in inst.hospitals}
    grid: dict[tuple[str, str], Fraction] = {}
    trace = RoundTrace()
    round_cap = max_rounds
    if round_cap is None:
        round_cap = int(inst.n * inst.n / tau) + 2

    k = 0
    while sum(free.values(), ZERO) > tau and k < round_cap:
        k += 1
        proposals = []
        for d in inst.doctors:
            if free[d] > 0:
                h = lists[d][0]
                held[h][d] = held[h].get(d, ZERO) + free[d]
                proposals.append((d, h, free[d]))
                free[d] = ZERO
        rejections = []
        for h in inst.hospitals:
            plate = held[h]
            if not plate:
                continue
            chosen = rising_tide(plate, cluster_orders[h])
            for d in inst.doctors:
                grid[(d, h)] = chosen.get(d)
            for d in list(plate):
                leftover = plate[d] - chosen.get(d)
                if leftover > 0:
                    free[d] += leftover
                    plate[d] = chosen.get(d)
                    if h in lists[d]:
                        lists[d].remove(h)
                    rejections.append((d, h, leftover))
                if plate[d] == 0:
                    del plate[d]
        trace.rounds.append(
            RoundRecord(
                k,
                tuple(proposals),
                tuple(rejections),
                sum(free.values(), ZERO),
                _snapshot(inst, grid),
            )
        )
    if max_rounds is None and sum(free.values(), ZERO) > tau:
        raise RuntimeError("propose-and-reject loop exceeded its termination bound")
    completed = allocate_free_mass(inst.doctors, inst.hospitals, grid)
    return bvn_decompose(completed), trace


# ---------------------------------------------------------------------------
# Global stability


def _uniform_cluster_lottery(cluster: Sequence[str]) -> Prospect:
    share = Fraction(1, len(cluster))
    return Prospect("doctors", {d: share for d in cluster})


def _allocation_of_pairs(
    inst: Instance, pairs: Sequence[tuple[str, tuple[str, ...]]], pool: Sequence[str]
) -> MatchingDistribution:
    """Exact law: each paired hospital draws uniformly from its cluster, the
    rest of the market is matched uniformly at random."""
    limit = max_enum()
    size = 1
    for _, cluster in pairs:
        size *= len(cluster)
    leftover_count = inst.n - len(pairs)
    fact = 1
    for m in range(2, leftover_count + 1):
        fact *= m
    if size * fact > limit:
        raise EnumerationLimitError("uniform completion exceeds the enumeration budget")
    parts = []
    pair_hospitals = [h for h, _ in pairs]
    for combo in product(*(cluster for _, cluster in pairs)):
        if len(set(combo)) != len(combo):
            raise RuntimeError("clusters of distinct pairs must be disjoint")
        weight = ONE
        for (_, cluster) in pairs:
            weight *= Fraction(1, len(cluster))
        matched = dict(zip(pair_hospitals, combo))
        rest_doctors = [d for d in inst.doctors if d not in matched.values()]
        rest_hospitals = list(pool)
        for perm in permutations(rest_doctors):
            matching = {d: h for d, h in zip(perm, rest_hospitals)}
            matching.update({d: h for h, d in matched.items()})
            parts.append((weight / fact, matching))
    return MatchingDistribution.from_parts(inst.doctors, inst.hospitals, parts)


def global_stability_solve(inst: Instance) -> MatchingDistribution:
    """Pair hospitals with whole clusters while a blocking allocation exists.

    Starts from the uniform allocation; whenever some pooled hospital h and
    cluster C form a blocking allocation (h strictly gains from U(C) and
    every member weakly prefers h to its whole support), the lowest-index
    such h is locked to its most-preferred blocking cluster.  Terminates
    within one addition per cluster.
    """
    proto = inst.proto()
    for h in inst.hospitals:
        if not isinstance(inst.hospital_prefs[h], StrictIFPrefs):
            raise ValueError("global stability requires cluster-indifferent preferences")
    pairs: list[tuple[str, tuple[str, ...]]] = []
    pool = list(inst.hospitals)
    used_clusters: set[tuple[str, ...]] = set()
    while True:
        md = _allocation_of_pairs(inst, pairs, pool)
        found = None
        for h in pool:
            for cluster in _strict_if_cluster_order(inst, h):
                if blocking_allocation_exists(md, inst, h, _uniform_cluster_lottery(cluster)):
                    found = (h, cluster)
                    break
            if found:
                break
        if found is None:
            return md
        h, cluster = found
        if cluster in used_clusters:
            raise RuntimeError("a cluster blocked twice; pair sampling would collide")
        used_clusters.add(cluster)
        pairs.append((h, cluster))
        pool.remove(h)
        if len(pairs) > len(proto.clusters):
            raise RuntimeError("more pair additions than clusters")


# ---------------------------------------------------------------------------
# Rank-fair to cluster-fair reduction


def rank_to_cluster(
    prefs: HospitalPrefModel, clusters: Sequence[Sequence[str]], doctors: Sequence[str]
) -> StrictIFPrefs:
    """Order clusters by per-capita rank probabilities, refined rank by rank.

    Input preferences must be rank individually fair for the partition's
    proto-metric (same-cluster doctors then share a rank distribution, so
    the per-capita values are well defined).  Ties that survive every rank
    break by cluster index.
    """
    from .fairness import check_rank_if

    proto = ProtoMetric(tuple(doctors), tuple(tuple(c) for c in clusters))
    verdict = check_rank_if(prefs, proto)
    if not verdict.passed:
        w = verdict.witness
        raise ValueError(f"preferences are not rank individually fair (pair {w.i}, {w.j})")
    n = len(doctors)
    per_rank = {
        tuple(c): [
            sum((rank_distribution(prefs, d)[r] for d in c), ZERO) / len(c)
            for r in range(n)
        ]
        for c in clusters
    }
    index = {tuple(c): k for k, c in enumerate(clusters)}

    def refine(group: list[tuple[str, ...]], r: int) -> list[tuple[str, ...]]:
        if r >= n or len(group) == 1:
            return sorted(group, key=index.__getitem__)
        buckets: dict[Fraction, list[tuple[str, ...]]] = {}
        for c in group:
            buckets.setdefault(per_rank[c][r], []).append(c)
        out: list[tuple[str, ...]] = []
        for value in sorted(buckets, reverse=True):
            out.extend(refine(buckets[value], r + 1))
        return out

    order = refine([tuple(c) for c in clusters], 0)
    return StrictIFPrefs(tuple(order))
