"""Fairness checkers for allocations and for hospital preference models.

Allocation-level notions (individual fairness, envy-freeness, PIIF and its
tau relaxation) are decided against the doctor-side marginal prospects of an
allocation.  Preference-level notions (strict, mutual-replacement and rank
individual fairness) audit a hospital's preference distribution directly.

Every checker returns a verdict carrying a machine-checkable witness on
failure: the lexicographically-first violating ordered pair together with
the violated quantity and the bound it had to satisfy.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence, Union

from .core import (
    ZERO,
    ONE,
    AllocationMatrix,
    DeterministicPrefs,
    Dominance,
    ExplicitPrefs,
    HospitalPrefModel,
    MatchingDistribution,
    Metric,
    ProtoMetric,
    StrictIFPrefs,
    dominates,
    format_fraction,
    pref_doctor_count,
    pref_support,
    prefix_vector,
    rank_distribution,
    tv_distance,
)

AllocationLike = Union[AllocationMatrix, MatchingDistribution]


@dataclass(frozen=True)
class FairnessWitness:
    i: str
    j: str
    value: Fraction
    bound: Fraction

    def to_json(self) -> dict:
        return {
            "i": self.i,
            "j": self.j,
            "value": format_fraction(self.value),
            "bound": format_fraction(self.bound),
        }


@dataclass(frozen=True)
class FairnessVerdict:
    passed: bool
    witness: FairnessWitness | None = None

    def __post_init__(self) -> None:
        if self.passed == (self.witness is not None):
            raise ValueError("witness present iff the check failed")

    def to_json(self, prop: str) -> dict:
        out: dict = {"property": prop, "pass": self.passed}
        if self.witness is not None:
            out["witness"] = self.witness.to_json()
        return out


_PASS = FairnessVerdict(True, None)


def _as_matrix(alloc: AllocationLike) -> AllocationMatrix:
    if isinstance(alloc, MatchingDistribution):
        return alloc.marginals()
    return alloc


def _ordered_pairs(doctors: Sequence[str]) -> list[tuple[str, str]]:
    return [(i, j) for i in doctors for j in doctors if i != j]


# ---------------------------------------------------------------------------
# Allocation-level checks


def prospect_piif_deficit(p_i, p_j, ranking: Sequence[str]) -> Fraction:
    """Minimal TV budget for deforming p_j into a prospect p_i dominates.

    Equals max_k max(0, prefix_k(p_j) - prefix_k(p_i)): moving exactly that
    much mass from the earliest ranks of p_j onto the virtual unallocated
    outcome yields a prospect that p_i weakly dominates, and no smaller
    deformation can (any top-k set certifies a TV lower bound of its prefix
    excess).
    """
    pv_i = prefix_vector(p_i, ranking)
    pv_j = prefix_vector(p_j, ranking)
    worst = ZERO
    for a, b in zip(pv_i, pv_j):
        if b - a > worst:
            worst = b - a
    return worst


def piif_deficit(
    alloc: AllocationLike, i: str, j: str, prefs_i: Sequence[str]
) -> Fraction:
    """Minimal TV budget for deforming j's prospect into one i does not envy."""
    matrix = _as_matrix(alloc)
    return prospect_piif_deficit(
        matrix.doctor_prospect(i), matrix.doctor_prospect(j), prefs_i
    )


def check_if(alloc: AllocationLike, metric: Metric) -> FairnessVerdict:
    """Individual fairness: TV(pi(i), pi(j)) <= d(i, j) for all pairs."""
    matrix = _as_matrix(alloc)
    for i, j in _ordered_pairs(matrix.doctors):
        gap = tv_distance(matrix.doctor_prospect(i), matrix.doctor_prospect(j))
        bound = metric.distance(i, j)
        if gap > bound:
            return FairnessVerdict(False, FairnessWitness(i, j, gap, bound))
    return _PASS


def check_ef(
    alloc: AllocationLike, doctor_prefs: Mapping[str, Sequence[str]]
) -> FairnessVerdict:
    """Envy-freeness: every doctor's prospect dominates every other's."""
    matrix = _as_matrix(alloc)
    for i, j in _ordered_pairs(matrix.doctors):
        verdict = dominates(
            matrix.doctor_prospect(i), matrix.doctor_prospect(j), doctor_prefs[i]
        )
        if verdict is Dominance.NO:
            deficit = piif_deficit(matrix, i, j, doctor_prefs[i])
            return FairnessVerdict(False, FairnessWitness(i, j, deficit, ZERO))
    return _PASS


def check_piif(
    alloc: AllocationLike,
    metric: Metric,
    doctor_prefs: Mapping[str, Sequence[str]],
) -> FairnessVerdict:
    """Preference-informed individual fairness: deficit(i, j) <= d(i, j)."""
    matrix = _as_matrix(alloc)
    for i, j in _ordered_pairs(matrix.doctors):
        deficit = piif_deficit(matrix, i, j, doctor_prefs[i])
        bound = metric.distance(i, j)
        if deficit > bound:
            return FairnessVerdict(False, FairnessWitness(i, j, deficit, bound))
    return _PASS


def check_tau_piif(
    alloc: AllocationLike,
    metric: Metric,
    doctor_prefs: Mapping[str, Sequence[str]],
    tau: Fraction,
) -> FairnessVerdict:
    """PIIF against the inflated metric min(d(i, j) + tau, 1)."""
    matrix = _as_matrix(alloc)
    for i, j in _ordered_pairs(matrix.doctors):
        deficit = piif_deficit(matrix, i, j, doctor_prefs[i])
        bound = min(metric.distance(i, j) + tau, ONE)
        if deficit > bound:
            return FairnessVerdict(False, FairnessWitness(i, j, deficit, bound))
    return _PASS


# ---------------------------------------------------------------------------
# Preference-level checks


def validate_strict_if(prefs: HospitalPrefModel, metric: ProtoMetric) -> bool:
    """Indifferent within every cluster and totally separated across clusters.

    StrictIF models are validated structurally (their cluster order must
    list exactly the metric's clusters).  Deterministic and Explicit models
    must put equal per-rank probability on same-cluster doctors and keep
    clusters contiguous in every support order, with one consistent block
    order throughout.
    """
    if isinstance(prefs, StrictIFPrefs):
        return sorted(map(tuple, prefs.cluster_order)) == sorted(map(tuple, metric.clusters))
    support = pref_support(prefs)
    for cluster in metric.clusters:
        ref = rank_distribution(prefs, cluster[0])
        for d in cluster[1:]:
            if rank_distribution(prefs, d) != ref:
                return False
    # Cluster separation: in every support order each pair of clusters must
    # appear as disjoint blocks, always in the same direction.
    pair_dir: dict[tuple[int, int], bool] = {}
    for order, _ in support:
        pos = {d: idx for idx, d in enumerate(order)}
        for a in range(len(metric.clusters)):
            for b in range(a + 1, len(metric.clusters)):
                amax = max(pos[d] for d in metric.clusters[a])
                amin = min(pos[d] for d in metric.clusters[a])
                bmax = max(pos[d] for d in metric.clusters[b])
                bmin = min(pos[d] for d in metric.clusters[b])
                if amax < bmin:
                    a_first = True
                elif bmax < amin:
                    a_first = False
                else:
                    return False
                if pair_dir.setdefault((a, b), a_first) != a_first:
                    return False
    return True


def check_mutual_replacement_if(
    prefs: HospitalPrefModel, metric: Metric
) -> FairnessVerdict:
    """TV between the preference law and its i<->j swap is at most d(i, j)."""
    support = pref_support(prefs)
    law: dict[tuple[str, ...], Fraction] = {}
    for order, weight in support:
        law[order] = law.get(order, ZERO) + weight
    doctors = sorted(support[0][0], key=list(metric.doctors).index)
    for i, j in _ordered_pairs(doctors):
        if doctors.index(i) > doctors.index(j):
            continue  # the swap distance is symmetric
        swap = {i: j, j: i}
        swapped: dict[tuple[str, ...], Fraction] = {}
        for order, weight in law.items():
            key = tuple(swap.get(d, d) for d in order)
            swapped[key] = swapped.get(key, ZERO) + weight
        gap = ZERO
        for order in set(law) | set(swapped):
            gap += abs(law.get(order, ZERO) - swapped.get(order, ZERO))
        gap /= 2
        bound = metric.distance(i, j)
        if gap > bound:
            return FairnessVerdict(False, FairnessWitness(i, j, gap, bound))
    return _PASS


def check_rank_if(prefs: HospitalPrefModel, metric: Metric) -> FairnessVerdict:
    """TV between per-doctor rank distributions is at most d(i, j)."""
    n = pref_doctor_count(prefs)
    if isinstance(prefs, DeterministicPrefs):
        doctors = [d for d in metric.doctors if d in prefs.order]
    elif isinstance(prefs, ExplicitPrefs):
        doctors = [d for d in metric.doctors if d in prefs.doctors]
    else:
        flat = prefs.doctors
        doctors = [d for d in metric.doctors if d in flat]
    dists = {d: rank_distribution(prefs, d) for d in doctors}
    for i, j in _ordered_pairs(doctors):
        if doctors.index(i) > doctors.index(j):
            continue
        gap = sum((abs(a - b) for a, b in zip(dists[i], dists[j])), ZERO) / 2
        bound = metric.distance(i, j)
        if gap > bound:
            return FairnessVerdict(False, FairnessWitness(i, j, gap, bound))
    return _PASS
