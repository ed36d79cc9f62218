"""Exact-rational primitives for probabilistic two-sided matching.

Everything downstream (fairness checkers, stability oracles, mechanisms)
is built on the types and comparisons defined here.  All probability mass,
distances and thresholds are ``fractions.Fraction``; there is no floating
point anywhere, so equality and ordering tests are exact.

Conventions:
  * Doctors and hospitals are stable string ids.  The position of an id in
    the instance's ``doctors``/``hospitals`` tuple is its canonical index;
    every "arbitrary" choice in the library resolves lowest-index-first.
  * A prospect may be partial.  The unallocated residual behaves like mass
    on a virtual outcome ranked strictly below every real outcome (rank
    n+1), so top-k probabilities for k <= n never see it, while total
    variation distance does.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from itertools import permutations
from typing import Iterable, Mapping, Sequence, Union

ZERO = Fraction(0)
ONE = Fraction(1)

RatLike = Union[int, str, Fraction]


def as_fraction(value: RatLike) -> Fraction:
    """Parse an exact rational from an int, Fraction, or "p/q" string."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value.strip())
    raise TypeError(f"not an exact rational: {value!r}")


def format_fraction(value: Fraction) -> str:
    """Render a rational as "p/q", or "p" when the denominator is 1."""
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def max_enum() -> int:
    """Enumeration budget (product profile supports, subset searches)."""
    return int(os.environ.get("FAIRMATCH_MAX_ENUM", "10000"))


class EnumerationLimitError(RuntimeError):
    """An exact enumeration would exceed the FAIRMATCH_MAX_ENUM budget."""


# ---------------------------------------------------------------------------
# Metrics


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class ProtoMetric:
    """Partition of the doctors into clusters; d = 0 within, 1 across."""

    doctors: tuple[str, ...]
    clusters: tuple[tuple[str, ...], ...]

    def __post_init__(self) -> None:
        seen: list[str] = [d for cluster in self.clusters for d in cluster]
        if sorted(seen) != sorted(self.doctors):
            raise MetricError("clusters must partition the doctor set")
        if len(set(seen)) != len(seen):
            raise MetricError("clusters overlap")

    def cluster_of(self, doctor: str) -> tuple[str, ...]:
        for cluster in self.clusters:
            if doctor in cluster:
                return cluster
        raise MetricError(f"unknown doctor {doctor!r}")

    def cluster_index(self, doctor: str) -> int:
        for idx, cluster in enumerate(self.clusters):
            if doctor in cluster:
                return idx
        raise MetricError(f"unknown doctor {doctor!r}")

    def distance(self, a: str, b: str) -> Fraction:
        return ZERO if self.cluster_index(a) == self.cluster_index(b) else ONE


@dataclass(frozen=True)
class GeneralMetric:
    """Symmetric pseudometric with rational distances in [0, 1]."""

    doctors: tuple[str, ...]
    matrix: tuple[tuple[Fraction, ...], ...]

    def __post_init__(self) -> None:
        n = len(self.doctors)
        if len(self.matrix) != n or any(len(row) != n for row in self.matrix):
            raise MetricError("metric matrix must be n x n")
        for i in range(n):
            if self.matrix[i][i] != 0:
                raise MetricError(f"metric diagonal must be 0 (doctor {self.doctors[i]})")
            for j in range(n):
                dij = self.matrix[i][j]
                if dij < 0 or dij > 1:
                    raise MetricError(
                        f"metric entry out of range [0,1]: d({self.doctors[i]},{self.doctors[j]})"
                    )
                if dij != self.matrix[j][i]:
                    raise MetricError("metric must be symmetric")
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    if self.matrix[i][j] > self.matrix[i][k] + self.matrix[k][j]:
                        raise MetricError(
                            "triangle inequality violated at "
                            f"({self.doctors[i]},{self.doctors[j]},{self.doctors[k]})"
                        )

    def distance(self, a: str, b: str) -> Fraction:
        ia = self.doctors.index(a)
        ib = self.doctors.index(b)
        return self.matrix[ia][ib]


Metric = Union[ProtoMetric, GeneralMetric]


def metric_as_proto(metric: Metric) -> ProtoMetric:
    """Return the metric as a proto-metric, or raise if it is not one."""
    if isinstance(metric, ProtoMetric):
        return metric
    n = len(metric.doctors)
    for i in range(n):
        for j in range(n):
            if metric.matrix[i][j] not in (ZERO, ONE):
                raise MetricError("metric is not a proto-metric")
    # Distances in {0,1} plus the triangle inequality give an equivalence.
    clusters: list[list[str]] = []
    for i, d in enumerate(metric.doctors):
        for cluster in clusters:
            if metric.matrix[i][metric.doctors.index(cluster[0])] == 0:
                cluster.append(d)
                break
        else:
            clusters.append([d])
    return ProtoMetric(metric.doctors, tuple(tuple(c) for c in clusters))


# ---------------------------------------------------------------------------
# Hospital preference models


class PrefsError(ValueError):
    pass


@dataclass(frozen=True)
class DeterministicPrefs:
    """A fixed strict order over doctors, best first."""

    order: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(set(self.order)) != len(self.order):
            raise PrefsError("preference order repeats a doctor")


@dataclass(frozen=True)
class StrictIFPrefs:
    """Strict order over the clusters of a proto-metric, best first.

    Within a cluster the hospital is perfectly indifferent; as a preference
    distribution this is the uniform mixture over all orders that keep the
    cluster blocks in the given sequence.
    """

    cluster_order: tuple[tuple[str, ...], ...]

    def __post_init__(self) -> None:
        flat = [d for c in self.cluster_order for d in c]
        if len(set(flat)) != len(flat):
            raise PrefsError("cluster order repeats a doctor")
        if not flat:
            raise PrefsError("empty cluster order")

    @property
    def doctors(self) -> tuple[str, ...]:
        return tuple(d for c in self.cluster_order for d in c)

    def preceding_count(self, doctor: str) -> tuple[int, int]:
        """(#doctors in strictly better clusters, |own cluster|)."""
        before = 0
        for cluster in self.cluster_order:
            if doctor in cluster:
                return before, len(cluster)
            before += len(cluster)
        raise PrefsError(f"unknown doctor {doctor!r}")


@dataclass(frozen=True)
class ExplicitPrefs:
    """Finite-support distribution over strict orders, weights summing to 1."""

    support: tuple[tuple[tuple[str, ...], Fraction], ...]

    def __post_init__(self) -> None:
        if not self.support:
            raise PrefsError("empty preference support")
        base = sorted(self.support[0][0])
        total = ZERO
        for order, weight in self.support:
            if sorted(order) != base:
                raise PrefsError("support orders are not permutations of one doctor set")
            if weight <= 0:
                raise PrefsError("support weights must be positive")
            total += weight
        if total != 1:
            raise PrefsError(f"support weights sum to {format_fraction(total)}, not 1")

    @property
    def doctors(self) -> tuple[str, ...]:
        return self.support[0][0]


HospitalPrefModel = Union[DeterministicPrefs, StrictIFPrefs, ExplicitPrefs]


def pref_doctor_count(prefs: HospitalPrefModel) -> int:
    if isinstance(prefs, DeterministicPrefs):
        return len(prefs.order)
    if isinstance(prefs, StrictIFPrefs):
        return len(prefs.doctors)
    return len(prefs.doctors)


def rank_prefix(prefs: HospitalPrefModel, doctor: str, k: int) -> Fraction:
    """Pr[the doctor's rank under the (random) preference order is <= k].

    For a cluster-indifferent model the rank is uniform over the cluster's
    block of positions, giving the closed form clamp((k - a)/|C|, 0, 1)
    where a doctors sit in strictly better clusters.  No permutation
    enumeration happens here.
    """
    n = pref_doctor_count(prefs)
    if not 1 <= k <= n:
        raise ValueError(f"rank index {k} out of range [1, {n}]")
    if isinstance(prefs, DeterministicPrefs):
        return ONE if prefs.order.index(doctor) < k else ZERO
    if isinstance(prefs, StrictIFPrefs):
        before, size = prefs.preceding_count(doctor)
        return min(ONE, max(ZERO, Fraction(k - before, size)))
    total = ZERO
    for order, weight in prefs.support:
        if order.index(doctor) < k:
            total += weight
    return total


def rank_distribution(prefs: HospitalPrefModel, doctor: str) -> tuple[Fraction, ...]:
    """Per-rank probabilities (Pr[rank = 1], ..., Pr[rank = n])."""
    n = pref_doctor_count(prefs)
    prev = ZERO
    out = []
    for k in range(1, n + 1):
        cur = rank_prefix(prefs, doctor, k)
        out.append(cur - prev)
        prev = cur
    return tuple(out)


def pref_support(prefs: HospitalPrefModel, limit: int | None = None) -> list[tuple[tuple[str, ...], Fraction]]:
    """The model as an explicit list of (order, weight) pairs.

    StrictIF models expand to the uniform product of within-cluster
    permutations; the expansion is capped by `limit` (default: the
    FAIRMATCH_MAX_ENUM budget).
    """
    if limit is None:
        limit = max_enum()
    if isinstance(prefs, DeterministicPrefs):
        return [(prefs.order, ONE)]
    if isinstance(prefs, ExplicitPrefs):
        return list(prefs.support)
    count = 1
    for cluster in prefs.cluster_order:
        for m in range(2, len(cluster) + 1):
            count *= m
        if count > limit:
            raise EnumerationLimitError(
                f"strict-IF expansion has {count}+ orders (budget {limit})"
            )
    weight = Fraction(1, count)
    orders: list[tuple[str, ...]] = [()]
    for cluster in prefs.cluster_order:
        orders = [head + perm for head in orders for perm in permutations(cluster)]
    return [(order, weight) for order in orders]


# ---------------------------------------------------------------------------
# Instances


class InstanceError(ValueError):
    pass


@dataclass(frozen=True)
class Instance:
    """A two-sided market: doctors, hospitals, metric, and both preference sides."""

    doctors: tuple[str, ...]
    hospitals: tuple[str, ...]
    metric: Metric
    doctor_prefs: Mapping[str, tuple[str, ...]]
    hospital_prefs: Mapping[str, HospitalPrefModel]

    def __post_init__(self) -> None:
        n = len(self.doctors)
        if n < 1:
            raise InstanceError("need at least one doctor")
        if len(self.hospitals) != n:
            raise InstanceError("doctor and hospital sets must have equal size")
        if len(set(self.doctors)) != n or len(set(self.hospitals)) != n:
            raise InstanceError("duplicate ids")
        if tuple(self.metric.doctors) != self.doctors:
            raise InstanceError("metric doctor order must match the instance")
        for d in self.doctors:
            order = self.doctor_prefs.get(d)
            if order is None or sorted(order) != sorted(self.hospitals):
                raise InstanceError(f"doctor_prefs[{d}] is not a permutation of the hospitals")
        for h in self.hospitals:
            prefs = self.hospital_prefs.get(h)
            if prefs is None:
                raise InstanceError(f"hospital_prefs[{h}] missing")
            if isinstance(prefs, DeterministicPrefs):
                if sorted(prefs.order) != sorted(self.doctors):
                    raise InstanceError(f"hospital_prefs[{h}] is not a permutation of the doctors")
            elif isinstance(prefs, StrictIFPrefs):
                proto = metric_as_proto(self.metric)
                if sorted(map(tuple, prefs.cluster_order)) != sorted(map(tuple, proto.clusters)):
                    raise InstanceError(
                        f"hospital_prefs[{h}] orders clusters that do not match the proto-metric"
                    )
            else:
                if sorted(prefs.doctors) != sorted(self.doctors):
                    raise InstanceError(f"hospital_prefs[{h}] support is not over the doctors")

    @property
    def n(self) -> int:
        return len(self.doctors)

    def doctor_index(self, doctor: str) -> int:
        return self.doctors.index(doctor)

    def distance(self, a: str, b: str) -> Fraction:
        return self.metric.distance(a, b)

    def doctor_rank(self, doctor: str, hospital: str) -> int:
        """1-based rank of the hospital in the doctor's order."""
        return self.doctor_prefs[doctor].index(hospital) + 1

    def prefers(self, doctor: str, h1: str, h2: str) -> bool:
        """True when the doctor strictly prefers h1 over h2."""
        return self.doctor_rank(doctor, h1) < self.doctor_rank(doctor, h2)

    def proto(self) -> ProtoMetric:
        return metric_as_proto(self.metric)


# ---------------------------------------------------------------------------
# Prospects, allocation matrices, matching distributions


@dataclass(frozen=True)
class Prospect:
    """Sub-distribution over one side; residual = 1 - total mass."""

    side: str  # "hospitals" or "doctors"
    mass: Mapping[str, Fraction]

    def __post_init__(self) -> None:
        cleaned = {}
        total = ZERO
        for outcome, m in self.mass.items():
            m = as_fraction(m)
            if m < 0:
                raise ValueError(f"negative mass on {outcome!r}")
            if m > 0:
                cleaned[outcome] = m
                total += m
        if total > 1:
            raise ValueError(f"prospect mass sums to {format_fraction(total)} > 1")
        object.__setattr__(self, "mass", cleaned)

    def get(self, outcome: str) -> Fraction:
        return self.mass.get(outcome, ZERO)

    @property
    def total(self) -> Fraction:
        return sum(self.mass.values(), ZERO)

    @property
    def residual(self) -> Fraction:
        return ONE - self.total

    @property
    def support(self) -> tuple[str, ...]:
        return tuple(sorted(self.mass))


@dataclass(frozen=True)
class AllocationMatrix:
    """Sub-doubly-stochastic matrix; rows are doctors, columns hospitals."""

    doctors: tuple[str, ...]
    hospitals: tuple[str, ...]
    rows: tuple[tuple[Fraction, ...], ...]

    def __post_init__(self) -> None:
        n, m = len(self.doctors), len(self.hospitals)
        if len(self.rows) != n or any(len(r) != m for r in self.rows):
            raise ValueError("allocation matrix shape mismatch")
        for r in self.rows:
            for entry in r:
                if entry < 0:
                    raise ValueError("negative allocation entry")
        for i in range(n):
            if sum(self.rows[i], ZERO) > 1:
                raise ValueError(f"row sum > 1 for doctor {self.doctors[i]}")
        for j in range(m):
            if sum((self.rows[i][j] for i in range(n)), ZERO) > 1:
                raise ValueError(f"column sum > 1 for hospital {self.hospitals[j]}")

    def entry(self, doctor: str, hospital: str) -> Fraction:
        return self.rows[self.doctors.index(doctor)][self.hospitals.index(hospital)]

    def doctor_prospect(self, doctor: str) -> Prospect:
        i = self.doctors.index(doctor)
        return Prospect("hospitals", {h: self.rows[i][j] for j, h in enumerate(self.hospitals)})

    def hospital_prospect(self, hospital: str) -> Prospect:
        j = self.hospitals.index(hospital)
        return Prospect("doctors", {d: self.rows[i][j] for i, d in enumerate(self.doctors)})

    def is_complete(self) -> bool:
        n = len(self.doctors)
        return all(sum(self.rows[i], ZERO) == 1 for i in range(n)) and all(
            sum((self.rows[i][j] for i in range(n)), ZERO) == 1 for j in range(len(self.hospitals))
        )


Matching = Mapping[str, str]  # doctor -> hospital, a bijection


@dataclass(frozen=True)
class MatchingDistribution:
    """Convex combination of complete matchings."""

    doctors: tuple[str, ...]
    hospitals: tuple[str, ...]
    parts: tuple[tuple[Fraction, tuple[tuple[str, str], ...]], ...]

    def __post_init__(self) -> None:
        total = ZERO
        for weight, pairs in self.parts:
            if weight <= 0:
                raise ValueError("matching weights must be positive")
            total += weight
            matched_doctors = [d for d, _ in pairs]
            matched_hospitals = [h for _, h in pairs]
            if sorted(matched_doctors) != sorted(self.doctors):
                raise ValueError("matching does not cover the doctors")
            if sorted(matched_hospitals) != sorted(self.hospitals):
                raise ValueError("matching is not a bijection onto the hospitals")
        if total != 1:
            raise ValueError(f"matching weights sum to {format_fraction(total)}, not 1")

    @staticmethod
    def from_parts(
        doctors: Sequence[str],
        hospitals: Sequence[str],
        parts: Iterable[tuple[Fraction, Matching]],
    ) -> "MatchingDistribution":
        """Merge duplicate matchings and store in canonical sorted order."""
        merged: dict[tuple[tuple[str, str], ...], Fraction] = {}
        for weight, matching in parts:
            key = tuple(sorted(matching.items()))
            merged[key] = merged.get(key, ZERO) + weight
        canonical = tuple(
            (weight, key) for key, weight in sorted(merged.items(), key=lambda kv: kv[0]) if weight != 0
        )
        return MatchingDistribution(tuple(doctors), tuple(hospitals), canonical)

    def matchings(self) -> list[tuple[Fraction, dict[str, str]]]:
        return [(weight, dict(pairs)) for weight, pairs in self.parts]

    def doctor_prospect(self, doctor: str) -> Prospect:
        mass: dict[str, Fraction] = {}
        for weight, pairs in self.parts:
            h = dict(pairs)[doctor]
            mass[h] = mass.get(h, ZERO) + weight
        return Prospect("hospitals", mass)

    def hospital_prospect(self, hospital: str) -> Prospect:
        mass: dict[str, Fraction] = {}
        for weight, pairs in self.parts:
            d = next(d for d, h in pairs if h == hospital)
            mass[d] = mass.get(d, ZERO) + weight
        return Prospect("doctors", mass)

    def marginals(self) -> AllocationMatrix:
        n = len(self.doctors)
        grid = [[ZERO] * n for _ in range(n)]
        col = {h: j for j, h in enumerate(self.hospitals)}
        row = {d: i for i, d in enumerate(self.doctors)}
        for weight, pairs in self.parts:
            for d, h in pairs:
                grid[row[d]][col[h]] += weight
        return AllocationMatrix(self.doctors, self.hospitals, tuple(tuple(r) for r in grid))


def marginals(md: MatchingDistribution) -> AllocationMatrix:
    """P[d, h] = total weight of matchings pairing d with h (doubly stochastic)."""
    return md.marginals()


# ---------------------------------------------------------------------------
# Stochastic domination and total variation distance


class Dominance(Enum):
    STRONG = "strongly-dominates"
    WEAK = "weakly-dominates"
    NO = "no"

    def at_least_weak(self) -> bool:
        return self is not Dominance.NO


def prefix_prob(prospect: Prospect, ranking: Sequence[str], k: int) -> Fraction:
    """Mass the prospect puts on the k highest-ranked outcomes.

    Residual mass counts only at the virtual rank n+1, so even k = n can
    return less than 1 for a partial prospect.
    """
    n = len(ranking)
    if not 1 <= k <= n:
        raise ValueError(f"prefix index {k} out of range [1, {n}]")
    missing = [o for o in prospect.mass if o not in ranking]
    if missing:
        raise ValueError(f"ranking does not cover outcomes {missing}")
    return sum((prospect.get(o) for o in ranking[:k]), ZERO)


def prefix_vector(prospect: Prospect, ranking: Sequence[str]) -> tuple[Fraction, ...]:
    out = []
    acc = ZERO
    for o in ranking:
        acc += prospect.get(o)
        out.append(acc)
    return tuple(out)


def _compare_prefixes(pv: Sequence[Fraction], qv: Sequence[Fraction]) -> Dominance:
    strict = False
    for a, b in zip(pv, qv):
        if a < b:
            return Dominance.NO
        if a > b:
            strict = True
    return Dominance.STRONG if strict else Dominance.WEAK


def dominates(p: Prospect, q: Prospect, ranking: Sequence[str]) -> Dominance:
    """Stochastic domination of p over q under a strict ranking.

    Weak: every top-k probability under p is >= the one under q.  Strong:
    additionally strict somewhere.  Equal prefix vectors (WEAK) happen
    exactly when the prospects agree outcome by outcome.
    """
    if p.side != q.side:
        raise ValueError("prospects compare only within one side")
    return _compare_prefixes(prefix_vector(p, ranking), prefix_vector(q, ranking))


def hospital_prefix_prob(p: Prospect, prefs: HospitalPrefModel, k: int) -> Fraction:
    """Pr over both lotteries that the matched doctor ranks in the top k."""
    return sum((m * rank_prefix(prefs, d, k) for d, m in p.mass.items()), ZERO)


def hospital_prefix_vector(p: Prospect, prefs: HospitalPrefModel) -> tuple[Fraction, ...]:
    n = pref_doctor_count(prefs)
    return tuple(hospital_prefix_prob(p, prefs, k) for k in range(1, n + 1))


def dominates_by_hospital(p: Prospect, q: Prospect, prefs: HospitalPrefModel) -> Dominance:
    """Stochastic domination of prospects over doctors under a preference model."""
    if p.side != "doctors" or q.side != "doctors":
        raise ValueError("hospital-side comparison needs prospects over doctors")
    return _compare_prefixes(hospital_prefix_vector(p, prefs), hospital_prefix_vector(q, prefs))


def tv_distance(p: Prospect, q: Prospect) -> Fraction:
    """Total variation distance; residuals meet on a shared virtual outcome."""
    if p.side != q.side:
        raise ValueError("prospects compare only within one side")
    outcomes = set(p.mass) | set(q.mass)
    acc = sum((abs(p.get(o) - q.get(o)) for o in outcomes), ZERO)
    acc += abs(p.residual - q.residual)
    return acc / 2
