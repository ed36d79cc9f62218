"""Canonical instance catalog, random generators, and file formats.

Each catalog key builds a named instance together with its expected
artifacts (output laws, marginal matrices, witnesses) so the CLI's
reproduce command and the test suite can diff against them exactly.
Impossibility keys carry two preference cases; the second case lives in
the expected-artifact dict under "case2".
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import permutations
from math import ceil
from typing import Any, Mapping, Sequence

from .core import (
    ZERO,
    ONE,
    AllocationMatrix,
    DeterministicPrefs,
    ExplicitPrefs,
    GeneralMetric,
    HospitalPrefModel,
    Instance,
    InstanceError,
    MatchingDistribution,
    ProtoMetric,
    StrictIFPrefs,
    as_fraction,
    format_fraction,
)

F = Fraction


@dataclass(frozen=True)
class NamedInstance:
    key: str
    instance: Instance
    expected: dict[str, Any] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Builders


def _proto_instance(
    doctors: Sequence[str],
    hospitals: Sequence[str],
    clusters: Sequence[Sequence[str]],
    doctor_prefs: Mapping[str, Sequence[str]],
    hospital_cluster_orders: Mapping[str, Sequence[Sequence[str]]],
) -> Instance:
    metric = ProtoMetric(tuple(doctors), tuple(tuple(c) for c in clusters))
    prefs = {
        h: StrictIFPrefs(tuple(tuple(c) for c in order))
        for h, order in hospital_cluster_orders.items()
    }
    return Instance(
        tuple(doctors),
        tuple(hospitals),
        metric,
        {d: tuple(o) for d, o in doctor_prefs.items()},
        prefs,
    )


def _det_instance(
    doctors: Sequence[str],
    hospitals: Sequence[str],
    metric: ProtoMetric | GeneralMetric,
    doctor_prefs: Mapping[str, Sequence[str]],
    hospital_orders: Mapping[str, Sequence[str]],
) -> Instance:
    return Instance(
        tuple(doctors),
        tuple(hospitals),
        metric,
        {d: tuple(o) for d, o in doctor_prefs.items()},
        {h: DeterministicPrefs(tuple(o)) for h, o in hospital_orders.items()},
    )


def _distribution(
    doctors: Sequence[str],
    hospitals: Sequence[str],
    parts: Sequence[tuple[Fraction, Mapping[str, str]]],
) -> MatchingDistribution:
    return MatchingDistribution.from_parts(tuple(doctors), tuple(hospitals), parts)


def _matrix(
    doctors: Sequence[str], hospitals: Sequence[str], rows: Sequence[Sequence[Fraction]]
) -> AllocationMatrix:
    return AllocationMatrix(
        tuple(doctors), tuple(hospitals), tuple(tuple(F(v) for v in row) for row in rows)
    )


def tilde_prefs(
    first: str,
    second: str,
    third: str,
    fourth: str,
    prefix: Sequence[str] = (),
    suffix: Sequence[str] = (),
) -> ExplicitPrefs:
    """An 18-order preference lottery graded across four doctors.

    Orders led by the four doctors carry weight 3/36, 2/36, 1/36 and 0
    respectively (times the 6 arrangements of the rest), which makes the
    point mass on each doctor stochastically dominate the next one's while
    swapping either graded pair (first/third or second/fourth) moves the
    law by TV exactly 1/3.  A deterministic prefix/suffix embeds the block
    among other doctors.
    """
    weights = {first: F(3, 36), second: F(2, 36), third: F(1, 36)}
    block = (first, second, third, fourth)
    support = []
    for leader, w in weights.items():
        rest = [d for d in block if d != leader]
        for perm in permutations(rest):
            support.append((tuple(prefix) + (leader,) + perm + tuple(suffix), w))
    return ExplicitPrefs(tuple(support))


def _metric_thirds(doctors: Sequence[str], close_pairs: Sequence[tuple[str, str]]) -> GeneralMetric:
    """All distances 1 except the listed pairs at 1/3."""
    n = len(doctors)
    idx = {d: i for i, d in enumerate(doctors)}
    grid = [[ONE if i != j else ZERO for j in range(n)] for i in range(n)]
    for a, b in close_pairs:
        grid[idx[a]][idx[b]] = F(1, 3)
        grid[idx[b]][idx[a]] = F(1, 3)
    return GeneralMetric(tuple(doctors), tuple(tuple(row) for row in grid))


def _build_gs_doctor_compose() -> NamedInstance:
    doctors = ("i1", "i2", "j")
    hospitals = ("A", "B", "C")
    inst = _proto_instance(
        doctors,
        hospitals,
        (("i1", "i2"), ("j",)),
        {"i1": "ABC", "i2": "ACB", "j": "CAB"},
        {
            "A": (("j",), ("i1", "i2")),
            "B": (("i1", "i2"), ("j",)),
            "C": (("i1", "i2"), ("j",)),
        },
    )
    expected = {
        "distribution": _distribution(
            doctors,
            hospitals,
            [
                (F(1, 2), {"i1": "B", "i2": "C", "j": "A"}),
                (F(1, 2), {"i1": "B", "i2": "A", "j": "C"}),
            ],
        ),
        "piif_witness": ("i1", "i2"),
        "piif_deficit": F(1, 2),
        "deficit_rank": 1,
        "proposing_side": "doctors",
    }
    return NamedInstance("gs-doctor-compose", inst, expected)


def _build_gs_hospital_compose() -> NamedInstance:
    doctors = ("i1", "i2", "j", "k")
    hospitals = ("A", "B", "C", "D")
    inst = _proto_instance(
        doctors,
        hospitals,
        (("i1", "i2"), ("j",), ("k",)),
        {"i1": "ABCD", "i2": "BADC", "j": "CBAD", "k": "DABC"},
        {
            "A": (("i1", "i2"), ("j",), ("k",)),
            "B": (("j",), ("i1", "i2"), ("k",)),
            "C": (("i1", "i2"), ("j",), ("k",)),
            "D": (("i1", "i2"), ("k",), ("j",)),
        },
    )
    expected = {
        "distribution": _distribution(
            doctors,
            hospitals,
            [
                (F(1, 2), {"i1": "A", "i2": "B", "j": "C", "k": "D"}),
                (F(1, 2), {"i1": "C", "i2": "A", "j": "B", "k": "D"}),
            ],
        ),
        "piif_witness": ("i1", "i2"),
        "piif_deficit": F(1, 2),
        "deficit_rank": 2,
        "proposing_side": "hospitals",
    }
    return NamedInstance("gs-hospital-compose", inst, expected)


def _build_algs_differ() -> NamedInstance:
    doctors = ("i1", "i2", "j1", "j2")
    hospitals = ("A", "B", "C", "D")
    inst = _proto_instance(
        doctors,
        hospitals,
        (("i1", "i2"), ("j1", "j2")),
        {"i1": "ABCD", "i2": "BADC", "j1": "CABD", "j2": "ADBC"},
        {
            "A": (("j1", "j2"), ("i1", "i2")),
            "B": (("j1", "j2"), ("i1", "i2")),
            "C": (("i1", "i2"), ("j1", "j2")),
            "D": (("j1", "j2"), ("i1", "i2")),
        },
    )
    expected = {
        "hospitals_first": _matrix(
            doctors,
            hospitals,
            [
                [0, F(1, 4), F(3, 4), 0],
                [0, F(1, 4), F(1, 4), F(1, 2)],
                [F(1, 2), F(1, 2), 0, 0],
                [F(1, 2), 0, 0, F(1, 2)],
            ],
        ),
        "doctors_first": _matrix(
            doctors,
            hospitals,
            [
                [0, F(1, 2), F(1, 2), 0],
                [0, F(1, 2), 0, F(1, 2)],
                [F(1, 2), 0, F(1, 2), 0],
                [F(1, 2), 0, 0, F(1, 2)],
            ],
        ),
    }
    return NamedInstance("algs-differ", inst, expected)


def _build_not_optimal() -> NamedInstance:
    doctors = ("i1", "i2", "i3")
    hospitals = ("A", "B", "C")
    inst = _proto_instance(
        doctors,
        hospitals,
        (("i1", "i2", "i3"),),
        {"i1": "ABC", "i2": "ACB", "i3": "CAB"},
        {h: (("i1", "i2", "i3"),) for h in hospitals},
    )
    expected = {
        "hospitals_first": _matrix(
            doctors,
            hospitals,
            [[F(1, 2), F(1, 2), 0], [F(1, 2), F(1, 4), F(1, 4)], [0, F(1, 4), F(3, 4)]],
        ),
        "doctors_first": _matrix(
            doctors,
            hospitals,
            [[F(1, 3), F(2, 3), 0], [F(1, 3), F(1, 6), F(1, 2)], [F(1, 3), F(1, 6), F(1, 2)]],
        ),
    }
    return NamedInstance("not-optimal", inst, expected)


def _build_nonconv_hospitals_first() -> NamedInstance:
    base = _build_gs_hospital_compose()
    return NamedInstance(
        "nonconv-hospitals-first",
        base.instance,
        {"halving_round_offset": 1},
    )


def _build_nonconv_doctors_first() -> NamedInstance:
    base = _build_gs_doctor_compose()
    return NamedInstance(
        "nonconv-doctors-first",
        base.instance,
        {"halving_round_offset": 1},
    )


_LADP_DOCTOR_PREFS = {
    "i": "ABCDEF",
    "j": "FABCDE",
    "k": "ABCDEF",
    "l": "EABCDF",
    "x": "FDABCE",
    "y": "ECABDF",
}


def _build_imposs_unfair_ladp() -> NamedInstance:
    doctors = ("i", "j", "k", "l", "x", "y")
    hospitals = ("A", "B", "C", "D", "E", "F")
    clusters = (("i", "j"), ("k", "l"), ("x",), ("y",))
    metric = ProtoMetric(doctors, clusters)
    shared = {
        "A": "jkilxy",
        "B": "jkilxy",
        "C": "yxjkil",
        "D": "yxjkil",
    }
    case1 = _det_instance(
        doctors,
        hospitals,
        metric,
        _LADP_DOCTOR_PREFS,
        {**shared, "E": "lykijx", "F": "jxkily"},
    )
    case2 = _det_instance(
        doctors,
        hospitals,
        metric,
        _LADP_DOCTOR_PREFS,
        {**shared, "E": "ylkijx", "F": "xjkily"},
    )
    expected = {
        "case2": case2,
        "case1_stable_matching": {"i": "B", "j": "F", "k": "A", "l": "E", "x": "D", "y": "C"},
    }
    return NamedInstance("imposs-unfair-ladp", case1, expected)


def _build_imposs_unfair_lahp() -> NamedInstance:
    doctors = ("i", "j", "k", "l")
    hospitals = ("A", "B", "C", "D")
    clusters = (("i", "j"), ("k", "l"))
    metric = ProtoMetric(doctors, clusters)
    hospital_orders = {"A": "jkil", "B": "jkil", "C": "kjli", "D": "jlik"}
    case1 = _det_instance(
        doctors,
        hospitals,
        metric,
        {"i": "ABCD", "k": "ABCD", "j": "ABCD", "l": "ABDC"},
        hospital_orders,
    )
    case2 = _det_instance(
        doctors,
        hospitals,
        metric,
        {"i": "ABCD", "k": "ABCD", "j": "DABC", "l": "CBAD"},
        hospital_orders,
    )
    # Case-1 audits: the unique stable law pairs A with the {i, j} coin flip;
    # locking A to the {k, l} cluster instead is flagged with the uniform
    # {i, j} lottery as the witness.
    stable = _distribution(
        doctors,
        hospitals,
        [
            (F(1, 2), {"i": "A", "j": "B", "k": "C", "l": "D"}),
            (F(1, 2), {"j": "A", "k": "B", "i": "C", "l": "D"}),
        ],
    )
    unstable = _distribution(
        doctors,
        hospitals,
        [
            (F(1, 2), {"k": "A", "j": "B", "i": "C", "l": "D"}),
            (F(1, 2), {"l": "A", "j": "B", "k": "C", "i": "D"}),
        ],
    )
    expected = {
        "case2": case2,
        "case1_stable": stable,
        "case1_unstable": unstable,
        "case1_witness": ("A", ("i", "j"), {"i": F(1, 2), "j": F(1, 2)}),
        "case2_stable_matching": {"i": "B", "j": "D", "k": "A", "l": "C"},
    }
    return NamedInstance("imposs-unfair-lahp", case1, expected)


def _build_imposs_unfair_lahp_alpha(alpha: Fraction) -> NamedInstance:
    if not 0 < alpha <= 1:
        raise InstanceError("alpha must lie in (0, 1]")
    beta = ceil(1 / alpha)
    extras = tuple(f"d{m}" for m in range(1, beta + 1))
    extra_hospitals = tuple(f"H{m}" for m in range(1, beta + 1))
    doctors = ("i", "j", "k", "l") + extras
    hospitals = ("A", "B", "C", "D") + extra_hospitals
    clusters = (("i", "j"), ("k", "l")) + tuple((d,) for d in extras)
    metric = ProtoMetric(doctors, clusters)

    def dm_prefs(m: int) -> tuple[str, ...]:
        others = [f"H{t}" for t in range(1, beta + 1) if t != m]
        return ("A", f"H{m}", *others, "B", "C", "D")

    def hm_order(m: int) -> tuple[str, ...]:
        others = [f"d{t}" for t in range(1, beta + 1) if t != m]
        return (f"d{m}", *others, "i", "k", "j", "l")

    doctor_prefs_base = {
        "i": ("A", "B", "C", "D", *extra_hospitals),
        "k": ("A", "B", "C", "D", *extra_hospitals),
        **{f"d{m}": dm_prefs(m) for m in range(1, beta + 1)},
    }
    hospital_orders = {
        "A": ("j", "k", "i", "l", *extras),
        "B": ("j", "k", "i", "l", *extras),
        "D": (*extras, "j", "l", "i", "k"),
        "C": ("k", "j", "l", "i", *extras),
        **{f"H{m}": hm_order(m) for m in range(1, beta + 1)},
    }
    case1 = _det_instance(
        doctors,
        hospitals,
        metric,
        {
            **doctor_prefs_base,
            "j": ("A", "B", "C", "D", *extra_hospitals),
            "l": ("A", "B", "D", "C", *extra_hospitals),
        },
        hospital_orders,
    )
    case2 = _det_instance(
        doctors,
        hospitals,
        metric,
        {
            **doctor_prefs_base,
            "j": ("D", "A", "B", "C", *extra_hospitals),
            "l": ("C", "B", "A", "D", *extra_hospitals),
        },
        hospital_orders,
    )
    matching2 = {"i": "B", "j": "D", "k": "A", "l": "C"}
    matching2.update({f"d{m}": f"H{m}" for m in range(1, beta + 1)})
    return NamedInstance(
        "imposs-unfair-lahp-alpha",
        case1,
        {"case2": case2, "beta": beta, "case2_stable_matching": matching2},
    )


def _build_imposs_metric_ladp() -> NamedInstance:
    doctors = ("i", "j", "k", "l", "x", "y")
    hospitals = ("A", "B", "C", "D", "E", "F")
    metric = _metric_thirds(doctors, [("i", "j"), ("k", "l")])
    shared: dict[str, HospitalPrefModel] = {
        "A": tilde_prefs("j", "k", "i", "l", suffix=("x", "y")),
        "B": tilde_prefs("j", "k", "i", "l", suffix=("x", "y")),
        "C": tilde_prefs("j", "k", "i", "l", prefix=("y", "x")),
        "D": tilde_prefs("j", "k", "i", "l", prefix=("x", "y")),
    }
    prefs = {d: tuple(o) for d, o in _LADP_DOCTOR_PREFS.items()}
    case1 = Instance(
        doctors,
        hospitals,
        metric,
        prefs,
        {
            **shared,
            "E": tilde_prefs("l", "j", "k", "i", suffix=("x", "y")),
            "F": tilde_prefs("j", "k", "i", "l", suffix=("x", "y")),
        },
    )
    case2 = Instance(
        doctors,
        hospitals,
        metric,
        prefs,
        {
            **shared,
            "E": tilde_prefs("l", "j", "k", "i", prefix=("y",), suffix=("x",)),
            "F": tilde_prefs("j", "k", "i", "l", prefix=("x",), suffix=("y",)),
        },
    )
    unstable2 = _distribution(
        doctors,
        hospitals,
        [(ONE, {"k": "A", "i": "B", "l": "C", "j": "D", "y": "E", "x": "F"})],
    )
    expected = {
        "case2": case2,
        "case1_stable_matching": {"i": "B", "j": "F", "k": "A", "l": "E", "x": "D", "y": "C"},
        "case2_unstable": unstable2,
        "case2_witness": ("A", ("i", "j"), {"i": F(1, 3), "j": F(2, 3)}),
    }
    return NamedInstance("imposs-metric-ladp", case1, expected)


def _build_imposs_metric_lahp() -> NamedInstance:
    doctors = ("i", "j", "k", "l")
    hospitals = ("A", "B", "C", "D")
    metric = _metric_thirds(doctors, [("i", "j"), ("k", "l")])
    shared: dict[str, HospitalPrefModel] = {
        "A": tilde_prefs("j", "k", "i", "l"),
        "B": tilde_prefs("j", "k", "i", "l"),
        "C": tilde_prefs("k", "j", "l", "i"),
        "D": tilde_prefs("j", "l", "i", "k"),
    }
    case1 = Instance(
        doctors,
        hospitals,
        metric,
        {"i": tuple("ABCD"), "k": tuple("ABCD"), "j": tuple("ABCD"), "l": tuple("ABDC")},
        dict(shared),
    )
    case2 = Instance(
        doctors,
        hospitals,
        metric,
        {"i": tuple("ABCD"), "k": tuple("ABCD"), "j": tuple("DABC"), "l": tuple("CBAD")},
        dict(shared),
    )
    expected = {
        "case2": case2,
        "case2_stable_matching": {"i": "B", "j": "D", "k": "A", "l": "C"},
        "case1_lottery": {"i": F(1, 3), "j": F(2, 3)},
    }
    return NamedInstance("imposs-metric-lahp", case1, expected)


def _build_imposs_metric_lahp_alpha(alpha: Fraction) -> NamedInstance:
    if not 0 < alpha <= 1:
        raise InstanceError("alpha must lie in (0, 1]")
    beta = ceil(1 / alpha)
    extras = tuple(f"d{m}" for m in range(1, beta + 1))
    extra_hospitals = tuple(f"H{m}" for m in range(1, beta + 1))
    doctors = ("i", "j", "k", "l") + extras
    hospitals = ("A", "B", "C", "D") + extra_hospitals
    metric = _metric_thirds(doctors, [("i", "j"), ("k", "l")])

    def dm_prefs(m: int) -> tuple[str, ...]:
        others = [f"H{t}" for t in range(1, beta + 1) if t != m]
        return ("A", f"H{m}", *others, "B", "C", "D")

    def hm_prefs(m: int) -> ExplicitPrefs:
        others = [f"d{t}" for t in range(1, beta + 1) if t != m]
        return tilde_prefs("i", "k", "j", "l", prefix=(f"d{m}", *others))

    doctor_prefs_base = {
        "i": ("A", "B", "C", *extra_hospitals, "D"),
        "k": ("A", "B", "C", "D", *extra_hospitals),
        **{f"d{m}": dm_prefs(m) for m in range(1, beta + 1)},
    }
    hospital_prefs: dict[str, HospitalPrefModel] = {
        "A": tilde_prefs("j", "k", "i", "l", suffix=extras),
        "B": tilde_prefs("j", "k", "i", "l", suffix=extras),
        "C": tilde_prefs("k", "j", "l", "i", suffix=extras),
        "D": tilde_prefs("j", "l", "i", "k", prefix=extras),
        **{f"H{m}": hm_prefs(m) for m in range(1, beta + 1)},
    }
    case1 = Instance(
        doctors,
        hospitals,
        metric,
        {
            **doctor_prefs_base,
            "j": ("A", "B", "C", "D", *extra_hospitals),
            "l": ("A", "B", "D", "C", *extra_hospitals),
        },
        hospital_prefs,
    )
    case2 = Instance(
        doctors,
        hospitals,
        metric,
        {
            **doctor_prefs_base,
            "j": ("D", "A", "B", "C", *extra_hospitals),
            "l": ("C", "B", "A", "D", *extra_hospitals),
        },
        hospital_prefs,
    )
    matching2 = {"i": "B", "j": "D", "k": "A", "l": "C"}
    matching2.update({f"d{m}": f"H{m}" for m in range(1, beta + 1)})
    return NamedInstance(
        "imposs-metric-lahp-alpha",
        case1,
        {"case2": case2, "beta": beta, "case2_stable_matching": matching2},
    )


def _build_tilde_prefs() -> NamedInstance:
    doctors = ("d1", "d2", "d3", "d4")
    hospitals = ("h1", "h2", "h3", "h4")
    metric = _metric_thirds(doctors, [("d1", "d3"), ("d2", "d4")])
    prefs = tilde_prefs("d1", "d2", "d3", "d4")
    inst = Instance(
        doctors,
        hospitals,
        metric,
        {d: hospitals for d in doctors},
        {h: prefs for h in hospitals},
    )
    rank_matrix = (
        (F(1, 2), F(1, 3), F(1, 6), ZERO),
        (F(1, 6), F(2, 9), F(5, 18), F(1, 3)),
        (F(1, 6), F(2, 9), F(5, 18), F(1, 3)),
        (F(1, 6), F(2, 9), F(5, 18), F(1, 3)),
    )
    return NamedInstance("tilde-prefs", inst, {"rank_matrix": rank_matrix})


_BUILDERS = {
    "gs-doctor-compose": _build_gs_doctor_compose,
    "gs-hospital-compose": _build_gs_hospital_compose,
    "nonconv-hospitals-first": _build_nonconv_hospitals_first,
    "nonconv-doctors-first": _build_nonconv_doctors_first,
    "algs-differ": _build_algs_differ,
    "not-optimal": _build_not_optimal,
    "imposs-unfair-ladp": _build_imposs_unfair_ladp,
    "imposs-unfair-lahp": _build_imposs_unfair_lahp,
    "imposs-metric-ladp": _build_imposs_metric_ladp,
    "imposs-metric-lahp": _build_imposs_metric_lahp,
    "tilde-prefs": _build_tilde_prefs,
}

_ALPHA_BUILDERS = {
    "imposs-unfair-lahp-alpha": _build_imposs_unfair_lahp_alpha,
    "imposs-metric-lahp-alpha": _build_imposs_metric_lahp_alpha,
}

CATALOG_KEYS = tuple(sorted(_BUILDERS)) + tuple(sorted(_ALPHA_BUILDERS))


def build(key: str, alpha: Fraction | None = None) -> NamedInstance:
    """Build a catalog instance; alpha-parametric keys require alpha."""
    if key in _BUILDERS:
        return _BUILDERS[key]()
    if key in _ALPHA_BUILDERS:
        if alpha is None:
            raise InstanceError(f"catalog key {key!r} needs an alpha parameter")
        return _ALPHA_BUILDERS[key](as_fraction(alpha))
    raise InstanceError(f"unknown catalog key {key!r}")


# ---------------------------------------------------------------------------
# Random instances


def random_instance(
    n: int, cluster_profile: Sequence[int] | None = None, seed: int = 0
) -> Instance:
    """Seeded random instance: uniform doctor orders, strict-IF hospitals."""
    rng = random.Random(seed)
    doctors = tuple(f"d{i}" for i in range(n))
    hospitals = tuple(f"h{i}" for i in range(n))
    if cluster_profile is None:
        sizes = []
        left = n
        while left:
            size = rng.randint(1, min(3, left))
            sizes.append(size)
            left -= size
    else:
        sizes = list(cluster_profile)
        if sum(sizes) != n or any(s < 1 for s in sizes):
            raise InstanceError("cluster profile must be positive sizes summing to n")
    clusters = []
    cursor = 0
    for size in sizes:
        clusters.append(doctors[cursor : cursor + size])
        cursor += size
    metric = ProtoMetric(doctors, tuple(clusters))
    doctor_prefs = {d: tuple(rng.sample(hospitals, n)) for d in doctors}
    hospital_prefs = {
        h: StrictIFPrefs(tuple(rng.sample(clusters, len(clusters)))) for h in hospitals
    }
    return Instance(doctors, hospitals, metric, doctor_prefs, hospital_prefs)


# ---------------------------------------------------------------------------
# File formats


def _parse_fraction_field(raw: Any, where: str) -> Fraction:
    try:
        value = as_fraction(raw)
    except (ValueError, TypeError, ZeroDivisionError) as exc:
        raise InstanceError(f"{where}: malformed rational {raw!r}") from exc
    return value


def _parse_prob_field(raw: Any, where: str) -> Fraction:
    value = _parse_fraction_field(raw, where)
    if value < 0 or value > 1:
        raise InstanceError(f"{where}: value {raw!r} outside [0, 1]")
    return value


def instance_to_json(inst: Instance) -> dict:
    metric: dict[str, Any]
    if isinstance(inst.metric, ProtoMetric):
        metric = {"type": "proto", "clusters": [list(c) for c in inst.metric.clusters]}
    else:
        metric = {
            "type": "general",
            "distances": [[format_fraction(v) for v in row] for row in inst.metric.matrix],
        }
    hospital_prefs: dict[str, Any] = {}
    for h, prefs in inst.hospital_prefs.items():
        if isinstance(prefs, DeterministicPrefs):
            hospital_prefs[h] = {"type": "deterministic", "order": list(prefs.order)}
        elif isinstance(prefs, StrictIFPrefs):
            hospital_prefs[h] = {
                "type": "strict_if",
                "cluster_order": [list(c) for c in prefs.cluster_order],
            }
        else:
            hospital_prefs[h] = {
                "type": "explicit",
                "support": [
                    {"order": list(order), "weight": format_fraction(w)}
                    for order, w in prefs.support
                ],
            }
    return {
        "doctors": list(inst.doctors),
        "hospitals": list(inst.hospitals),
        "metric": metric,
        "doctor_prefs": {d: list(o) for d, o in inst.doctor_prefs.items()},
        "hospital_prefs": hospital_prefs,
    }


def serialize_instance(inst: Instance) -> str:
    return json.dumps(instance_to_json(inst), indent=2, sort_keys=True) + "\n"


def instance_from_json(data: Mapping[str, Any]) -> Instance:
    for key in ("doctors", "hospitals", "metric", "doctor_prefs", "hospital_prefs"):
        if key not in data:
            raise InstanceError(f"missing field {key!r}")
    doctors = tuple(data["doctors"])
    hospitals = tuple(data["hospitals"])
    raw_metric = data["metric"]
    if raw_metric.get("type") == "proto":
        metric: ProtoMetric | GeneralMetric = ProtoMetric(
            doctors, tuple(tuple(c) for c in raw_metric["clusters"])
        )
    elif raw_metric.get("type") == "general":
        rows = raw_metric["distances"]
        metric = GeneralMetric(
            doctors,
            tuple(
                tuple(
                    _parse_prob_field(v, f"metric.distances[{i}][{j}]")
                    for j, v in enumerate(row)
                )
                for i, row in enumerate(rows)
            ),
        )
    else:
        raise InstanceError("metric.type must be 'proto' or 'general'")
    doctor_prefs = {d: tuple(o) for d, o in data["doctor_prefs"].items()}
    hospital_prefs: dict[str, HospitalPrefModel] = {}
    for h, raw in data["hospital_prefs"].items():
        kind = raw.get("type")
        where = f"hospital_prefs[{h}]"
        if kind == "deterministic":
            hospital_prefs[h] = DeterministicPrefs(tuple(raw["order"]))
        elif kind == "strict_if":
            hospital_prefs[h] = StrictIFPrefs(tuple(tuple(c) for c in raw["cluster_order"]))
        elif kind == "explicit":
            support = tuple(
                (
                    tuple(entry["order"]),
                    _parse_prob_field(entry["weight"], f"{where}.support[{k}].weight"),
                )
                for k, entry in enumerate(raw["support"])
            )
            total = sum((w for _, w in support), ZERO)
            if total != 1:
                raise InstanceError(
                    f"{where}: support weights sum to {format_fraction(total)}, not 1"
                )
            hospital_prefs[h] = ExplicitPrefs(support)
        else:
            raise InstanceError(f"{where}.type must be deterministic, strict_if, or explicit")
    return Instance(doctors, hospitals, metric, doctor_prefs, hospital_prefs)


def parse_instance(text: str) -> Instance:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceError(f"invalid JSON: {exc}") from exc
    return instance_from_json(data)


def allocation_to_json(
    md: MatchingDistribution, trace_rounds: int | None = None
) -> dict:
    matrix = md.marginals()
    out: dict[str, Any] = {
        "doctors": list(md.doctors),
        "hospitals": list(md.hospitals),
        "matchings": [
            {"weight": format_fraction(w), "map": {d: h for d, h in pairs}}
            for w, pairs in md.parts
        ],
        "marginals": [[format_fraction(v) for v in row] for row in matrix.rows],
    }
    if trace_rounds is not None:
        out["trace"] = {"rounds": trace_rounds}
    return out


def serialize_allocation(md: MatchingDistribution, trace_rounds: int | None = None) -> str:
    return json.dumps(allocation_to_json(md, trace_rounds), indent=2, sort_keys=True) + "\n"


def allocation_from_json(data: Mapping[str, Any]) -> MatchingDistribution:
    for key in ("doctors", "hospitals", "matchings"):
        if key not in data:
            raise InstanceError(f"missing field {key!r}")
    parts = []
    for k, entry in enumerate(data["matchings"]):
        weight = _parse_prob_field(entry.get("weight"), f"matchings[{k}].weight")
        parts.append((weight, dict(entry["map"])))
    try:
        return MatchingDistribution.from_parts(
            tuple(data["doctors"]), tuple(data["hospitals"]), parts
        )
    except ValueError as exc:
        raise InstanceError(str(exc)) from exc


def parse_allocation(text: str) -> MatchingDistribution:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceError(f"invalid JSON: {exc}") from exc
    return allocation_from_json(data)
