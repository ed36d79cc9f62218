from fractions import Fraction as F

import pytest

from fairmatch.core import (
    ExplicitPrefs,
    InstanceError,
    ProtoMetric,
    StrictIFPrefs,
    metric_as_proto,
    rank_distribution,
)
from fairmatch.fairness import check_mutual_replacement_if, validate_strict_if
from fairmatch.instances import (
    CATALOG_KEYS,
    build,
    parse_allocation,
    parse_instance,
    random_instance,
    serialize_allocation,
    serialize_instance,
    tilde_prefs,
)


def test_catalog_builds():
    for key in CATALOG_KEYS:
        if key.endswith("-alpha"):
            named = build(key, alpha=F(1, 2))
            assert named.expected["beta"] == 2
        else:
            named = build(key)
        assert named.instance.n >= 1


def test_unknown_key():
    with pytest.raises(InstanceError):
        build("no-such-instance")


def test_alpha_required():
    with pytest.raises(InstanceError):
        build("imposs-unfair-lahp-alpha")


def test_alpha_materializes_beta_extras():
    named = build("imposs-metric-lahp-alpha", alpha=F(1, 3))
    assert named.expected["beta"] == 3
    assert named.instance.n == 4 + 3
    case2 = named.expected["case2"]
    assert case2.doctor_prefs["j"][0] == "D"


def test_expected_artifacts_from_catalog():
    named = build("gs-doctor-compose")
    law = named.expected["distribution"]
    assert len(law.parts) == 2 and all(w == F(1, 2) for w, _ in law.parts)

    named = build("tilde-prefs")
    prefs = named.instance.hospital_prefs["h1"]
    assert rank_distribution(prefs, "d1")[0] == F(1, 2)
    assert named.expected["rank_matrix"][0] == (F(1, 2), F(1, 3), F(1, 6), F(0))

    named = build("algs-differ")
    assert named.expected["hospitals_first"].doctor_prospect("i2").mass == {
        "B": F(1, 4),
        "C": F(1, 4),
        "D": F(1, 2),
    }


def test_catalog_preference_fairness_audits():
    # Strict-IF instances validate; the deliberately unfair ones fail.
    for key in ("gs-doctor-compose", "gs-hospital-compose", "algs-differ", "not-optimal"):
        inst = build(key).instance
        proto = metric_as_proto(inst.metric)
        for h in inst.hospitals:
            assert validate_strict_if(inst.hospital_prefs[h], proto)
    for key in ("imposs-unfair-ladp", "imposs-unfair-lahp"):
        inst = build(key).instance
        proto = metric_as_proto(inst.metric)
        assert not all(
            validate_strict_if(inst.hospital_prefs[h], proto) for h in inst.hospitals
        )
        assert not all(
            check_mutual_replacement_if(inst.hospital_prefs[h], inst.metric).passed
            for h in inst.hospitals
        )
    for key in ("imposs-metric-ladp", "imposs-metric-lahp"):
        inst = build(key).instance
        for h in inst.hospitals:
            assert check_mutual_replacement_if(inst.hospital_prefs[h], inst.metric).passed


def test_tilde_swap_distances_are_exactly_one_third():
    prefs = tilde_prefs("d1", "d2", "d3", "d4")
    metric = build("tilde-prefs").instance.metric
    verdict = check_mutual_replacement_if(prefs, metric)
    assert verdict.passed
    # Tighten either bound below 1/3 and the check must fail.
    tighter = ProtoMetric(("d1", "d2", "d3", "d4"), (("d1", "d3"), ("d2", "d4")))
    assert not check_mutual_replacement_if(prefs, tighter).passed


def test_random_instance_deterministic():
    a = random_instance(5, None, seed=42)
    b = random_instance(5, None, seed=42)
    assert a == b
    c = random_instance(5, None, seed=43)
    assert a != c


def test_random_instance_trivial_and_valid():
    inst = random_instance(1, None, seed=1)
    assert inst.doctors == ("d0",)
    inst = random_instance(6, (2, 2, 2), seed=9)
    proto = metric_as_proto(inst.metric)
    for h in inst.hospitals:
        assert validate_strict_if(inst.hospital_prefs[h], proto)


def test_instance_round_trip():
    for key in CATALOG_KEYS:
        named = build(key, alpha=F(1, 2)) if key.endswith("-alpha") else build(key)
        text = serialize_instance(named.instance)
        assert parse_instance(text) == named.instance
        case2 = named.expected.get("case2")
        if case2 is not None:
            assert parse_instance(serialize_instance(case2)) == case2


def test_allocation_round_trip():
    named = build("gs-doctor-compose")
    law = named.expected["distribution"]
    assert parse_allocation(serialize_allocation(law)) == law


def test_metric_range_error():
    text = serialize_instance(build("tilde-prefs").instance).replace('"1/3"', '"3/2"', 1)
    with pytest.raises(InstanceError, match="metric.distances"):
        parse_instance(text)


def test_non_permutation_prefs_rejected():
    named = build("gs-doctor-compose")
    text = serialize_instance(named.instance).replace(
        '"doctor_prefs": {\n    "i1": [\n      "A",', '"doctor_prefs": {\n    "i1": [\n      "B",'
    )
    with pytest.raises(InstanceError):
        parse_instance(text)


def test_explicit_weight_sum_error():
    import json

    data = json.loads(serialize_instance(build("tilde-prefs").instance))
    data["hospital_prefs"]["h1"]["support"][0]["weight"] = "1/36"
    with pytest.raises(InstanceError, match="sum"):
        parse_instance(json.dumps(data))


def test_triangle_violation_named():
    named = build("tilde-prefs")
    import json

    data = json.loads(serialize_instance(named.instance))
    data["metric"]["distances"][0][1] = "1/100"
    data["metric"]["distances"][1][0] = "1/100"
    with pytest.raises(Exception, match="triangle"):
        parse_instance(json.dumps(data))
