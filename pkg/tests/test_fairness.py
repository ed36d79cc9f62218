import random
from fractions import Fraction as F

from hypothesis import given, settings
from hypothesis import strategies as st

from fairmatch.core import (
    AllocationMatrix,
    DeterministicPrefs,
    Dominance,
    ExplicitPrefs,
    GeneralMetric,
    ProtoMetric,
    Prospect,
    StrictIFPrefs,
    dominates,
)
from fairmatch.fairness import (
    check_ef,
    check_if,
    check_mutual_replacement_if,
    check_piif,
    check_rank_if,
    check_tau_piif,
    piif_deficit,
    validate_strict_if,
)
from fairmatch.instances import build, tilde_prefs

from oracles import lp_piif_deficit, random_prospect

ABCD = ("A", "B", "C", "D")


def matrix(doctors, hospitals, rows):
    return AllocationMatrix(
        tuple(doctors), tuple(hospitals), tuple(tuple(F(v) for v in row) for row in rows)
    )


def two_doc_matrix(p_i, p_j, hospitals=ABCD):
    rows = [
        [p_i.get(h) for h in hospitals],
        [p_j.get(h) for h in hospitals],
    ]
    return AllocationMatrix(("i", "j"), tuple(hospitals), tuple(tuple(r) for r in rows))


class TestPiifDeficit:
    def test_equal_prospects(self):
        p = Prospect("hospitals", {"A": F(1, 2), "B": F(1, 2)})
        m = two_doc_matrix(p, p)
        assert piif_deficit(m, "i", "j", ABCD) == 0

    def test_intro_counterexample(self):
        p_i = Prospect("hospitals", {"B": F(1)})
        p_j = Prospect("hospitals", {"A": F(1, 2), "C": F(1, 2)})
        m = two_doc_matrix(p_i, p_j, ("A", "B", "C"))
        assert piif_deficit(m, "i", "j", ("A", "B", "C")) == F(1, 2)

    def test_against_lp_oracle_fixture(self):
        p_i = Prospect("hospitals", {"A": F(2, 5), "B": F(1, 5), "C": F(2, 5)})
        p_j = Prospect("hospitals", {"A": F(1, 5), "B": F(2, 5), "C": F(1, 5), "D": F(1, 5)})
        m = two_doc_matrix(p_j, p_i)  # deficit of the pair (j, i)
        assert piif_deficit(m, "i", "j", ABCD) == F(1, 5)
        assert lp_piif_deficit(p_j, p_i, ABCD) == F(1, 5)

    def test_zero_deficit_iff_domination(self):
        rng = random.Random(5)
        for _ in range(60):
            p = random_prospect(rng, ABCD)
            q = random_prospect(rng, ABCD)
            m = two_doc_matrix(p, q)
            deficit = piif_deficit(m, "i", "j", ABCD)
            assert (deficit == 0) == (dominates(p, q, ABCD) is not Dominance.NO)

    def test_closed_form_matches_lp_oracle(self):
        rng = random.Random(11)
        for _ in range(40):
            p = random_prospect(rng, ABCD)
            q = random_prospect(rng, ABCD)
            m = two_doc_matrix(p, q)
            assert piif_deficit(m, "i", "j", ABCD) == lp_piif_deficit(p, q, ABCD)


class TestCheckIf:
    def test_uniform_allocation_passes(self):
        n = 3
        rows = [[F(1, 3)] * n for _ in range(n)]
        m = matrix(("a", "b", "c"), ("x", "y", "z"), rows)
        metric = GeneralMetric(("a", "b", "c"), tuple(
            tuple(F(0) if i == j else F(1, 5) for j in range(3)) for i in range(3)
        ))
        assert check_if(m, metric).passed

    def test_tv_gap_fixture(self):
        # Prospects at TV distance 2/5 against a 1/5 metric bound.
        p_i = Prospect("hospitals", {"A": F(2, 5), "B": F(1, 5), "C": F(2, 5)})
        p_j = Prospect("hospitals", {"A": F(1, 5), "B": F(2, 5), "C": F(1, 5), "D": F(1, 5)})
        m = two_doc_matrix(p_i, p_j)
        metric = GeneralMetric(("i", "j"), ((F(0), F(1, 5)), (F(1, 5), F(0))))
        verdict = check_if(m, metric)
        assert not verdict.passed
        assert (verdict.witness.i, verdict.witness.j) == ("i", "j")
        assert verdict.witness.value == F(2, 5)
        assert verdict.witness.bound == F(1, 5)
        # The same pair satisfies the preference-informed relaxation: a
        # deformation within the 1/5 budget exists (LP-confirmed above).
        assert check_piif(m, metric, {"i": ABCD, "j": ABCD}).passed

    def test_same_cluster_different_prospects_fail(self):
        p_i = Prospect("hospitals", {"A": F(1)})
        p_j = Prospect("hospitals", {"B": F(1)})
        m = two_doc_matrix(p_i, p_j)
        metric = ProtoMetric(("i", "j"), (("i", "j"),))
        assert not check_if(m, metric).passed


class TestCheckEf:
    def test_top_choice_permutation(self):
        m = matrix(("a", "b"), ("x", "y"), [[1, 0], [0, 1]])
        assert check_ef(m, {"a": ("x", "y"), "b": ("y", "x")}).passed

    def test_serial_procedure_output_is_envy_free(self):
        rows = [
            [F(1, 2), F(1, 4), F(1, 4)],
            [F(1, 2), F(0), F(1, 2)],
            [F(0), F(3, 4), F(1, 4)],
        ]
        m = matrix(("a", "b", "c"), ("l1", "l2", "l3"), rows)
        prefs = {"a": ("l1", "l2", "l3"), "b": ("l1", "l3", "l2"), "c": ("l2", "l1", "l3")}
        assert check_ef(m, prefs).passed

    def test_envy_detected(self):
        p_i = Prospect("hospitals", {"B": F(1)})
        p_j = Prospect("hospitals", {"A": F(1)})
        m = two_doc_matrix(p_i, p_j, ("A", "B"))
        verdict = check_ef(m, {"i": ("A", "B"), "j": ("A", "B")})
        assert not verdict.passed
        assert (verdict.witness.i, verdict.witness.j) == ("i", "j")


class TestCheckPiif:
    def test_all_ones_metric_always_passes(self):
        p_i = Prospect("hospitals", {"A": F(1)})
        p_j = Prospect("hospitals", {"D": F(1)})
        m = two_doc_matrix(p_i, p_j)
        metric = GeneralMetric(("i", "j"), ((F(0), F(1)), (F(1), F(0))))
        assert check_piif(m, metric, {"i": ABCD, "j": ABCD}).passed

    def test_sampled_gs_output_fails(self):
        ni = build("gs-doctor-compose")
        from fairmatch.mechanisms import compose_sample_gs

        md = compose_sample_gs(ni.instance, "doctors")
        verdict = check_piif(md, ni.instance.metric, ni.instance.doctor_prefs)
        assert not verdict.passed
        assert (verdict.witness.i, verdict.witness.j) == ("i1", "i2")
        # tau = 1/2 absorbs the deficit exactly
        assert check_tau_piif(
            md, ni.instance.metric, ni.instance.doctor_prefs, F(1, 2)
        ).passed
        assert not check_tau_piif(
            md, ni.instance.metric, ni.instance.doctor_prefs, F(127, 256)
        ).passed

    def test_proto_specialization_matches_domination(self):
        # Under a proto-metric, PIIF must agree with within-cluster weak
        # domination pair by pair.
        rng = random.Random(23)
        doctors = ("a", "b", "c", "d")
        metric = ProtoMetric(doctors, (("a", "b"), ("c", "d")))
        prefs = {d: tuple(rng.sample(ABCD, 4)) for d in doctors}
        for _ in range(40):
            prospects = {}
            for d in doctors:
                prospects[d] = random_prospect(rng, ABCD)
            try:
                m = AllocationMatrix(
                    doctors, ABCD, tuple(tuple(prospects[d].get(h) for h in ABCD) for d in doctors)
                )
            except ValueError:
                continue  # column sums exceeded 1; not an allocation
            expected = all(
                dominates(prospects[i], prospects[j], prefs[i]) is not Dominance.NO
                for cluster in metric.clusters
                for i in cluster
                for j in cluster
                if i != j
            )
            assert check_piif(m, metric, prefs).passed == expected


class TestPreferenceFairness:
    def test_uniform_pair_is_strictly_fair(self):
        metric = ProtoMetric(("i1", "i2", "j"), (("i1", "i2"), ("j",)))
        prefs = ExplicitPrefs(
            (
                (("i1", "i2", "j"), F(1, 2)),
                (("i2", "i1", "j"), F(1, 2)),
            )
        )
        assert validate_strict_if(prefs, metric)

    def test_interleaved_is_not_strictly_fair(self):
        metric = ProtoMetric(("i1", "i2", "j", "k"), (("i1", "i2"), ("j",), ("k",)))
        prefs = ExplicitPrefs(
            (
                (("i1", "j", "i2", "k"), F(1, 2)),
                (("i2", "j", "i1", "k"), F(1, 2)),
            )
        )
        assert not validate_strict_if(prefs, metric)
        # ... but it is rank-fair: the graded pair shares a rank distribution.
        assert check_rank_if(prefs, metric).passed

    def test_deterministic_with_nonsingleton_cluster(self):
        metric = ProtoMetric(("i1", "i2"), (("i1", "i2"),))
        prefs = DeterministicPrefs(("i1", "i2"))
        assert not validate_strict_if(prefs, metric)
        assert not check_rank_if(prefs, metric).passed

    def test_mutual_replacement_symmetric_prefs(self):
        metric = ProtoMetric(("i1", "i2"), (("i1", "i2"),))
        prefs = ExplicitPrefs(
            (
                (("i1", "i2"), F(1, 2)),
                (("i2", "i1"), F(1, 2)),
            )
        )
        assert check_mutual_replacement_if(prefs, metric).passed

    def test_mutual_replacement_tilde_distribution(self):
        ni = build("tilde-prefs")
        prefs = ni.instance.hospital_prefs["h1"]
        assert check_mutual_replacement_if(prefs, ni.instance.metric).passed

    def test_mutual_replacement_violation(self):
        metric = ProtoMetric(("i1", "i2", "j", "k"), (("i1", "i2"), ("j",), ("k",)))
        prefs = ExplicitPrefs(
            (
                (("i1", "k", "i2", "j"), F(1, 2)),
                (("i2", "j", "i1", "k"), F(1, 2)),
            )
        )
        verdict = check_mutual_replacement_if(prefs, metric)
        assert not verdict.passed
        assert (verdict.witness.i, verdict.witness.j) == ("i1", "i2")

    def test_strict_if_model_passes_rank_if(self):
        metric = ProtoMetric(("a", "b", "c"), (("a", "b"), ("c",)))
        prefs = StrictIFPrefs((("a", "b"), ("c",)))
        assert validate_strict_if(prefs, metric)
        assert check_rank_if(prefs, metric).passed


def test_fairness_implication_chain_on_random_models():
    # strict-IF => rank-IF => mutual-replacement restricted to same-cluster
    # pairs passes (for proto-metrics, where those bounds are the binding ones).
    from oracles import expand_strict_if

    rng = random.Random(31)
    doctors = ("a", "b", "c", "d")
    metric = ProtoMetric(doctors, (("a", "b"), ("c", "d")))
    for clusters in ((("a", "b"), ("c", "d")), (("c", "d"), ("a", "b"))):
        prefs = expand_strict_if(StrictIFPrefs(clusters))
        assert validate_strict_if(prefs, metric)
        assert check_rank_if(prefs, metric).passed
        assert check_mutual_replacement_if(prefs, metric).passed
