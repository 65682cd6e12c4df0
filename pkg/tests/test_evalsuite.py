import math
import random

import numpy as np
import pytest

from oracles import (
    brute_ks_d,
    brute_motif_counts,
    decimal_trend_metrics,
    instability_index_reference,
)
from silkforge.errors import (
    ConfigError,
    EmptyInputError,
    LengthError,
    TooShortError,
    ValidationError,
)
from silkforge.evalsuite import (
    MOTIF_NAMES,
    PROPERTY_COLUMNS,
    RepeatValidity,
    aa_distribution,
    correlation_tsv,
    count_motifs,
    feature_property_correlation,
    hamming_distance,
    instability_index,
    isoelectric_point,
    kl_divergence,
    ks_two_sample,
    molecular_weight,
    net_charge,
    physchem_report,
    repeat_validity,
    spearman,
    ss_fractions,
    trend_metrics,
)
from silkforge.seqdata import MASP_BACKGROUND

SIGMA = "ARNDCQEGHILKMFPSTWYV"


def random_seq(rng, lo=1, hi=60):
    return "".join(rng.choice(SIGMA) for _ in range(rng.randint(lo, hi)))


class TestMotifs:
    def test_ggx_non_overlapping(self):
        rep = count_motifs("GGAGGA")
        assert rep.counts["GGX"] == 2
        assert rep.coverages["GGX"] == 1.0

    def test_polya_maximal_run(self):
        rep = count_motifs("AAAAA")
        assert rep.counts["polyA"] == 1
        assert rep.coverages["polyA"] == 1.0

    def test_polya_run_boundaries(self):
        rep = count_motifs("AAGAAAGAAAA")
        assert rep.counts["polyA"] == 2  # runs of 3 and 4; the leading AA is too short
        assert rep.coverages["polyA"] == 7 / 11

    def test_ygqgg_literal(self):
        rep = count_motifs("YGQGGYGQGG")
        assert rep.counts["YGQGG"] == 2
        assert rep.coverages["YGQGG"] == 1.0

    def test_gpgxx_any_two(self):
        rep = count_motifs("GPGQQGPGAA")
        assert rep.counts["GPGXX"] == 2

    def test_matches_brute_force_oracle(self):
        rng = random.Random(101)
        # biased alphabet so motifs actually occur
        pool = "AAAGGGGGQQPYSV" + SIGMA
        for _ in range(1000):
            s = "".join(rng.choice(pool) for _ in range(rng.randint(1, 90)))
            got = count_motifs(s)
            expected = brute_motif_counts(s)
            for name in MOTIF_NAMES:
                count, coverage = expected[name]
                assert got.counts[name] == count, (name, s)
                assert abs(got.coverages[name] - coverage) < 1e-15, (name, s)


class TestKl:
    def test_identical_is_zero(self):
        p = dict(MASP_BACKGROUND.probs)
        assert kl_divergence(p, MASP_BACKGROUND) == 0.0

    def test_hand_value(self):
        got = kl_divergence({"A": 0.5, "G": 0.5}, {"A": 0.25, "G": 0.75})
        assert abs(got - 0.2075) < 1e-4

    def test_non_negative(self):
        rng = random.Random(3)
        for _ in range(100):
            p = aa_distribution(random_seq(rng, 5, 80))
            assert kl_divergence(p, MASP_BACKGROUND) >= -1e-12

    def test_near_zero_background_does_not_blow_up(self):
        # C has background 0.0002; W 0.0002; an all-C sequence stays finite
        val = kl_divergence(aa_distribution("CCCC"), MASP_BACKGROUND)
        assert math.isfinite(val) and val > 0


class TestHamming:
    def test_equal(self):
        assert hamming_distance("AAA", "AAA") == 0

    def test_one_diff(self):
        assert hamming_distance("AAA", "AAG") == 1

    def test_unequal_lengths(self):
        with pytest.raises(LengthError):
            hamming_distance("AA", "AAA")


class TestMolecularWeight:
    def test_glycine(self):
        assert abs(molecular_weight("G") - 75.07) < 0.01

    def test_diglycine(self):
        assert abs(molecular_weight("GG") - 132.12) < 0.01

    def test_monotone_in_appending(self):
        rng = random.Random(5)
        for _ in range(40):
            s = random_seq(rng, 1, 30)
            assert molecular_weight(s + rng.choice(SIGMA)) > molecular_weight(s)

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            molecular_weight("")


class TestIsoelectricPoint:
    def test_charge_at_root_is_tiny(self):
        rng = random.Random(7)
        for _ in range(25):
            s = random_seq(rng, 2, 50)
            assert abs(net_charge(s, isoelectric_point(s))) < 1e-4

    def test_no_ionizable_side_chains_analytic(self):
        # only termini ionize: root is exactly the mean of the terminal pKs
        for s in ("G" * 10, "GAGAGA", "PPPP", "SSSS"):
            assert abs(isoelectric_point(s) - (7.5 + 3.55) / 2) < 1e-3

    def test_adding_lysine_never_decreases(self):
        rng = random.Random(9)
        for _ in range(15):
            s = random_seq(rng, 3, 30)
            assert isoelectric_point(s + "K") >= isoelectric_point(s) - 1e-3

    def test_tolerance_stability(self):
        s = "GGKDDYG"
        assert abs(isoelectric_point(s, 1e-4) - isoelectric_point(s, 1e-6)) < 1e-3


class TestInstabilityIndex:
    def test_length_two_formula(self):
        assert instability_index("AG") == pytest.approx(5.0)  # 5 * DIWV(A,G)=1
        assert instability_index("CD") == pytest.approx(5 * 20.26)

    def test_repeated_dipeptide_closed_form(self):
        # (AG)^n: n AG terms (weight 1.0) and n-1 GA terms (weight -7.49)
        for n in (2, 5, 20, 100):
            s = "AG" * n
            expected = 10.0 / (2 * n) * (n * 1.0 + (n - 1) * -7.49)
            assert instability_index(s) == pytest.approx(expected, abs=1e-9)

    def test_matches_independent_reference(self):
        rng = random.Random(11)
        for _ in range(20):
            s = random_seq(rng, 2, 120)
            assert instability_index(s) == pytest.approx(
                instability_index_reference(s), abs=1e-6)

    def test_too_short(self):
        with pytest.raises(TooShortError):
            instability_index("A")


class TestSsFractions:
    def test_pure_helix(self):
        assert ss_fractions("VVVV") == (1.0, 0.0, 0.0)

    def test_neither_set(self):
        assert ss_fractions("PPPP") == (0.0, 0.0, 1.0)

    def test_leucine_in_both(self):
        helix, sheet, other = ss_fractions("LLLL")
        assert helix == 1.0 and sheet == 1.0 and other == 0.0

    def test_overlap_bound(self):
        rng = random.Random(13)
        for _ in range(60):
            helix, sheet, other = ss_fractions(random_seq(rng, 1, 60))
            assert helix + other <= 1 + sheet + 1e-12


class TestRepeatValidity:
    REPEAT = "AAAA" + "GGAGGQGGY" * 6 + "AAAA"
    LOWAG = "LSEQNVKDITR" * 14  # no A/G at all

    def test_pure_repeat_valid(self):
        assert repeat_validity(self.REPEAT) is RepeatValidity.VALID

    def test_prefix_flagged(self):
        seq = self.LOWAG[:150] + self.REPEAT
        assert repeat_validity(seq) is RepeatValidity.PREFIX_FLAGGED

    def test_suffix_flagged_by_symmetry(self):
        seq = self.LOWAG[:150] + self.REPEAT
        assert repeat_validity(seq[::-1]) is RepeatValidity.SUFFIX_FLAGGED

    def test_both_flagged(self):
        seq = self.LOWAG[:120] + self.REPEAT + self.LOWAG[:120]
        assert repeat_validity(seq) is RepeatValidity.BOTH_FLAGGED

    def test_all_low_density(self):
        assert repeat_validity(self.LOWAG) is RepeatValidity.BOTH_FLAGGED

    def test_window_too_large(self):
        with pytest.raises(ConfigError):
            repeat_validity("AAAA", window=30)


class TestTrendMetrics:
    def test_perfect_prediction(self):
        ref = [[0.1, 0.2], [0.3, 0.4], [0.5, 0.9]]
        rep = trend_metrics(ref, ref)
        assert rep.pearson_r == pytest.approx(1.0)
        assert rep.spearman_rho == pytest.approx(1.0)
        assert rep.mae == 0.0 and rep.rmse == 0.0
        assert rep.r_squared == pytest.approx(1.0)
        assert rep.cosine == pytest.approx(1.0)

    def test_constant_mean_prediction_r2_zero(self):
        ref = np.array([[1.0], [2.0], [3.0]])
        pred = np.full_like(ref, ref.mean())
        rep = trend_metrics(pred, ref)
        assert rep.r_squared == pytest.approx(0.0)
        assert rep.pearson_r is None  # zero variance in the prediction

    def test_anti_correlated(self):
        ref = np.array([[1.0], [2.0], [3.0], [4.0]])
        pred = -(ref - ref.mean()) + ref.mean()
        rep = trend_metrics(pred, ref)
        assert rep.pearson_r == pytest.approx(-1.0)

    def test_mae_le_rmse(self):
        rng = random.Random(17)
        for _ in range(50):
            n = rng.randint(2, 30)
            pred = [[rng.uniform(-5, 5)] for _ in range(n)]
            ref = [[rng.uniform(-5, 5)] for _ in range(n)]
            rep = trend_metrics(pred, ref)
            assert rep.mae <= rep.rmse + 1e-12

    def test_pearson_equals_spearman_on_linear(self):
        xs = [[float(i)] for i in range(10)]
        ys = [[2.0 * i + 1.0] for i in range(10)]
        rep = trend_metrics(xs, ys)
        assert rep.pearson_r == pytest.approx(rep.spearman_rho)
        assert rep.pearson_r == pytest.approx(1.0)

    def test_matches_decimal_oracle(self):
        rng = random.Random(19)
        for _ in range(20):
            n = rng.randint(2, 15)
            m = rng.randint(1, 4)
            pred = [[rng.uniform(0, 3) for _ in range(m)] for _ in range(n)]
            ref = [[rng.uniform(0, 3) for _ in range(m)] for _ in range(n)]
            rep = trend_metrics(pred, ref).to_dict()
            expected = decimal_trend_metrics(pred, ref)
            for key, want in expected.items():
                assert rep[key] == pytest.approx(want, abs=1e-10), key

    def test_shape_mismatch(self):
        with pytest.raises(LengthError):
            trend_metrics([[1.0]], [[1.0], [2.0]])

    def test_needs_two_rows(self):
        with pytest.raises(ValidationError):
            trend_metrics([[1.0]], [[1.0]])

    def test_spearman_tie_handling(self):
        rho = spearman([1.0, 1.0, 2.0], [3.0, 3.0, 4.0])
        assert rho == pytest.approx(1.0)


class TestKsTwoSample:
    def test_identical_samples(self):
        d, p = ks_two_sample([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert d == 0.0 and p == 1.0

    def test_disjoint_samples(self):
        d, p = ks_two_sample([0.0, 0.0, 0.0], [1.0, 1.0, 1.0])
        assert d == 1.0 and p < 0.5

    def test_matches_brute_force(self):
        rng = random.Random(23)
        for _ in range(100):
            a = [rng.uniform(0, 1) for _ in range(rng.randint(1, 20))]
            b = [rng.uniform(0, 1) for _ in range(rng.randint(1, 20))]
            d, _ = ks_two_sample(a, b)
            assert d == pytest.approx(brute_ks_d(a, b), abs=1e-12)

    def test_monotone_transform_invariance(self):
        rng = random.Random(29)
        a = [rng.gauss(0, 1) for _ in range(40)]
        b = [rng.gauss(0.4, 1.2) for _ in range(30)]
        d1, p1 = ks_two_sample(a, b)
        d2, p2 = ks_two_sample([math.exp(x) for x in a], [math.exp(x) for x in b])
        assert d1 == pytest.approx(d2, abs=1e-12)
        assert p1 == pytest.approx(p2, abs=1e-12)

    def test_empty_sample(self):
        with pytest.raises(EmptyInputError):
            ks_two_sample([], [1.0])


class TestFeaturePropertyCorrelation:
    def test_identical_feature_gives_one(self):
        rng = random.Random(31)
        seqs, props = [], []
        for _ in range(30):
            y = rng.randint(0, 4)
            seqs.append("YGQGG" * y + "GGA" * rng.randint(1, 6) + "AAA")
            count = count_motifs(seqs[-1]).counts["YGQGG"]
            props.append([float(count), 1.0, 1.0, 1.0])
        labels, matrix = feature_property_correlation(seqs, props)
        cell = matrix[labels.index("YGQGG_count")][PROPERTY_COLUMNS.index("toughness")]
        assert cell == pytest.approx(1.0)

    def test_shape(self):
        seqs = ["GGAGGA", "AAAA", "YGQGGSV"]
        props = [[1.0, 2.0, 3.0, 4.0]] * 3
        labels, matrix = feature_property_correlation(seqs, props)
        assert matrix.shape == (14, 4)
        assert len(labels) == 14

    def test_shuffled_property_near_zero(self):
        from silkforge.synthetic import build_repeat_corpus
        rng = random.Random(0)
        seqs = build_repeat_corpus(1000, 0)
        counts = [float(count_motifs(s).counts["YGQGG"]) for s in seqs]
        shuffled = counts[:]
        rng.shuffle(shuffled)
        props = [[c, 1.0, 1.0, 1.0] for c in shuffled]
        labels, matrix = feature_property_correlation(seqs, props)
        cell = matrix[labels.index("YGQGG_count")][0]
        assert abs(cell) < 0.1

    def test_zero_variance_marker_and_tsv(self):
        seqs = ["GGAGGA", "GGAGGA", "GGAGGA"]
        props = [[1.0, 1.0, 1.0, 1.0], [2.0, 1.0, 1.0, 1.0], [3.0, 1.0, 1.0, 1.0]]
        labels, matrix = feature_property_correlation(seqs, props)
        assert np.isnan(matrix).all()  # constant features -> undefined cells
        text = correlation_tsv(labels, matrix)
        assert "NA" in text and text.count("\n") == 15


class TestPhyschemReport:
    def test_composition_sums_to_one(self):
        rng = random.Random(37)
        for _ in range(20):
            rep = physchem_report(random_seq(rng, 2, 80))
            assert sum(rep.aa_composition.values()) == pytest.approx(1.0, abs=1e-9)
            assert sum(rep.grouped_composition.values()) == pytest.approx(1.0, abs=1e-9)
            for frac in (rep.ss_helix, rep.ss_sheet, rep.ss_other):
                assert 0.0 <= frac <= 1.0
