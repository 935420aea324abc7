import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scmine.corpus import Corpus, Document
from scmine.metrics import (EvalReport, ModeComparisonReport, _pairwise_tests, average_precision,
                            compare_modes, evaluate_scores, hypothesis_table, rank_average,
                            roc_auc, wilcoxon)
from synth import address_for, solidity_corpus

SCORES = st.lists(st.integers(0, 6).map(float), min_size=2, max_size=25)
DISTINCT = st.lists(st.integers(-1000, 1000), min_size=2, max_size=20, unique=True).map(
    lambda v: [float(x) for x in v])


def auc_pairs(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    hits = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return hits / (len(pos) * len(neg))


def ap_thresholds(scores, labels):
    """Walk the distinct thresholds from the top, one at a time."""
    n_pos = sum(labels)
    total, prev_recall = 0.0, 0.0
    for t in sorted(set(scores), reverse=True):
        picked = [y for s, y in zip(scores, labels) if s >= t]
        recall = sum(picked) / n_pos
        total += (recall - prev_recall) * sum(picked) / len(picked)
        prev_recall = recall
    return total


def wilcoxon_enumeration(d, alternative):
    """p-value by listing every sign pattern of the non-zero |d| ranks."""
    d = [v for v in d if v != 0]
    ranks = rank_average(np.abs(d))
    w_obs = sum(r for r, v in zip(ranks, d) if v > 0)
    ws = [sum(r for r, s in zip(ranks, signs) if s)
          for signs in itertools.product((0, 1), repeat=len(d))]
    ge = sum(w >= w_obs - 1e-9 for w in ws) / len(ws)
    le = sum(w <= w_obs + 1e-9 for w in ws) / len(ws)
    return {"greater": ge, "less": le, "two_sided": min(1.0, 2 * min(ge, le))}[alternative]


class TestRocAuc:
    def test_example(self):
        assert roc_auc([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0]) == 0.75

    def test_perfect_and_ties(self):
        assert roc_auc([3, 2, 1], [1, 1, 0]) == 1.0
        assert roc_auc([0.4] * 6, [1, 0, 1, 0, 0, 1]) == 0.5

    def test_single_class(self):
        with pytest.raises(ValueError, match="AUC undefined"):
            roc_auc([0.1, 0.2], [1, 1])

    def test_bad_input(self):
        with pytest.raises(ValueError):
            roc_auc([0.1, 0.2], [0, 2])
        with pytest.raises(ValueError):
            roc_auc([0.1], [0, 1])

    @given(SCORES, st.data())
    def test_matches_pair_count(self, scores, data):
        labels = data.draw(st.lists(st.integers(0, 1), min_size=len(scores), max_size=len(scores)))
        if 0 < sum(labels) < len(labels):
            assert roc_auc(scores, labels) == pytest.approx(auc_pairs(scores, labels), abs=1e-12)

    @given(DISTINCT, st.data())
    def test_complement_and_monotone_transform(self, scores, data):
        labels = data.draw(st.lists(st.integers(0, 1), min_size=len(scores), max_size=len(scores)))
        if not 0 < sum(labels) < len(labels):
            return
        flipped = [1 - y for y in labels]
        assert roc_auc(scores, labels) + roc_auc(scores, flipped) == pytest.approx(1.0)
        assert roc_auc(np.array(scores) ** 3 + 7, labels) == roc_auc(scores, labels)


class TestAveragePrecision:
    def test_example(self):
        assert average_precision([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx(5 / 6, abs=1e-15)

    def test_positives_first(self):
        assert average_precision([5, 4, 3, 2], [1, 1, 0, 0]) == 1.0

    def test_ties_grouped(self):
        # one threshold holding everything: recall 1, precision 1/2
        assert average_precision([1, 1, 1, 1], [1, 0, 1, 0]) == 0.5

    def test_no_positives(self):
        with pytest.raises(ValueError):
            average_precision([0.1, 0.2], [0, 0])

    @given(SCORES, st.data())
    def test_matches_threshold_walk(self, scores, data):
        labels = data.draw(st.lists(st.integers(0, 1), min_size=len(scores), max_size=len(scores)))
        if sum(labels) == 0:
            return
        ap = average_precision(scores, labels)
        assert ap == pytest.approx(ap_thresholds(scores, labels), abs=1e-12)
        assert 0 <= ap <= 1

    @given(DISTINCT, st.data())
    def test_one_iff_positives_outrank(self, scores, data):
        labels = data.draw(st.lists(st.integers(0, 1), min_size=len(scores), max_size=len(scores)))
        if sum(labels) == 0:
            return
        pos = [s for s, y in zip(scores, labels) if y]
        neg = [s for s, y in zip(scores, labels) if not y]
        separated = not neg or min(pos) > max(neg)
        assert (abs(average_precision(scores, labels) - 1.0) < 1e-12) == separated
        assert average_precision(np.array(scores) * 3 + 1, labels) == average_precision(scores, labels)

    def test_random_baseline_near_prevalence(self):
        rng = np.random.default_rng(0)
        labels = np.array([1] * 30 + [0] * 70)
        aps = [average_precision(rng.random(100), labels) for _ in range(1000)]
        assert abs(np.mean(aps) - 0.3) <= 0.05


class TestWilcoxon:
    def test_five_positive(self):
        r = wilcoxon([1, 2, 3, 4, 5], [0, 0, 0, 0, 0])
        assert r.W_plus == 15 and r.method == "exact" and r.n_effective == 5
        assert r.p_value == pytest.approx(0.0625, abs=1e-15)
        assert wilcoxon([1, 2, 3, 4, 5], alternative="greater").p_value == pytest.approx(1 / 32)
        assert wilcoxon([1, 2, 3, 4, 5], alternative="less").p_value == 1.0

    def test_single_nonzero(self):
        r = wilcoxon([1, 2, 3, 4, 6], [1, 2, 3, 4, 5])
        assert r.n_effective == 1 and r.p_value == 1.0

    def test_all_zero(self):
        with pytest.raises(ValueError, match="no non-zero pairs"):
            wilcoxon([1, 2], [1, 2])

    def test_validation(self):
        with pytest.raises(ValueError):
            wilcoxon([1, 2], [1])
        with pytest.raises(ValueError):
            wilcoxon([1], alternative="bigger")
        with pytest.raises(ValueError):
            wilcoxon([])

    def test_matches_enumeration(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            n = int(rng.integers(1, 13))
            # small integer differences force ties and zeros
            d = rng.integers(-4, 5, size=n).astype(float)
            if not np.any(d):
                continue
            for alt in ("two_sided", "less", "greater"):
                got = wilcoxon(d, alternative=alt)
                assert got.method == "exact"
                assert got.p_value == pytest.approx(wilcoxon_enumeration(d, alt), abs=1e-12)

    def test_exact_and_normal_agree_at_cutover(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            d = rng.normal(0.3, 1.0, size=26)
            auto = wilcoxon(d)
            exact = wilcoxon(d, method="exact")
            assert auto.method == "normal_approx" and exact.method == "exact"
            assert abs(auto.p_value - exact.p_value) <= 0.01

    def test_large_n_uses_normal(self):
        d = np.arange(1, 41, dtype=float)
        r = wilcoxon(d, alternative="greater")
        assert r.method == "normal_approx" and r.p_value < 1e-6

    @settings(max_examples=100)
    @given(st.lists(st.integers(-5, 5), min_size=1, max_size=30))
    def test_result_ranges(self, d):
        if not any(d):
            return
        r = wilcoxon(d)
        n = r.n_effective
        assert 0 <= r.W_plus <= n * (n + 1) / 2
        assert 0 < r.p_value <= 1


def _corpus(pairs):
    return Corpus([Document(src, address_for(src), label) for label, src in pairs])


class TestEvaluation:
    def test_evaluate_scores(self):
        scores = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.3]])
        rep = evaluate_scores(scores, ["a", "b", "a"], ["a", "b"], mode="fc")
        assert rep.auc == {"a": 1.0, "b": 1.0}
        assert rep.positives == {"a": 2, "b": 1}
        assert rep.macro_auc == 1.0
        assert list(rep.rows())[0] == ["fc", 0, "", "a", 1.0, 1.0]

    def test_undefined_class_is_nan(self):
        rep = evaluate_scores(np.array([[0.5], [0.4]]), ["a", "a"], ["a"])
        assert math.isnan(rep.auc["a"]) and rep.ap["a"] == 1.0
        assert math.isnan(rep.macro_auc)


class TestCompareModes:
    @pytest.fixture(scope="class")
    @staticmethod
    def comment_corpus():
        return _corpus(solidity_corpus(["exchanges", "finance", "games"], 12, seed=5,
                                       code_signal=False))

    def test_aligned_samples(self, comment_corpus):
        rep = compare_modes(comment_corpus, ["oc", "ocom"], seeds=[0, 1], folds=3)
        assert rep.cells == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]
        assert all(len(v) == 6 for v in rep.auc.values())
        assert len(rep.tests) == 1 * 2 * 3
        assert np.mean(rep.auc["ocom"]) > np.mean(rep.auc["oc"])

    def test_parallel_matches_serial(self, comment_corpus):
        a = compare_modes(comment_corpus, ["oc", "ocom"], seeds=[3], folds=3)
        b = compare_modes(comment_corpus, ["oc", "ocom"], seeds=[3], folds=3, n_jobs=4)
        assert a.auc == b.auc and a.ap == b.ap and a.tests == b.tests


    def test_unlabeled_rejected(self):
        with pytest.raises(ValueError):
            compare_modes(Corpus([Document("contract A {}")]), ["fc"], seeds=[0])


class TestHypothesisTable:
    def _report(self, a, b):
        rep = ModeComparisonReport(modes=["x", "y"], seeds=[0], folds=1, cells=[],
                                   auc={"x": a, "y": b}, ap={"x": a, "y": b})
        rep.tests = _pairwise_tests(rep.modes, {"auc": rep.auc, "ap": rep.ap})
        return rep

    def test_clear_winner(self):
        rows = hypothesis_table(self._report([0.9] * 8, [0.5 + 0.01 * i for i in range(8)]))
        # x beats y everywhere: "x < y" is rejected, "x > y" survives
        assert {r["h0"] for r in rows} == {"x>y"}
        assert all(not r["rejected"] and r["p"] == 1.0 for r in rows)

    def test_identical_samples_reported_equal(self):
        rep = self._report([0.7, 0.8, 0.9], [0.7, 0.8, 0.9])
        assert all(t["method"] == "equal" and t["p"] == 1.0 for t in rep.tests)
        assert all(r["h0"] == "x=y" and not r["rejected"] for r in hypothesis_table(rep))

    def test_no_difference_survives(self):
        rows = hypothesis_table(self._report([0.1, 0.9, 0.2, 0.8], [0.9, 0.1, 0.8, 0.2]))
        assert all(not r["rejected"] for r in rows)


def test_eval_report_dataclass_fields():
    rep = EvalReport("fc", "l2", 1, "2", ["a"], {"a": 0.5}, {"a": 0.5}, {"a": 1})
    assert rep.macro_ap == 0.5
