import numpy as np
import pytest
from scipy.special import expit

from multiplexgcn import ingest, model
from multiplexgcn.metrics import (ClassifierModel, LinkEvalResult,
                                  ScoredPairSet, evaluate_links,
                                  evaluate_nodes, f1_binary, fit_logistic,
                                  macro_micro_f1, pooled_link_auc, pr_auc,
                                  predict, predict_proba, roc_auc,
                                  summary_rows, write_metrics_report)

from conftest import random_multiplex_graph


# --------------------------------------------------------------------------
# Brute-force oracles (independent of the implementations under test)

def auc_pair_counting(scores, labels):
    """O(P*N) comparison of every positive/negative pair."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    pos = scores[labels]
    neg = scores[~labels]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def ap_threshold_sweep(scores, labels):
    """Average precision by explicit confusion counts at every distinct
    threshold, descending."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    total_pos = labels.sum()
    ap = 0.0
    prev_recall = 0.0
    for t in sorted(set(scores), reverse=True):
        pred = scores >= t
        tp = np.sum(pred & labels)
        precision = tp / pred.sum()
        recall = tp / total_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def f1_confusion(scores, labels, threshold=0.0):
    pred = np.asarray(scores, dtype=float) >= threshold
    labels = np.asarray(labels, dtype=bool)
    tp = np.sum(pred & labels)
    fp = np.sum(pred & ~labels)
    fn = np.sum(~pred & labels)
    return 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)


def per_class_confusion_f1(pred, true):
    classes = sorted(set(pred) | set(true))
    f1s = {}
    for c in classes:
        tp = sum(1 for p, t in zip(pred, true) if p == c and t == c)
        fp = sum(1 for p, t in zip(pred, true) if p == c and t != c)
        fn = sum(1 for p, t in zip(pred, true) if p != c and t == c)
        f1s[c] = 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)
    return f1s


def random_scored_instance(rng, size):
    scores = rng.standard_normal(size)
    if rng.random() < 0.3:  # inject ties
        scores = np.round(scores, 1)
    labels = rng.random(size) < rng.uniform(0.2, 0.8)
    if not labels.any():
        labels[0] = True
    if labels.all():
        labels[0] = False
    return scores, labels


class TestRocAuc:
    def test_perfect_ranking(self):
        assert roc_auc([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]) == 1.0

    def test_all_ties_half(self):
        assert roc_auc([0.5] * 6, [1, 0, 1, 0, 1, 0]) == 0.5

    def test_matches_pair_counting_oracle(self):
        rng = np.random.default_rng(120)
        for _ in range(30):
            scores, labels = random_scored_instance(rng, 200)
            expected = auc_pair_counting(scores, labels)
            assert roc_auc(scores, labels) == pytest.approx(expected,
                                                            abs=1e-12)

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(121)
        scores, labels = random_scored_instance(rng, 80)
        base = roc_auc(scores, labels)
        assert roc_auc(np.exp(scores), labels) == pytest.approx(base,
                                                                abs=1e-12)
        assert roc_auc(3.0 * scores + 7.0, labels) == pytest.approx(
            base, abs=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            roc_auc([0.1, 0.2], [1, 1])


class TestPrAuc:
    def test_perfect_ranking(self):
        assert pr_auc([0.9, 0.8, 0.3], [1, 1, 0]) == 1.0

    def test_one_positive_ranked_last(self):
        for k in (1, 3, 9):
            scores = np.arange(k + 1, dtype=float)
            labels = np.zeros(k + 1, dtype=bool)
            labels[0] = True  # lowest score is the only positive
            assert pr_auc(scores, labels) == pytest.approx(1.0 / (k + 1),
                                                           abs=1e-12)

    def test_matches_threshold_sweep_oracle(self):
        rng = np.random.default_rng(122)
        for _ in range(30):
            scores, labels = random_scored_instance(rng, 150)
            expected = ap_threshold_sweep(scores, labels)
            assert pr_auc(scores, labels) == pytest.approx(expected,
                                                           abs=1e-12)

    def test_node_id_relabeling_invariance(self):
        rng = np.random.default_rng(123)
        scores, labels = random_scored_instance(rng, 60)
        perm = rng.permutation(60)
        assert pr_auc(scores[perm], labels[perm]) == pytest.approx(
            pr_auc(scores, labels), abs=1e-12)


class TestF1Binary:
    def test_all_correct(self):
        assert f1_binary([5.0, 4.0, -4.0, -5.0], [1, 1, 0, 0]) == 1.0

    def test_no_predicted_positives(self):
        assert f1_binary([-1.0, -2.0, -3.0], [1, 0, 1]) == 0.0

    def test_matches_confusion_oracle(self):
        rng = np.random.default_rng(124)
        for _ in range(30):
            scores, labels = random_scored_instance(rng, 100)
            assert f1_binary(scores, labels) == f1_confusion(scores, labels)

    def test_threshold_on_sigmoid(self):
        # sigmoid(score) >= 0.5 exactly when score >= 0
        scores = np.array([-1e-9, 0.0, 1e-9])
        labels = np.array([0, 1, 1])
        assert f1_binary(scores, labels) == f1_confusion(scores, labels)
        assert expit(0.0) == 0.5


class TestMacroMicroF1:
    def test_perfect(self):
        assert macro_micro_f1([0, 1, 2], [0, 1, 2]) == (1.0, 1.0)

    def test_micro_equals_accuracy(self):
        rng = np.random.default_rng(125)
        for _ in range(20):
            true = rng.integers(0, 4, size=50)
            pred = rng.integers(0, 4, size=50)
            _, micro = macro_micro_f1(pred, true)
            assert micro == pytest.approx(np.mean(pred == true), abs=1e-12)

    def test_matches_per_class_confusion_oracle(self):
        rng = np.random.default_rng(126)
        for _ in range(30):
            true = rng.integers(0, 3, size=40)
            pred = rng.integers(0, 3, size=40)
            macro, _ = macro_micro_f1(pred, true)
            oracle = per_class_confusion_f1(list(pred), list(true))
            assert macro == pytest.approx(np.mean(list(oracle.values())),
                                          abs=1e-12)

    def test_class_permutation_symmetry(self):
        rng = np.random.default_rng(127)
        true = rng.integers(0, 3, size=30)
        pred = rng.integers(0, 3, size=30)
        mapping = np.array([2, 0, 1])
        macro_a, _ = macro_micro_f1(pred, true)
        macro_b, _ = macro_micro_f1(mapping[pred], mapping[true])
        assert macro_a == pytest.approx(macro_b, abs=1e-12)

    def test_absent_class_excluded_from_macro(self):
        # classes 0 and 1 appear; class 7 in neither pred nor truth
        macro, _ = macro_micro_f1([0, 0, 1], [0, 1, 1])
        oracle = per_class_confusion_f1([0, 0, 1], [0, 1, 1])
        assert set(oracle) == {0, 1}
        assert macro == pytest.approx(np.mean(list(oracle.values())))


class TestEvaluateLinks:
    def make_split_and_embeddings(self, seed=130):
        rng = np.random.default_rng(seed)
        g = random_multiplex_graph(rng, n=26, num_edge_types=2,
                                   feature_dim=3, edge_prob=0.3)
        split = ingest.split_links(g, seed=seed)
        h = rng.standard_normal((g.n, 6))
        return g, split, h

    def test_single_type_average_is_identity(self):
        rng = np.random.default_rng(131)
        g = random_multiplex_graph(rng, n=24, num_edge_types=1,
                                   feature_dim=3, edge_prob=0.3)
        split = ingest.split_links(g, seed=131)
        h = rng.standard_normal((g.n, 5))
        result = evaluate_links(h, split, "test")
        assert result.macro == result.per_type[0]

    def test_constructed_separable_embeddings_score_one(self):
        g, split, _ = self.make_split_and_embeddings(seed=132)
        # place the two endpoints of every held-out edge on a shared axis,
        # everything else orthogonal: positives score 1, negatives 0
        dim = 0
        h = np.zeros((g.n, 400))
        for r in range(split.num_edge_types):
            for u, v in split.test_pos[r]:
                h[u, dim] += 1.0
                h[v, dim] += 1.0
                dim += 1
        result = evaluate_links(h, split, "test")
        for vals in result.per_type.values():
            assert vals["roc_auc"] == 1.0

    def test_agreement_with_flat_score_dump(self):
        g, split, h = self.make_split_and_embeddings(seed=133)
        result = evaluate_links(h, split, "val")
        for r, vals in result.per_type.items():
            pos = split.val_pos[r]
            neg = split.val_neg[r]
            dump = ([(model.score_pair(h, u, v), 1) for u, v in pos]
                    + [(model.score_pair(h, u, v), 0) for u, v in neg])
            scores = np.array([s for s, _ in dump])
            labels = np.array([l for _, l in dump], dtype=bool)
            assert vals["roc_auc"] == pytest.approx(
                auc_pair_counting(scores, labels), abs=1e-12)
            assert vals["pr_auc"] == pytest.approx(
                ap_threshold_sweep(scores, labels), abs=1e-12)

    def test_macro_is_unweighted_mean(self):
        g, split, h = self.make_split_and_embeddings(seed=134)
        result = evaluate_links(h, split, "test")
        for name in ("roc_auc", "pr_auc", "f1"):
            expected = np.mean([result.per_type[r][name]
                                for r in result.per_type])
            assert result.macro[name] == pytest.approx(expected, abs=1e-15)

    def test_pooled_auc_single_number(self):
        g, split, h = self.make_split_and_embeddings(seed=135)
        value = pooled_link_auc(h, split, "val")
        assert 0.0 <= value <= 1.0


class TestFitLogistic:
    def test_separable_two_class_toy(self):
        rng = np.random.default_rng(140)
        x0 = rng.standard_normal((30, 2)) + np.array([4.0, 4.0])
        x1 = rng.standard_normal((30, 2)) - np.array([4.0, 4.0])
        x = np.vstack([x0, x1])
        y = np.array([0] * 30 + [1] * 30)
        clf = fit_logistic(x, y, l2=1e-3, iters=500)
        assert np.mean(predict(clf, x) == y) == 1.0

    def test_zero_iterations_uniform_first_class(self):
        rng = np.random.default_rng(141)
        x = rng.standard_normal((10, 3))
        y = np.array([0, 1] * 5)
        clf = fit_logistic(x, y, l2=1e-3, iters=0)
        probs = predict_proba(clf, x)
        np.testing.assert_allclose(probs, 0.5, atol=1e-12)
        assert np.all(predict(clf, x) == 0)

    def test_convex_objective_reaches_reference_from_other_init(self):
        rng = np.random.default_rng(142)
        x = rng.standard_normal((40, 3))
        y = rng.integers(0, 3, size=40)
        a = fit_logistic(x, y, l2=1e-2, iters=2000)
        other_init = rng.standard_normal(3 * 3 + 3)
        b = fit_logistic(x, y, l2=1e-2, iters=2000, init=other_init)
        assert a.final_loss == pytest.approx(b.final_loss, abs=1e-6)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            fit_logistic(np.zeros((5, 2)), np.zeros(5, dtype=int))

    def test_nonconsecutive_class_ids_mapped_back(self):
        rng = np.random.default_rng(143)
        x = np.vstack([rng.standard_normal((20, 2)) + 3.0,
                       rng.standard_normal((20, 2)) - 3.0])
        y = np.array([5] * 20 + [9] * 20)
        clf = fit_logistic(x, y)
        assert set(predict(clf, x)) <= {5, 9}


class TestEvaluateNodes:
    def test_recovers_separable_classes(self):
        rng = np.random.default_rng(144)
        n = 60
        labels = np.repeat([0, 1, 2], 20)
        h = rng.standard_normal((n, 4)) * 0.1
        h[labels == 0, 0] += 3.0
        h[labels == 1, 1] += 3.0
        h[labels == 2, 2] += 3.0
        g = random_multiplex_graph(rng, n=n, num_edge_types=1,
                                   feature_dim=2)
        g.labels = labels
        split = ingest.split_nodes(g, seed=145)
        out = evaluate_nodes(h, labels, split)
        assert out["macro_f1"] == 1.0
        assert out["micro_f1"] == 1.0


class TestReports:
    def test_write_metrics_report(self, tmp_path):
        rows = [("link:test", "0", "roc_auc", 0.9123, 7),
                ("link:test", "macro", "f1", 0.5, 7)]
        path = tmp_path / "metrics.tsv"
        write_metrics_report(path, rows)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "task\tgroup\tmetric\tvalue\tseed"
        assert lines[1].startswith("link:test\t0\troc_auc\t")
        assert len(lines) == 3

    def test_summary_rows_mean_std(self):
        rows = summary_rows("node:test", {"macro_f1": [0.5, 0.7]}, [1, 2])
        by_group = {(r[1], r[2]): r[3] for r in rows}
        assert by_group[("summary_mean", "macro_f1")] == pytest.approx(0.6)
        assert by_group[("summary_std", "macro_f1")] == pytest.approx(0.1)

    def test_scored_pair_set_validates(self):
        with pytest.raises(ValueError):
            ScoredPairSet(np.zeros(3), np.zeros(2))
