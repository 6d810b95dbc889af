import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from base.outputs import PredictionRecord
from super.calculator import DefaultCalculator


def record(clip_id, cine_id, study_id, label, joint, ambiguous=False, contributions=None):
    return PredictionRecord(clip_id, cine_id, study_id, label, joint, joint[-1], ambiguous,
                            contributions=contributions)


class TestAggregation(unittest.TestCase):
    def setUp(self) -> None:
        self.calculator = DefaultCalculator()

    def test_hand_mean(self) -> None:
        mean, predicted = self.calculator.aggregate([(0.2, 0.5, 0.3, 0.0), (0.4, 0.3, 0.3, 0.0)])
        self.assertTrue(np.allclose(mean, [0.3, 0.4, 0.3, 0.0]))
        self.assertEqual(predicted, 1)

    def test_single_clip(self) -> None:
        mean, predicted = self.calculator.aggregate([(0.1, 0.2, 0.6, 0.1)])
        self.assertTrue(np.array_equal(mean, [0.1, 0.2, 0.6, 0.1]))
        self.assertEqual(predicted, 2)

    def test_uncertain_clip_barely_shifts(self) -> None:
        confident = (0.1, 0.8, 0.1, 0.0)
        uncertain = (0.4, 1e-4, 1e-4, 1.0 - 0.4002)
        _, predicted = self.calculator.aggregate([confident, uncertain])
        self.assertEqual(predicted, 1)

    def test_ties_counted(self) -> None:
        _, predicted = self.calculator.aggregate([(0.4, 0.4, 0.2, 0.0)])
        self.assertEqual(predicted, 0)
        self.assertEqual(self.calculator.diagnostics.get("argmax_tie"), 1)
        with self.assertRaises(ValueError):
            self.calculator.aggregate([])

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.lists(st.floats(min_value=0.01, max_value=1.0), min_size=4, max_size=4),
                    min_size=1, max_size=6), st.randoms(use_true_random=False))
    def test_permutation_invariance(self, rows, rnd) -> None:
        vectors = [np.asarray(r) / np.sum(r) for r in rows]
        shuffled = list(vectors)
        rnd.shuffle(shuffled)
        mean_a, _ = self.calculator.aggregate(vectors)
        mean_b, _ = self.calculator.aggregate(shuffled)
        self.assertTrue(np.allclose(mean_a, mean_b, atol=1e-12))
        self.assertAlmostEqual(float(mean_a.sum()), 1.0, places=9)

    def test_hierarchy(self) -> None:
        records = [record("k0", "c0", "s0", 0, [0.2, 0.5, 0.3, 0.0]),
                   record("k1", "c0", "s0", 0, [0.4, 0.3, 0.3, 0.0]),
                   record("k2", "c1", "s0", 0, [0.9, 0.05, 0.05, 0.0]),
                   record("k3", "c2", "s1", 2, [0.1, 0.1, 0.8, 0.0])]
        cines = self.calculator.execute(records, {"type": "aggregate", "level": "cine"})
        self.assertEqual([g["id"] for g in cines], ["c0", "c1", "c2"])
        self.assertEqual(cines[0]["predicted"], 1)
        studies = self.calculator.execute(records, {"type": "aggregate", "level": "study"})
        self.assertEqual(studies[0]["predicted"], 0)
        self.assertTrue(np.allclose(studies[0]["joint_probs"], [0.6, 0.225, 0.175, 0.0]))

    def test_alpha_threshold(self) -> None:
        records = [record("k0", "c0", "s0", 0, [0.7, 0.1, 0.1, 0.1]),
                   record("k1", "c0", "s0", 0, [0.0, 0.2, 0.0, 0.8]),
                   record("k2", "c1", "s1", 1, [0.0, 0.1, 0.0, 0.9])]
        groups, coverage = self.calculator._group(records, "cine", alpha_threshold=0.5)
        self.assertTrue(np.allclose(groups[0]["joint_probs"], [0.7, 0.1, 0.1, 0.1]))
        # a fully excluded group keeps every clip
        self.assertTrue(np.allclose(groups[1]["joint_probs"], [0.0, 0.1, 0.0, 0.9]))
        self.assertAlmostEqual(coverage, 2.0 / 3.0)


class TestClassificationMetrics(unittest.TestCase):
    def setUp(self) -> None:
        self.calculator = DefaultCalculator()

    def test_balanced_accuracy(self) -> None:
        labels = [0, 1, 1, 2, 2, 2, 2]
        preds = [0, 1, 0, 2, 2, 2, 1]
        self.assertAlmostEqual(self.calculator.balanced_accuracy(preds, labels), 0.75)
        self.assertEqual(self.calculator.balanced_accuracy(labels, labels), 1.0)
        self.assertAlmostEqual(self.calculator.balanced_accuracy([1] * 6, [0, 0, 1, 1, 2, 2]), 1.0 / 3.0)
        self.assertEqual(self.calculator.per_class_recall(preds, labels), [1.0, 0.5, 0.75])
        with self.assertRaises(ValueError):
            self.calculator.balanced_accuracy([0, 1], [0, 1], classes=[0, 1, 2])

    def test_macro_f1(self) -> None:
        self.assertEqual(self.calculator.macro_f1([0, 1, 2], [0, 1, 2]), 1.0)
        self.assertEqual(self.calculator.macro_f1([1, 2, 0], [0, 1, 2]), 0.0)
        self.assertAlmostEqual(self.calculator.macro_f1([0, 0, 1], [0, 1, 1]), 2.0 / 3.0)
        self.assertEqual(len(self.calculator.per_class_f1([0, 0, 1], [0, 1, 1])), 2)

    def test_balanced_mae(self) -> None:
        labels = [0, 0, 1, 1, 2, 2]
        self.assertAlmostEqual(self.calculator.balanced_mae([0, 1, 1, 1, 0, 2], labels), 0.5)
        self.assertEqual(self.calculator.balanced_mae(labels, labels), 0.0)
        self.assertEqual(self.calculator.balanced_mae([1, 1, 2, 2, 1, 1], labels), 1.0)

    def test_misclassification_auroc(self) -> None:
        self.assertEqual(self.calculator.misclassification_auroc([0.9, 0.1], [False, True]), 1.0)
        self.assertEqual(self.calculator.misclassification_auroc([0.5, 0.5, 0.5], [False, True, True]), 0.5)
        scores = [0.8, 0.4, 0.6, 0.2]
        self.assertAlmostEqual(self.calculator.misclassification_auroc(scores, [False, False, True, True]), 0.75)
        with self.assertRaises(ValueError):
            self.calculator.misclassification_auroc([0.1, 0.2], [True, True])

    def test_ambiguity_auroc_and_entropy(self) -> None:
        self.assertEqual(self.calculator.ambiguity_auroc([0.9, 0.1], [True, False]), 1.0)
        entropy = self.calculator.entropy_score(np.array([[1.0, 0.0, 0.0], [1 / 3, 1 / 3, 1 / 3]]))
        self.assertAlmostEqual(float(entropy[0]), 0.0, places=9)
        self.assertAlmostEqual(float(entropy[1]), np.log(3.0), places=9)

    def test_entropy_renormalizes_class_slice(self) -> None:
        # joint vectors with the alpha slot dropped no longer sum to 1
        entropy = self.calculator.entropy_score(np.array([[0.2, 0.2, 0.0], [0.5, 0.5, 0.0], [0.3, 0.1, 0.1]]))
        self.assertAlmostEqual(float(entropy[0]), np.log(2.0), places=9)
        self.assertAlmostEqual(float(entropy[1]), np.log(2.0), places=9)
        expected = -(0.6 * np.log(0.6) + 2 * 0.2 * np.log(0.2))
        self.assertAlmostEqual(float(entropy[2]), expected, places=9)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=3, max_size=30))
    def test_bacc_range(self, pairs) -> None:
        labels = [label for label, _ in pairs] + [0, 1, 2]
        preds = [pred for _, pred in pairs] + [0, 1, 2]
        bacc = self.calculator.balanced_accuracy(preds, labels)
        self.assertGreaterEqual(bacc, 0.0)
        self.assertLessEqual(bacc, 1.0)


class TestExplanationScores(unittest.TestCase):
    def setUp(self) -> None:
        self.calculator = DefaultCalculator()

    def test_sparsity(self) -> None:
        one = np.zeros(40)
        one[7] = 2.5
        self.assertAlmostEqual(self.calculator.sparsity_score(one, 40), 1.0 / 40.0)
        self.assertAlmostEqual(self.calculator.sparsity_score(np.full(10, 0.3), 10), 0.9)
        self.assertAlmostEqual(self.calculator.sparsity_score(np.array([0.6, 0.35, 0.05]), 3), 2.0 / 3.0)

    def test_sparsity_skips_zero_contribution(self) -> None:
        rows = np.array([[0.0, -1.0, 0.0], [0.6, 0.35, 0.05]])
        self.assertAlmostEqual(self.calculator.sparsity_score(rows, 3), 2.0 / 3.0)
        self.assertEqual(self.calculator.diagnostics.get("zero_contribution"), 1)
        self.assertTrue(np.isnan(self.calculator.sparsity_score(np.zeros((2, 3)), 3)))

    def test_diversity(self) -> None:
        same = np.zeros((5, 40))
        same[:, :3] = [3.0, 2.0, 1.0]
        self.assertAlmostEqual(self.calculator.diversity_score(same, 40), 3.0 / 40.0)
        disjoint = np.zeros((2, 40))
        disjoint[0, :3] = 1.0
        disjoint[1, 10:13] = 1.0
        self.assertAlmostEqual(self.calculator.diversity_score(disjoint, 40), 6.0 / 40.0)
        cover = np.zeros((2, 6))
        cover[0, :3] = [3.0, 2.0, 1.0]
        cover[1, 3:] = [3.0, 2.0, 1.0]
        self.assertEqual(self.calculator.diversity_score(cover, 6), 1.0)


class TestReports(unittest.TestCase):
    def setUp(self) -> None:
        self.calculator = DefaultCalculator()
        contributions = np.array([0.6, 0.35, 0.05, 0.0])
        self.records = [
            record("k0", "c0", "s0", 0, [0.7, 0.1, 0.1, 0.1], contributions=contributions),
            record("k1", "c0", "s0", 0, [0.6, 0.2, 0.1, 0.1], contributions=contributions),
            record("k2", "c1", "s1", 1, [0.1, 0.7, 0.1, 0.1], contributions=contributions),
            record("k3", "c1", "s1", 1, [0.5, 0.1, 0.1, 0.3], ambiguous=True, contributions=contributions),
            record("k4", "c2", "s2", 2, [0.1, 0.1, 0.7, 0.1], contributions=contributions),
            record("k5", "c2", "s2", 2, [0.1, 0.2, 0.6, 0.1], contributions=contributions),
        ]
        self.attributes = {"type": "metrics", "split": "test", "classes": [0, 1, 2], "num_prototypes": 4,
                           "config_hash": "abc", "output_normalization": "joint"}

    def test_metrics_document(self) -> None:
        report = self.calculator.execute(self.records, self.attributes)
        for section in ("header", "clip", "cine", "study", "aggregation", "clean_clip", "uncertainty",
                        "explanations", "diagnostics"):
            self.assertIn(section, report)
        self.assertEqual(report["header"]["config_hash"], "abc")
        self.assertAlmostEqual(report["clip"]["bacc"], (1.0 + 0.5 + 1.0) / 3.0)
        self.assertEqual(report["study"]["bacc"], 1.0)
        self.assertEqual(report["clean_clip"]["bacc"], 1.0)
        self.assertEqual(report["uncertainty"]["misclassification_auroc"], 1.0)
        self.assertEqual(report["uncertainty"]["ambiguity_auroc"], 1.0)
        self.assertAlmostEqual(report["explanations"]["sparsity"], 0.5)
        self.assertAlmostEqual(report["explanations"]["diversity"], 0.75)

    def test_perfect_and_constant_predictors(self) -> None:
        perfect = [record(f"k{i}", f"c{i}", f"s{i}", i % 3, np.eye(4)[i % 3]) for i in range(6)]
        self.assertEqual(self.calculator.execute(perfect, self.attributes)["clip"]["bacc"], 1.0)
        constant = [record(f"k{i}", f"c{i}", f"s{i}", i % 3, [0.1, 0.8, 0.05, 0.05]) for i in range(6)]
        self.assertAlmostEqual(self.calculator.execute(constant, self.attributes)["clip"]["bacc"], 1.0 / 3.0)

    def test_study_level_absorbs_weak_clip_errors(self) -> None:
        records = []
        for study in range(6):
            label = study % 3
            confident = np.full(4, 0.02)
            confident[label] = 0.94
            wrong = np.full(4, 0.1)
            wrong[(label + 1) % 3] = 0.45
            wrong[label] = 0.35
            records.append(record(f"k{study}a", f"c{study}", f"s{study}", label, confident))
            records.append(record(f"k{study}b", f"c{study}", f"s{study}", label, wrong))
        report = self.calculator.execute(records, self.attributes)
        self.assertAlmostEqual(report["clip"]["bacc"], 0.5)
        self.assertEqual(report["study"]["bacc"], 1.0)
        self.assertGreaterEqual(report["study"]["bacc"], report["clip"]["bacc"])

    def test_entropy_score_mode(self) -> None:
        report = self.calculator.execute(self.records, {**self.attributes, "uncertainty_score": "entropy"})
        self.assertEqual(report["uncertainty"]["score"], "entropy")
        self.assertIsNotNone(report["uncertainty"]["misclassification_auroc"])

    def test_ablation_summary(self) -> None:
        rows = [{"ablation": "full", "bacc": 0.8}, {"ablation": "full", "bacc": 0.6},
                {"ablation": "no_push", "bacc": 0.5}]
        summary = self.calculator.execute(rows, {"type": "ablation_summary", "metrics": ("bacc",)})
        self.assertEqual([row["ablation"] for row in summary], ["full", "no_push"])
        self.assertAlmostEqual(summary[0]["bacc_mean"], 0.7)
        self.assertAlmostEqual(summary[0]["bacc_std"], 0.1)
        self.assertEqual(summary[1]["repeats"], 1)

    def test_execute_rejections(self) -> None:
        with self.assertRaises(ValueError):
            self.calculator.execute(self.records, {"type": "bogus"})
        with self.assertRaises(ValueError):
            self.calculator.execute(None, {"type": "metrics"})
        with self.assertRaises(ValueError):
            self.calculator.execute([], self.attributes)


def loop_bacc(preds, labels):
    recalls = []
    for c in sorted(set(labels)):
        hits = sum(1 for p, y in zip(preds, labels) if y == c and p == c)
        recalls.append(hits / sum(1 for y in labels if y == c))
    return sum(recalls) / len(recalls)


def loop_macro_f1(preds, labels):
    scores = []
    for c in sorted(set(labels)):
        tp = sum(1 for p, y in zip(preds, labels) if p == c and y == c)
        fp = sum(1 for p, y in zip(preds, labels) if p == c and y != c)
        fn = sum(1 for p, y in zip(preds, labels) if p != c and y == c)
        scores.append(0.0 if tp == 0 else 2.0 * tp / (2.0 * tp + fp + fn))
    return sum(scores) / len(scores)


def loop_bmae(preds, labels):
    errors = []
    for c in sorted(set(labels)):
        members = [abs(p - c) for p, y in zip(preds, labels) if y == c]
        errors.append(sum(members) / len(members))
    return sum(errors) / len(errors)


def loop_auroc(scores, positive):
    pos = [s for s, flag in zip(scores, positive) if flag]
    neg = [s for s, flag in zip(scores, positive) if not flag]
    wins = 0.0
    for a in pos:
        for b in neg:
            wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(pos) * len(neg))


def loop_sparsity(rows, num_prototypes, coverage=0.9):
    sizes = []
    for row in rows:
        positive = sorted((max(float(v), 0.0) for v in row), reverse=True)
        total = sum(positive)
        if total <= 0:
            continue
        running, size = 0.0, 0
        for value in positive:
            running += value
            size += 1
            if running >= coverage * total:
                break
        sizes.append(size)
    return float("nan") if not sizes else sum(sizes) / len(sizes) / num_prototypes


def loop_diversity(rows, num_prototypes, top_k=3):
    used = set()
    for row in rows:
        used.update(sorted(range(len(row)), key=lambda p: (-row[p], p))[:top_k])
    return len(used) / num_prototypes


class TestAgainstLoopOracle(unittest.TestCase):
    """100 seeded instances with n in [1, 50] and three classes"""
    def setUp(self) -> None:
        self.calculator = DefaultCalculator()
        self.rng = np.random.default_rng(2024)

    def test_metrics_match_loops(self) -> None:
        for trial in range(100):
            n = int(self.rng.integers(1, 51))
            labels = self.rng.integers(0, 3, size=n).tolist()
            preds = self.rng.integers(0, 3, size=n).tolist()
            with self.subTest(trial=trial, n=n):
                self.assertAlmostEqual(self.calculator.balanced_accuracy(preds, labels),
                                       loop_bacc(preds, labels), delta=1e-9)
                self.assertAlmostEqual(self.calculator.macro_f1(preds, labels),
                                       loop_macro_f1(preds, labels), delta=1e-9)
                self.assertAlmostEqual(self.calculator.balanced_mae(preds, labels),
                                       loop_bmae(preds, labels), delta=1e-9)

    def test_auroc_matches_pair_count(self) -> None:
        for trial in range(100):
            n = int(self.rng.integers(1, 51))
            # coarse scores force ties
            scores = (self.rng.integers(0, 6, size=n) / 5.0).tolist()
            correct = (self.rng.random(n) < 0.6).tolist()
            with self.subTest(trial=trial, n=n):
                if all(correct) or not any(correct):
                    with self.assertRaises(ValueError):
                        self.calculator.misclassification_auroc(scores, correct)
                    continue
                expected = loop_auroc(scores, [not c for c in correct])
                self.assertAlmostEqual(self.calculator.misclassification_auroc(scores, correct), expected,
                                       delta=1e-9)
                self.assertAlmostEqual(self.calculator.ambiguity_auroc(scores, [not c for c in correct]),
                                       expected, delta=1e-9)

    def test_explanation_scores_match_loops(self) -> None:
        for trial in range(100):
            n = int(self.rng.integers(1, 51))
            num_prototypes = int(self.rng.integers(3, 13))
            rows = self.rng.normal(size=(n, num_prototypes))
            with self.subTest(trial=trial, n=n, num_prototypes=num_prototypes):
                expected = loop_sparsity(rows.tolist(), num_prototypes)
                actual = self.calculator.sparsity_score(rows, num_prototypes)
                if np.isnan(expected):
                    self.assertTrue(np.isnan(actual))
                else:
                    self.assertAlmostEqual(actual, expected, delta=1e-9)
                self.assertAlmostEqual(self.calculator.diversity_score(rows, num_prototypes),
                                       loop_diversity(rows.tolist(), num_prototypes), delta=1e-9)


if __name__ == "__main__":
    unittest.main()
