import numpy as np
import pytest

from aeromon.dataset import CHANNELS, Dataset, Label
from aeromon.errors import InsufficientDataError, ShapeError, UndefinedAurocError
from aeromon.evaluation import (
    ConfusionMatrix,
    auroc,
    confusion,
    evaluate_model,
    feature_histograms,
    histograms_to_csv_lines,
    metrics,
)
from aeromon.numerics import Rng


def _brute_force_auroc(scores, truth):
    pos = [s for s, t in zip(scores, truth) if t == 1]
    neg = [s for s, t in zip(scores, truth) if t == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


class TestConfusion:
    def test_all_anomalous_correct(self):
        cm = confusion([1, 1, 1, 1], [1, 1, 1, 1])
        assert (cm.tp, cm.fp, cm.fn, cm.tn) == (4, 0, 0, 0)

    def test_complement_predictions(self):
        cm = confusion([1, 0, 1, 0], [0, 1, 0, 1])
        assert cm.tp == 0 and cm.tn == 0
        assert cm.fp == 2 and cm.fn == 2

    def test_hand_tallied_mixed_case(self):
        pred = [1, 0, 1, 1, 0, 0, 1, 0]
        truth = [1, 1, 0, 1, 0, 1, 1, 0]
        # tally by hand: tp rows 0,3,6; fp row 2; fn rows 1,5; tn rows 4,7
        cm = confusion(pred, truth)
        assert (cm.tp, cm.fp, cm.fn, cm.tn) == (3, 1, 2, 2)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            confusion([1, 0], [1])

    def test_empty_rejected(self):
        with pytest.raises(InsufficientDataError):
            confusion([], [])


class TestMetrics:
    def test_direct_formula_arithmetic(self):
        m = metrics(ConfusionMatrix(tp=90, fp=10, fn=20, tn=80))
        assert m.precision == pytest.approx(0.9)
        assert m.recall == pytest.approx(0.81818, abs=5e-6)
        assert m.f1 == pytest.approx(0.85714, abs=5e-6)
        assert m.accuracy == pytest.approx(0.85)
        assert m.degenerate == ()

    def test_reference_operating_point_is_self_consistent(self):
        # the comparison-table operating point used for the conditional
        # fleet-data check: precision 0.8181 and recall 0.8856 must combine
        # harmonically to 0.8505
        p, r = 0.8181, 0.8856
        f1 = 2 * p * r / (p + r)
        assert f1 == pytest.approx(0.8505, abs=5e-5)

    def test_zero_denominator_flags(self):
        m = metrics(ConfusionMatrix(tp=0, fp=0, fn=0, tn=5))
        assert m.precision == 0.0
        assert m.recall == 0.0
        assert m.f1 == 0.0
        assert set(m.degenerate) == {"precision", "recall", "f1"}

    @pytest.mark.invariant
    def test_f1_bounded_by_precision_and_recall(self):
        rng = Rng(3)
        for _ in range(200):
            cm = ConfusionMatrix(
                tp=rng.randrange(50) + 1,
                fp=rng.randrange(50),
                fn=rng.randrange(50),
                tn=rng.randrange(50),
            )
            m = metrics(cm)
            if not m.degenerate:
                assert min(m.precision, m.recall) - 1e-12 <= m.f1 <= max(m.precision, m.recall) + 1e-12

    @pytest.mark.invariant
    def test_permutation_invariance(self):
        rng = Rng(5)
        pred = [rng.randrange(2) for _ in range(60)]
        truth = [rng.randrange(2) for _ in range(60)]
        base = metrics(confusion(pred, truth))
        order = list(range(60))
        rng.shuffle(order)
        shuffled = metrics(confusion([pred[i] for i in order], [truth[i] for i in order]))
        assert shuffled == base


class TestAuroc:
    def test_perfect_separation(self):
        assert auroc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0

    def test_all_ties(self):
        assert auroc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5

    def test_exhaustive_pair_counting_example(self):
        # pairs: (0.9,0.5) ok, (0.9,0.1) ok, (0.4,0.5) wrong, (0.4,0.1) ok
        assert auroc([0.9, 0.4, 0.5, 0.1], [1, 1, 0, 0]) == 0.75

    def test_single_class_rejected(self):
        with pytest.raises(UndefinedAurocError):
            auroc([0.1, 0.2], [1, 1])

    @pytest.mark.invariant
    def test_matches_brute_force_with_ties(self):
        rng = Rng(11)
        for trial in range(60):
            n = 5 + rng.randrange(96)
            # coarse quantization forces plenty of exact ties
            scores = [rng.randrange(12) / 4.0 for _ in range(n)]
            truth = [rng.randrange(2) for _ in range(n)]
            if sum(truth) in (0, n):
                truth[0] = 1 - truth[0]
            assert auroc(scores, truth) == _brute_force_auroc(scores, truth)

    @pytest.mark.invariant
    def test_negation_symmetry_for_tie_free_scores(self):
        rng = Rng(13)
        for _ in range(20):
            n = 30
            scores = list({rng.random() for _ in range(2 * n)})[:n]
            truth = [rng.randrange(2) for _ in range(len(scores))]
            if sum(truth) in (0, len(scores)):
                truth[0] = 1 - truth[0]
            a = auroc(scores, truth)
            b = auroc([-s for s in scores], truth)
            assert a + b == pytest.approx(1.0, abs=1e-12)

    def test_matches_threshold_sweep_trapezoid(self):
        rng = Rng(17)
        scores = [rng.random() for _ in range(200)]
        truth = [1 if rng.random() < 0.4 else 0 for _ in range(200)]
        thresholds = sorted(set(scores), reverse=True)
        n_pos = sum(truth)
        n_neg = len(truth) - n_pos
        points = [(0.0, 0.0)]
        for t in thresholds:
            tpr = sum(1 for s, y in zip(scores, truth) if y == 1 and s >= t) / n_pos
            fpr = sum(1 for s, y in zip(scores, truth) if y == 0 and s >= t) / n_neg
            points.append((fpr, tpr))
        points.append((1.0, 1.0))
        area = sum(
            (x2 - x1) * (y1 + y2) / 2.0 for (x1, y1), (x2, y2) in zip(points, points[1:])
        )
        assert auroc(scores, truth) == pytest.approx(area, abs=1e-12)


class TestFeatureHistograms:
    def _toy(self):
        rng = Rng(23)
        feats = np.array([[rng.uniform(0, 10) for _ in range(7)] for _ in range(400)])
        labels = np.array([rng.randrange(2) for _ in range(400)], dtype=np.int8)
        # depress output torque for anomalous rows
        feats[labels == 1, CHANNELS.index("ot")] -= 6.0
        return Dataset(feats, labels)

    @pytest.mark.invariant
    def test_counts_conserved_per_class(self):
        ds = self._toy()
        for h in feature_histograms(ds, bins=20):
            assert int(h.counts_normal.sum()) == ds.count(Label.NORMAL)
            assert int(h.counts_anomalous.sum()) == ds.count(Label.ANOMALOUS)

    def test_constant_channel_single_bin(self):
        feats = np.zeros((50, 7))
        feats[:, 1:] = Rng(1).uniforms(50 * 6).reshape(50, 6)
        labels = np.array([0, 1] * 25, dtype=np.int8)
        hist = feature_histograms(Dataset(feats, labels), bins=10)[0]
        assert hist.counts_normal.sum() == 25
        assert (hist.counts_normal > 0).sum() == 1

    def test_depressed_torque_shifts_left(self):
        ds = self._toy()
        hist = [h for h in feature_histograms(ds, bins=30) if h.channel == "ot"][0]
        centers = (hist.edges[:-1] + hist.edges[1:]) / 2.0
        mean_normal = float((centers * hist.counts_normal).sum() / hist.counts_normal.sum())
        mean_anom = float((centers * hist.counts_anomalous).sum() / hist.counts_anomalous.sum())
        assert mean_anom < mean_normal

    def test_csv_lines_shape(self):
        ds = self._toy()
        lines = histograms_to_csv_lines(feature_histograms(ds, bins=5))
        assert lines[0] == "channel,class,bin_index,bin_left,bin_right,count"
        assert len(lines) == 1 + 7 * 2 * 5
        for line in lines[1:]:
            channel, cls, b, left, right, count = line.split(",")
            assert float(left) < float(right)  # plain parseable numbers
            assert int(count) >= 0


class TestEvaluateModel:
    def _test_set(self, n_normal=60, n_anom=40):
        rng = Rng(31)
        feats = np.array([[rng.normal() for _ in range(7)] for _ in range(n_normal + n_anom)])
        labels = np.array([0] * n_normal + [1] * n_anom, dtype=np.int8)
        return Dataset(feats, labels)

    def test_perfect_decider(self):
        ds = self._test_set()
        truth = {tuple(row): int(l) for row, l in zip(ds.features, ds.labels)}
        report = evaluate_model(
            lambda x: (Label(truth[tuple(x)]), float(truth[tuple(x)])), ds, "oracle"
        )
        m = report.metrics
        assert (m.precision, m.recall, m.f1, m.accuracy) == (1.0, 1.0, 1.0, 1.0)

    def test_constant_normal_decider_on_imbalanced_set(self):
        ds = self._test_set(60, 40)
        report = evaluate_model(lambda x: (Label.NORMAL, 0.0), ds, "always-normal")
        assert report.metrics.accuracy == pytest.approx(0.6)
        assert report.metrics.recall == 0.0

    @pytest.mark.invariant
    def test_confusion_totals_match_test_size(self):
        ds = self._test_set()
        rng = Rng(7)
        report = evaluate_model(lambda x: (Label(rng.randrange(2)), rng.random()), ds, "random")
        assert report.confusion.total == ds.n

    def test_score_summaries_present(self):
        ds = self._test_set()
        report = evaluate_model(lambda x: (Label.NORMAL, float(x[0])), ds, "scorer")
        assert set(report.score_summaries) == {"normal", "anomalous"}
        summary = report.score_summaries["normal"]
        assert summary.minimum <= summary.median <= summary.p85 <= summary.maximum

    def test_report_dict_schema(self):
        ds = self._test_set()
        report = evaluate_model(lambda x: (Label.ANOMALOUS, 1.0), ds, "flagger")
        d = report.to_dict()
        for key in ("model", "precision", "recall", "f1", "accuracy", "auroc", "confusion"):
            assert key in d
        assert set(d["confusion"]) == {"tp", "fp", "fn", "tn"}

    def test_unlabeled_rejected(self):
        ds = Dataset(np.zeros((5, 7)))
        from aeromon.errors import MissingLabelsError

        with pytest.raises(MissingLabelsError):
            evaluate_model(lambda x: (Label.NORMAL, 0.0), ds)
