import numpy as np
import pytest

from ttabench.bundle import SampleFlag, SynthSpec, generate_synthetic
from ttabench.episodic import Prediction
from ttabench.errors import NoConfidenceError, ValidationError
from ttabench.metrics import (
    accuracy,
    auroc,
    build_report,
    ece,
    ids_digest,
    ood_split,
    per_class_accuracy,
    stability_delta,
)


def _predictions(labels, confidences, tag="tpt"):
    return [Prediction(hard_label=int(k), method_tag=tag, confidence=float(c)) for k, c in zip(labels, confidences)]


def _brute_force_ece(confidences, correct, bins):
    total = 0.0
    n = len(confidences)
    for b in range(bins):
        low, high = b / bins, (b + 1) / bins
        members = [i for i in range(n) if (low < confidences[i] <= high) or (b == 0 and confidences[i] == 0)]
        if members:
            accuracy_in_bin = sum(correct[i] for i in members) / len(members)
            confidence_in_bin = sum(confidences[i] for i in members) / len(members)
            total += len(members) / n * abs(accuracy_in_bin - confidence_in_bin)
    return total


class TestAccuracy(object):
    def test_accuracy(self):
        assert accuracy(_predictions([0, 1, 2, 2], [1, 1, 1, 1]), [0, 1, 1, 2]) == 0.75

    def test_empty(self):
        with pytest.raises(ValidationError):
            accuracy([], [])

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            accuracy(_predictions([0], [1]), [0, 1])

    def test_per_class_accuracy_skips_absent_classes(self):
        per_class, counts = per_class_accuracy(_predictions([0, 1, 1], [1, 1, 1]), [0, 0, 1], 3)

        assert per_class == (0.5, 1.0, None)
        assert counts == (2, 1, 0)

    @pytest.mark.parametrize("seed", range(5))
    def test_is_the_count_weighted_mean_of_per_class_accuracy(self, seed):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 5, size=60)
        preds = _predictions(rng.integers(0, 5, size=60), np.ones(60))

        per_class, counts = per_class_accuracy(preds, labels, 6)
        weighted = sum(a * n for a, n in zip(per_class, counts) if a is not None) / sum(counts)

        assert accuracy(preds, labels) == pytest.approx(weighted, abs=1e-12)


class TestECE(object):
    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("bins", [1, 10, 20])
    def test_matches_brute_force_binning(self, seed, bins):
        rng = np.random.default_rng(seed)
        confidences = rng.uniform(0, 1, size=200)
        labels = rng.integers(0, 3, size=200)
        hard = np.where(rng.uniform(size=200) < confidences, labels, (labels + 1) % 3)
        correct = [int(h == k) for h, k in zip(hard, labels)]

        value = ece(_predictions(hard, confidences), labels, bins=bins)

        assert value == pytest.approx(_brute_force_ece(confidences, correct, bins), abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_is_invariant_under_permutation(self, seed):
        rng = np.random.default_rng(seed)
        confidences = rng.uniform(0, 1, size=100)
        labels = rng.integers(0, 4, size=100)
        hard = rng.integers(0, 4, size=100)
        order = rng.permutation(100)

        value = ece(_predictions(hard, confidences), labels)
        shuffled = ece(_predictions(hard[order], confidences[order]), labels[order])

        assert shuffled == pytest.approx(value, abs=1e-12)

    def test_perfect_calibration(self):
        assert ece(_predictions([0, 1], [1.0, 1.0]), [0, 1]) == 0.0

    def test_confidence_zero_lands_in_the_first_bin(self):
        assert ece(_predictions([0], [0.0]), [1]) == 0.0

    def test_overconfidence(self):
        assert ece(_predictions([0, 0], [0.9, 0.9]), [1, 1]) == pytest.approx(0.9)

    def test_hard_predictions_have_no_ece(self):
        with pytest.raises(NoConfidenceError) as e:
            ece([Prediction.from_vote(0, "zero")], [0])
        assert "zero" in e.value.message


class TestAUROC(object):
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_pairwise_count_with_ties(self, seed):
        rng = np.random.default_rng(seed)
        id_scores = rng.integers(0, 6, size=30) / 5
        ood_scores = rng.integers(0, 6, size=25) / 5

        wins = sum((i > o) + 0.5 * (i == o) for i in id_scores for o in ood_scores)

        assert auroc(id_scores, ood_scores) == pytest.approx(wins / (30 * 25), abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_swapping_populations_complements(self, seed):
        rng = np.random.default_rng(seed)
        first = rng.integers(0, 6, size=20) / 5
        second = rng.integers(0, 6, size=15) / 5

        assert auroc(first, second) + auroc(second, first) == pytest.approx(1.0, abs=1e-12)

    def test_perfect_separation(self):
        assert auroc([0.9, 0.8], [0.1, 0.2]) == 1.0

    @pytest.mark.parametrize("id_scores,ood_scores", [([], [0.1]), ([0.2], [])])
    def test_needs_both_populations(self, id_scores, ood_scores):
        with pytest.raises(ValidationError):
            auroc(id_scores, ood_scores)


class TestOODSplit(object):
    def test_discards_a_fraction_of_classes(self):
        bundle = generate_synthetic(SynthSpec(seed=0, C=6, D=8, N=60, V=1))

        split = ood_split(bundle, fraction=0.5, seed=3)

        assert len(split.id_classes) == 3
        assert split.bundle.num_classes == 3
        assert split.bundle.text_features.shape == (1, 3, 8)
        for original, relabeled in zip(bundle.samples, split.bundle.samples):
            if original.label in split.id_classes:
                assert relabeled.flag == SampleFlag.clean
                assert relabeled.label == split.id_classes.index(original.label)
            else:
                assert relabeled.flag == SampleFlag.ood
                assert relabeled.label == original.label

    def test_zero_fraction_is_a_no_op(self, small_bundle):
        split = ood_split(small_bundle, fraction=0.0)

        assert split.bundle is small_bundle
        assert split.id_classes == (0, 1, 2, 3)

    def test_discarding_everything(self, small_bundle):
        with pytest.raises(ValidationError):
            ood_split(small_bundle, fraction=1.0)


class TestReport(object):
    def test_build_report(self):
        report = build_report(
            _predictions([0, 1, 1], [0.9, 0.8, 0.6]), [0, 1, 0], ["a", "b", "c"], 2, "tpt", "pets", "abc", 0
        )

        assert report.accuracy == pytest.approx(2 / 3)
        assert report.ece is not None
        assert report.auroc is None
        assert report.n_evaluated == 3
        assert report.class_counts == (2, 1)
        assert report.id_digest == ids_digest(["c", "b", "a"])
        assert report.key == ("pets", "tpt", "abc", 0)
        assert report.adversarial_accuracy is None
        assert report.n_adversarial == 0

    def test_adversarial_accuracy_is_kept_apart(self):
        report = build_report(
            _predictions([0, 1], [0.9, 0.8]), [0, 1], ["a", "b"], 2, "tpt", "pets", "abc", 0,
            adversarial=(_predictions([1, 1, 0, 0], [0.7, 0.7, 0.7, 0.7]), [0, 1, 1, 1]),
        )

        assert report.accuracy == 1.0
        assert report.n_evaluated == 2
        assert report.adversarial_accuracy == 0.25
        assert report.n_adversarial == 4

    def test_hard_predictions_report_no_ece(self):
        report = build_report([Prediction.from_vote(0, "zero")], [0], ["a"], 1, "zero", "pets", "abc", 0)

        assert report.accuracy == 1.0
        assert report.ece is None

    def test_empty_report(self):
        report = build_report([], [], [], 2, "tda", "pets", "abc", 0)

        assert report.accuracy is None
        assert report.n_evaluated == 0

    def test_stability_delta(self):
        clean = build_report(_predictions([0, 1], [1, 1]), [0, 0], ["a", "b"], 2, "tda", "pets", "h", 0)
        mixed = build_report(_predictions([0, 0], [1, 1]), [0, 0], ["b", "a"], 2, "tda", "pets", "h", 0)

        assert stability_delta(clean, mixed) == 0.5

    def test_stability_delta_needs_the_same_clean_samples(self):
        clean = build_report(_predictions([0], [1]), [0], ["a"], 2, "tda", "pets", "h", 0)
        mixed = build_report(_predictions([0], [1]), [0], ["z"], 2, "tda", "pets", "h", 0)

        with pytest.raises(ValidationError):
            stability_delta(clean, mixed)
