import hashlib
import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Tuple

import numpy as np
from sklearn.metrics import roc_auc_score

from .bundle import SampleFlag
from .errors import NoConfidenceError, ValidationError

DEFAULT_ECE_BINS = 20


@dataclass(frozen=True)
class MetricReport:
    method_tag: str
    bundle_name: str
    config_hash: str
    seed: int
    accuracy: Optional[float]
    ece: Optional[float]
    auroc: Optional[float]
    n_evaluated: int
    per_class_accuracy: Tuple[Optional[float], ...] = ()
    class_counts: Tuple[int, ...] = ()
    id_digest: str = ""
    adversarial_accuracy: Optional[float] = None
    n_adversarial: int = 0

    @property
    def key(self):
        return (self.bundle_name, self.method_tag, self.config_hash, self.seed)


def _hard_labels(preds):
    return np.array([pred.hard_label for pred in preds], dtype=np.int64)


def accuracy(preds, labels):
    labels = np.asarray(labels, dtype=np.int64)
    if len(preds) == 0:
        raise ValidationError("accuracy of an empty prediction list is undefined")
    if len(preds) != labels.shape[0]:
        raise ValidationError("{} predictions but {} labels".format(len(preds), labels.shape[0]))
    return float(np.mean(_hard_labels(preds) == labels))


def ece(preds, labels, bins=DEFAULT_ECE_BINS):
    """Expected calibration error over ``bins`` equal-width bins ``(b/B, (b+1)/B]``; confidence 0 lands in bin 0."""
    if any(not pred.has_confidence for pred in preds):
        raise NoConfidenceError("ECE needs a confidence for every prediction; {} provides none".format(
            next(pred.method_tag for pred in preds if not pred.has_confidence)
        ))
    if len(preds) == 0:
        raise ValidationError("ECE of an empty prediction list is undefined")
    labels = np.asarray(labels, dtype=np.int64)
    confidences = np.array([pred.confidence for pred in preds], dtype=np.float64)
    correct = (_hard_labels(preds) == labels).astype(np.float64)

    edges = np.linspace(0.0, 1.0, bins + 1)
    bin_index = np.clip(np.digitize(confidences, edges, right=True) - 1, 0, bins - 1)
    total = 0.0
    for b in range(bins):
        in_bin = bin_index == b
        if in_bin.any():
            total += in_bin.mean() * abs(correct[in_bin].mean() - confidences[in_bin].mean())
    return float(total)


def auroc(id_scores, ood_scores):
    """Probability that an in-distribution score beats an OOD score, ties counted half."""
    id_scores = np.asarray(id_scores, dtype=np.float64)
    ood_scores = np.asarray(ood_scores, dtype=np.float64)
    if id_scores.size == 0 or ood_scores.size == 0:
        raise ValidationError("AUROC needs both in-distribution and OOD scores ({} ID, {} OOD)".format(
            id_scores.size, ood_scores.size
        ))
    y_true = np.concatenate([np.ones(id_scores.size), np.zeros(ood_scores.size)])
    return float(roc_auc_score(y_true, np.concatenate([id_scores, ood_scores])))


class OODSplit(NamedTuple):
    id_classes: Tuple[int, ...]
    bundle: object


def ood_split(bundle, fraction=0.5, seed=0):
    """Discard ``floor(fraction * C)`` seeded classes and flag their samples OOD.

    Kept classes are relabeled ``0..C'-1`` in their original order and the text features are restricted
    to them; OOD samples keep their original label.
    """
    if not 0 <= fraction <= 1:
        raise ValidationError("OOD fraction must lie in [0, 1], got {}".format(fraction), field="fraction")
    C = bundle.num_classes
    rng = np.random.default_rng(seed)
    discarded = set(int(k) for k in rng.choice(C, size=int(math.floor(fraction * C)), replace=False))
    kept = [k for k in range(C) if k not in discarded]
    if not discarded:
        return OODSplit(tuple(kept), bundle)
    if not kept:
        raise ValidationError("OOD split would discard every class", field="fraction")

    relabel = {old: new for new, old in enumerate(kept)}
    samples = []
    for sample in bundle.samples:
        if sample.flag == SampleFlag.ood or sample.label in discarded:
            samples.append(replace(sample, flag=SampleFlag.ood))
        else:
            samples.append(replace(sample, label=relabel[sample.label]))
    split = replace(
        bundle,
        class_names=[bundle.class_names[k] for k in kept],
        text_features=bundle.text_features[:, kept, :],
        samples=samples,
    )
    return OODSplit(tuple(kept), split)


def ids_digest(sample_ids):
    return hashlib.sha256("\n".join(sorted(sample_ids)).encode("utf-8")).hexdigest()[:16]


def per_class_accuracy(preds, labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=num_classes)[:num_classes] if labels.size else np.zeros(num_classes, int)
    hits = _hard_labels(preds) == labels
    per_class = tuple(
        float(hits[labels == k].mean()) if counts[k] else None for k in range(num_classes)
    )
    return per_class, tuple(int(c) for c in counts)


def build_report(preds, labels, sample_ids, num_classes, method_tag, bundle_name, config_hash, seed,
                 auroc_value=None, bins=DEFAULT_ECE_BINS, adversarial=None):
    """Metrics over the evaluated predictions; ``adversarial`` is an optional ``(preds, true_labels)`` pair
    of adversarially perturbed samples, scored separately as robust accuracy."""
    adversarial_preds, adversarial_labels = adversarial or ((), ())
    labels = np.asarray(labels, dtype=np.int64)
    n = len(preds)
    per_class, counts = per_class_accuracy(preds, labels, num_classes)
    scored = n > 0
    return MetricReport(
        method_tag=str(method_tag),
        bundle_name=bundle_name,
        config_hash=config_hash,
        seed=int(seed),
        accuracy=accuracy(preds, labels) if scored else None,
        ece=ece(preds, labels, bins) if scored and all(pred.has_confidence for pred in preds) else None,
        auroc=auroc_value,
        n_evaluated=n,
        per_class_accuracy=per_class,
        class_counts=counts,
        id_digest=ids_digest(sample_ids),
        adversarial_accuracy=accuracy(adversarial_preds, adversarial_labels) if len(adversarial_preds) else None,
        n_adversarial=len(adversarial_preds),
    )


def stability_delta(report_clean, report_mixed):
    """Accuracy on the clean samples of the mixed stream minus accuracy on the clean stream alone."""
    if report_clean.id_digest != report_mixed.id_digest:
        raise ValidationError("reports were computed over different clean-sample sets")
    if report_clean.accuracy is None or report_mixed.accuracy is None:
        raise ValidationError("stability delta needs two non-empty reports")
    return report_mixed.accuracy - report_clean.accuracy
