"""Similarity scoring, probabilities, entropy and template ensembling.

Everything here is a pure function of its inputs. Arrays are computed in float64; a "bank" is a
``[C x D]`` matrix of unit-norm class features and a "view" a unit-norm ``[D]`` image feature (or
``[M x D]`` for a stack of views).
"""
from dataclasses import dataclass
from enum import Enum, unique

import numpy as np
from scipy.special import expit, softmax, xlogy

from .errors import DegenerateInput, DimensionMismatch, ValidationError

NORM_EPSILON = 1e-12


@unique
class ScoringKind(Enum):
    softmax = "softmax"
    sigmoid = "sigmoid"


@dataclass(frozen=True)
class ScoringRule:
    kind: ScoringKind = ScoringKind.softmax
    scale: float = 100.0
    bias: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ScoringKind(self.kind))
        if not self.scale > 0:
            raise ValidationError("scoring scale must be positive, got {}".format(self.scale), field="scale")

    @classmethod
    def sigmoid(cls, scale=100.0, bias=-10.0):
        return cls(ScoringKind.sigmoid, scale, bias)

    def rescaled(self, factor):
        return ScoringRule(self.kind, self.scale * factor, self.bias)

    def to_dict(self):
        return {"kind": self.kind.value, "scale": float(self.scale), "bias": float(self.bias)}

    @classmethod
    def from_dict(cls, data):
        return cls(ScoringKind(data["kind"]), float(data["scale"]), float(data.get("bias", 0.0)))


def l2_normalize(v):
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not norm > NORM_EPSILON:
        raise DegenerateInput("cannot normalize a near-zero vector (norm {:.3g})".format(norm))
    return v / norm


def normalize_rows(matrix):
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=-1, keepdims=True)
    if np.any(norms <= NORM_EPSILON):
        bad = np.argwhere(norms[..., 0] <= NORM_EPSILON)[0]
        raise DegenerateInput("cannot normalize near-zero row {}".format(tuple(int(i) for i in bad)))
    return matrix / norms


def logits_from_cosine(cosine, rule):
    if rule.kind is ScoringKind.sigmoid:
        return rule.scale * cosine + rule.bias
    return rule.scale * cosine


def probs_from_logits(logits, rule):
    """Softmax over the class axis, or per-class sigmoid scores renormalized to sum to one."""
    if rule.kind is ScoringKind.sigmoid:
        s = expit(logits)
        return s / s.sum(axis=-1, keepdims=True)
    return softmax(logits, axis=-1)


def _check_dims(image_feat, text_bank):
    if text_bank.ndim != 2:
        raise DimensionMismatch("text bank must be a [C x D] matrix, got shape {}".format(text_bank.shape))
    if image_feat.shape[-1] != text_bank.shape[1]:
        raise DimensionMismatch(
            "feature dimension {} does not match text bank dimension {}".format(
                image_feat.shape[-1], text_bank.shape[1]
            )
        )


def score(image_feat, text_bank, rule):
    """Return ``(logits, probs)`` for one view ``[D]`` or a stack of views ``[M x D]``."""
    image_feat = np.asarray(image_feat, dtype=np.float64)
    text_bank = np.asarray(text_bank, dtype=np.float64)
    _check_dims(image_feat, text_bank)
    logits = logits_from_cosine(image_feat @ text_bank.T, rule)
    return logits, probs_from_logits(logits, rule)


def entropy(p):
    """Shannon entropy in nats along the last axis, with 0 ln 0 taken as 0."""
    return -np.sum(xlogy(p, p), axis=-1)


def safe_log(p):
    return np.log(p, out=np.zeros_like(p, dtype=np.float64), where=p > 0)


def entropy_grad(p):
    """dH/dp, with the log of zero entries taken as zero (their contribution is multiplied away)."""
    return -(safe_log(p) + 1.0)


def max_prob_gap(p):
    """Top-1 minus top-2 probability."""
    if p.shape[-1] < 2:
        return p[..., 0]
    top2 = np.sort(p, axis=-1)[..., -2:]
    return top2[..., 1] - top2[..., 0]


def ensemble_templates(text_features):
    text_features = np.asarray(text_features, dtype=np.float64)
    if text_features.ndim != 3 or text_features.shape[0] < 1:
        raise DimensionMismatch("text features must be [T x C x D] with T >= 1, got {}".format(text_features.shape))
    if text_features.shape[0] == 1:
        return text_features[0]
    mean = text_features.mean(axis=0)
    try:
        return normalize_rows(mean)
    except DegenerateInput as e:
        raise DegenerateInput("template mean vanishes (antipodal templates): {}".format(e.message)) from e


def logits_backward(logits, probs, grad_probs, rule):
    """Pull ``dL/dprobs`` back through :func:`probs_from_logits` to ``dL/dlogits``."""
    inner = grad_probs - np.sum(grad_probs * probs, axis=-1, keepdims=True)
    if rule.kind is ScoringKind.sigmoid:
        s = expit(logits)
        return s * (1.0 - s) * inner / s.sum(axis=-1, keepdims=True)
    return probs * inner


def log_prob_backward(logits, probs, weights, rule):
    """Gradient of ``sum_c weights[c] * log p_c`` with respect to the logits."""
    total = np.sum(weights, axis=-1, keepdims=True)
    if rule.kind is ScoringKind.sigmoid:
        s = expit(logits)
        return weights * (1.0 - s) - total * s * (1.0 - s) / s.sum(axis=-1, keepdims=True)
    return weights - total * probs


def unit_rows_backward(raw, unit, grad_unit):
    """Pull a gradient on ``unit = raw / |raw|`` (row-wise) back onto ``raw``."""
    norms = np.linalg.norm(raw, axis=-1, keepdims=True)
    radial = np.sum(grad_unit * unit, axis=-1, keepdims=True)
    return (grad_unit - radial * unit) / norms
