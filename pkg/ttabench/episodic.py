"""Episodic adaptation: every method maps one sample to a :class:`Prediction` and keeps no state.

Prompt-tuning methods (TPT, C-TPT, TTL, R-TPT, TPS, RLCF) tune a :class:`~ttabench.shift.ShiftParameters`
text-feature shift in place of prompt tokens.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.spatial.distance import pdist

from .errors import DegenerateInput, ValidationError
from .scoring import (
    NORM_EPSILON,
    entropy,
    l2_normalize,
    log_prob_backward,
    safe_log,
    score,
    unit_rows_backward,
)
from .shift import (
    LossKind,
    LossSpec,
    OptimConfig,
    ShiftParameters,
    candidate_views,
    optimize_shift,
    select_confident_views,
)
from .tags import MethodTag

logger = logging.getLogger(__name__)

BANDWIDTH_MODES = ("median", "silverman")
ZERO_SELECTIONS = ("msp", "entropy")


@dataclass(frozen=True, eq=False)
class Prediction:
    hard_label: int
    method_tag: str
    probs: Optional[np.ndarray] = None
    confidence: Optional[float] = None

    @classmethod
    def from_probs(cls, probs, method_tag):
        probs = np.asarray(probs, dtype=np.float64)
        label = int(np.argmax(probs))
        return cls(hard_label=label, method_tag=str(method_tag), probs=probs, confidence=float(probs[label]))

    @classmethod
    def from_vote(cls, label, method_tag):
        return cls(hard_label=int(label), method_tag=str(method_tag))

    @property
    def has_confidence(self):
        return self.confidence is not None

    def __eq__(self, other):
        if not isinstance(other, Prediction):
            return NotImplemented
        if (self.probs is None) != (other.probs is None):
            return False
        return (
            self.hard_label == other.hard_label
            and self.method_tag == other.method_tag
            and self.confidence == other.confidence
            and (self.probs is None or np.array_equal(self.probs, other.probs))
        )


@dataclass(frozen=True)
class MTAConfig:
    iterations: int = 5
    bandwidth_mode: str = "median"

    def __post_init__(self):
        if not isinstance(self.iterations, int) or self.iterations < 0:
            raise ValidationError("mta.iterations must be a non-negative integer", field="mta.iterations")
        if self.bandwidth_mode not in BANDWIDTH_MODES:
            raise ValidationError(
                "mta.bandwidth_mode must be one of {}".format(", ".join(BANDWIDTH_MODES)), field="mta.bandwidth_mode"
            )


@dataclass(frozen=True)
class RLCFConfig:
    samples_per_step: int = 3
    reward_baseline: str = "mean"

    def __post_init__(self):
        if not isinstance(self.samples_per_step, int) or self.samples_per_step < 1:
            raise ValidationError("rlcf.samples_per_step must be a positive integer", field="rlcf.samples_per_step")
        if self.reward_baseline != "mean":
            raise ValidationError("rlcf.reward_baseline supports only 'mean'", field="rlcf.reward_baseline")


@dataclass(frozen=True)
class RTPTConfig:
    ensemble: bool = True


@dataclass(frozen=True)
class EpisodicConfig:
    optim: OptimConfig = field(default_factory=OptimConfig)
    loss: LossSpec = field(default_factory=LossSpec)
    mta: MTAConfig = field(default_factory=MTAConfig)
    rlcf: RLCFConfig = field(default_factory=RLCFConfig)
    rtpt: RTPTConfig = field(default_factory=RTPTConfig)
    zero_selection: str = "msp"

    def __post_init__(self):
        if self.zero_selection not in ZERO_SELECTIONS:
            raise ValidationError(
                "zero_selection must be one of {}".format(", ".join(ZERO_SELECTIONS)), field="zero_selection"
            )


def _predict_view(view, text_bank, rule, method_tag):
    _, probs = score(view, text_bank, rule)
    return Prediction.from_probs(probs, method_tag)


def zero_shot_predict(sample, text_bank, rule, cfg=None, rng=None, method_tag=MethodTag.zero_shot.value):
    return _predict_view(sample.weak_view, text_bank, rule, method_tag)


def _shift_and_predict(sample, text_bank, rule, cfg, kind, method_tag):
    text_bank = np.asarray(text_bank, dtype=np.float64)
    shift = optimize_shift(sample, text_bank, rule, replace(cfg.loss, kind=kind), cfg.optim)
    return _predict_view(sample.weak_view, shift.apply(text_bank), rule, method_tag), shift


def tpt_adapt(sample, text_bank, rule, cfg, rng=None):
    prediction, _ = _shift_and_predict(sample, text_bank, rule, cfg, LossKind.marginal_entropy, MethodTag.tpt.value)
    return prediction


def tps_adapt(sample, text_bank, rule, cfg, rng=None):
    prediction, _ = _shift_and_predict(sample, text_bank, rule, cfg, LossKind.marginal_entropy, MethodTag.tps.value)
    return prediction


def ctpt_adapt(sample, text_bank, rule, cfg, rng=None):
    prediction, _ = _shift_and_predict(
        sample, text_bank, rule, cfg, LossKind.marginal_entropy_plus_dispersion, MethodTag.ctpt.value
    )
    return prediction


def ttl_adapt(sample, text_bank, rule, cfg, rng=None):
    prediction, _ = _shift_and_predict(sample, text_bank, rule, cfg, LossKind.weighted_entropy, MethodTag.ttl.value)
    return prediction


def reliability_weights(view_probs):
    """``w_i ~ exp(-H(p_i)) * mean_j cos(p_i, p_j)``, normalized to sum to one."""
    view_probs = np.atleast_2d(np.asarray(view_probs, dtype=np.float64))
    unit = view_probs / np.linalg.norm(view_probs, axis=1, keepdims=True)
    agreement = (unit @ unit.T).mean(axis=1)
    weights = np.exp(-entropy(view_probs)) * agreement
    return weights / weights.sum()


def rtpt_adapt(sample, text_bank, rule, cfg, rng=None):
    text_bank = np.asarray(text_bank, dtype=np.float64)
    prediction, shift = _shift_and_predict(
        sample, text_bank, rule, cfg, LossKind.pointwise_entropy, MethodTag.rtpt.value
    )
    if not cfg.rtpt.ensemble:
        return prediction

    _, probs = score(candidate_views(sample.views), shift.apply(text_bank), rule)
    selected = probs[select_confident_views(probs, cfg.optim.selection_fraction)]
    return Prediction.from_probs(reliability_weights(selected) @ selected, MethodTag.rtpt.value)


def _gaussian_kernel(r):
    return np.exp(-0.5 * r ** 2)


def view_bandwidth(views, mode="median"):
    views = np.asarray(views, dtype=np.float64)
    n, d = views.shape
    if n < 2:
        return 0.0
    if mode == "median":
        return float(np.median(pdist(views)))
    if mode == "silverman":
        tr_cov = np.trace(np.atleast_2d(np.cov(views.T)))
        return float(np.sqrt((1.0 / d) * tr_cov * (4.0 / ((2 * d + 1) * n)) ** (2.0 / (d + 4))))
    raise ValidationError("unknown bandwidth mode {!r}".format(mode), field="mta.bandwidth_mode")


def mean_shift_mode(views, iterations=5, bandwidth_mode="median"):
    """Weighted mean-shift mode of the views, seeded at the weak view.

    Returns ``(mode, inlierness)``, or ``None`` when the bandwidth degenerates.
    """
    views = np.asarray(views, dtype=np.float64)
    V = views.shape[0]
    h = view_bandwidth(views, bandwidth_mode)
    if V == 1 or not h > NORM_EPSILON:
        return None

    mode = views[0]
    inlierness = np.full(V, 1.0 / V)
    for _ in range(iterations):
        weights = inlierness * _gaussian_kernel(np.linalg.norm(views - mode, axis=1) / h)
        if not weights.sum() > 0:
            return None
        try:
            mode = l2_normalize(weights @ views)
        except DegenerateInput:
            return None
        kernel = _gaussian_kernel(np.linalg.norm(views - mode, axis=1) / h)
        if not kernel.sum() > 0:
            return None
        inlierness = kernel / kernel.sum()
    return mode, inlierness


def mta_adapt(sample, text_bank, rule, cfg, rng=None):
    result = mean_shift_mode(sample.views, cfg.mta.iterations, cfg.mta.bandwidth_mode)
    if result is None:
        if sample.num_views > 1:
            logger.log(
                logging.WARNING,
                "Degenerate mean-shift bandwidth for {sample_id}; using the weak view",
                extra={"sample_id": sample.id},
            )
        return _predict_view(sample.weak_view, text_bank, rule, MethodTag.mta.value)
    mode, _ = result
    return _predict_view(mode, text_bank, rule, MethodTag.mta.value)


def plurality_vote(votes, num_classes):
    """Most frequent class; ties go to the lowest class index."""
    return int(np.bincount(np.asarray(votes, dtype=np.int64), minlength=num_classes).argmax())


def zero_adapt(sample, text_bank, rule, cfg, rng=None):
    text_bank = np.asarray(text_bank, dtype=np.float64)
    _, probs = score(candidate_views(sample.views), text_bank, rule)
    selected = select_confident_views(probs, cfg.optim.selection_fraction, by=cfg.zero_selection)
    votes = np.argmax(probs[selected], axis=1)
    return Prediction.from_vote(plurality_vote(votes, text_bank.shape[0]), MethodTag.zero.value)


def sample_classes(probs, count, rng):
    """``count`` distinct classes drawn without replacement with probability ``probs`` (Gumbel top-k)."""
    keys = np.where(probs > 0, safe_log(probs), -np.inf) + rng.gumbel(size=probs.shape[0])
    return np.argsort(-keys, kind="stable")[:count]


def reinforce_gradient(view, text_bank, shift, rule, classes, rewards):
    """Ascent direction ``sum_c (r_c - mean r) * d log p(c) / d delta`` for one view."""
    view = np.asarray(view, dtype=np.float64)
    rewards = np.asarray(rewards, dtype=np.float64)
    advantages = np.zeros(text_bank.shape[0])
    np.add.at(advantages, np.asarray(classes), rewards - rewards.mean())

    raw = text_bank + shift.delta
    bank = shift.apply(text_bank)
    logits, probs = score(view, bank, rule)
    grad_logits = log_prob_backward(logits, probs, advantages, rule)
    return unit_rows_backward(raw, bank, rule.scale * np.outer(grad_logits, view))


def rlcf_adapt(sample, text_bank, rule, cfg, rng=None):
    text_bank = np.asarray(text_bank, dtype=np.float64)
    C = text_bank.shape[0]
    K = cfg.rlcf.samples_per_step
    if K > C:
        raise ValidationError(
            "rlcf.samples_per_step ({}) exceeds the number of classes ({})".format(K, C), field="rlcf.samples_per_step"
        )
    rng = rng if rng is not None else np.random.default_rng(0)
    reward_bank = text_bank if cfg.loss.reward_bank is None else np.asarray(cfg.loss.reward_bank, dtype=np.float64)
    if reward_bank.shape != text_bank.shape:
        raise ValidationError(
            "reward bank shape {} does not match text bank {}".format(reward_bank.shape, text_bank.shape)
        )

    weak = sample.weak_view.astype(np.float64)
    rewards = reward_bank @ weak
    shift = ShiftParameters.like(text_bank)
    for step in range(cfg.optim.steps):
        _, probs = score(weak, shift.apply(text_bank), rule)
        classes = sample_classes(probs, K, rng)
        grad = reinforce_gradient(weak, text_bank, shift, rule, classes, rewards[classes])
        shift.delta = shift.delta + cfg.optim.learning_rate * grad
    return _predict_view(weak, shift.apply(text_bank), rule, MethodTag.rlcf.value)


EPISODIC_METHODS = {
    MethodTag.zero_shot: zero_shot_predict,
    MethodTag.tpt: tpt_adapt,
    MethodTag.ctpt: ctpt_adapt,
    MethodTag.rlcf: rlcf_adapt,
    MethodTag.mta: mta_adapt,
    MethodTag.zero: zero_adapt,
    MethodTag.ttl: ttl_adapt,
    MethodTag.tps: tps_adapt,
    MethodTag.rtpt: rtpt_adapt,
}
