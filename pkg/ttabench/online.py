"""Online adaptation: per-method state machines threaded through a fixed-order stream, one sample at a time.

Every ``*_step(state, sample, text_bank, rule, cfg)`` predicts from the state as it was before the sample
arrived, then folds the sample into the state, and returns ``(prediction, state)``. States are mutated in
place and must not be shared between concurrently running streams.
"""
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Tuple

import numpy as np

from .episodic import Prediction
from .errors import ValidationError
from .scoring import (
    entropy,
    entropy_grad,
    l2_normalize,
    log_prob_backward,
    logits_backward,
    max_prob_gap,
    normalize_rows,
    probs_from_logits,
    score,
    unit_rows_backward,
)
from .shift import (
    LossKind,
    LossSpec,
    OptimConfig,
    ShiftParameters,
    apply_shift,
    candidate_views,
    descend,
    select_confident_views,
)
from .tags import MethodTag

logger = logging.getLogger(__name__)


def _check_non_negative(config, *names):
    for name in names:
        value = getattr(config, name)
        if not value >= 0:
            raise ValidationError("{} must be non-negative, got {!r}".format(name, value), field=name)


def _check_fraction(config, *names):
    for name in names:
        value = getattr(config, name)
        if not 0 <= value <= 1:
            raise ValidationError("{} must lie in [0, 1], got {!r}".format(name, value), field=name)


def _check_capacity(config, *names):
    for name in names:
        value = getattr(config, name)
        if not isinstance(value, int) or isinstance(value, bool) or value < 0:
            raise ValidationError("{} must be a non-negative integer, got {!r}".format(name, value), field=name)


def _check_band(config, name):
    low, high = getattr(config, name)
    if not 0 <= low <= high:
        raise ValidationError("{} must be an ordered pair of non-negative bounds".format(name), field=name)


@dataclass(frozen=True)
class TDAConfig:
    pos_capacity: int = 3
    neg_capacity: int = 2
    pos_alpha: float = 2.0
    pos_gamma: float = 5.0
    neg_beta: float = 0.117
    neg_gamma: float = 1.0
    neg_entropy_band: Tuple[float, float] = (0.2, 0.5)
    neg_mask_band: Tuple[float, float] = (0.03, 1.0)

    def __post_init__(self):
        _check_capacity(self, "pos_capacity", "neg_capacity")
        _check_non_negative(self, "pos_alpha", "pos_gamma", "neg_beta", "neg_gamma")
        object.__setattr__(self, "neg_entropy_band", tuple(self.neg_entropy_band))
        object.__setattr__(self, "neg_mask_band", tuple(self.neg_mask_band))
        _check_band(self, "neg_entropy_band")
        _check_band(self, "neg_mask_band")


@dataclass(frozen=True)
class DMNConfig:
    memory_per_class: int = 50
    alpha: float = 1.0
    use_aug: bool = True
    selection_fraction: float = 0.1

    def __post_init__(self):
        _check_capacity(self, "memory_per_class")
        _check_non_negative(self, "alpha")
        if not 0 < self.selection_fraction <= 1:
            raise ValidationError("selection_fraction must lie in (0, 1]", field="selection_fraction")


@dataclass(frozen=True)
class OnZetaConfig:
    label_rate: float = 0.05
    temper: float = 0.5
    mix: float = 0.3
    proxy_lr: float = 1e-3

    def __post_init__(self):
        _check_fraction(self, "label_rate", "mix")
        _check_non_negative(self, "temper", "proxy_lr")


@dataclass(frozen=True)
class BoostAdapterConfig:
    hist_capacity: int = 3
    alpha: float = 2.0
    gamma: float = 5.0
    boosting: bool = True
    selection_fraction: float = 0.1

    def __post_init__(self):
        _check_capacity(self, "hist_capacity")
        _check_non_negative(self, "alpha", "gamma")
        if not 0 < self.selection_fraction <= 1:
            raise ValidationError("selection_fraction must lie in (0, 1]", field="selection_fraction")


@dataclass(frozen=True)
class DPEConfig:
    residual_steps: int = 1
    learning_rate: float = 5e-4
    mix_weight: float = 0.5
    align_weight: float = 1.0
    update_threshold: float = 0.5
    momentum: float = 0.9
    accumulate_text_residual: bool = False

    def __post_init__(self):
        _check_capacity(self, "residual_steps")
        _check_non_negative(self, "learning_rate", "align_weight", "update_threshold")
        _check_fraction(self, "mix_weight", "momentum")


@dataclass(frozen=True)
class ECALPConfig:
    window: Optional[int] = 64
    alpha: float = 0.5
    iterations: int = 20
    knn: int = 8
    gamma: float = 3.0
    reweight: bool = True

    def __post_init__(self):
        if self.window is not None:
            _check_capacity(self, "window")
        _check_capacity(self, "iterations", "knn")
        _check_non_negative(self, "gamma")
        if not 0 <= self.alpha < 1:
            raise ValidationError("alpha must lie in [0, 1)", field="alpha")


@dataclass(frozen=True)
class DynaPromptConfig:
    capacity: int = 10
    optim: OptimConfig = field(default_factory=OptimConfig)

    def __post_init__(self):
        if not isinstance(self.capacity, int) or self.capacity < 1:
            raise ValidationError("capacity must be a positive integer", field="capacity")


@dataclass(eq=False)
class CacheEntry:
    feature: np.ndarray
    entropy: float
    pseudo_label: int
    probs: np.ndarray

    @classmethod
    def from_probs(cls, feature, probs):
        probs = np.asarray(probs, dtype=np.float64)
        return cls(
            feature=np.asarray(feature, dtype=np.float64),
            entropy=float(entropy(probs)),
            pseudo_label=int(np.argmax(probs)),
            probs=probs,
        )


class ClassCache(object):
    """Per-pseudo-label store keeping the ``capacity`` lowest-entropy entries of each class."""

    def __init__(self, capacity):
        if capacity < 0:
            raise ValidationError("cache capacity must be non-negative")
        self.capacity = capacity
        self._buckets = {}

    def __len__(self):
        return sum(len(bucket) for bucket in self._buckets.values())

    def size(self, label):
        return len(self._buckets.get(label, ()))

    def sizes(self):
        return {label: len(bucket) for label, bucket in self._buckets.items()}

    def entries(self):
        for label in sorted(self._buckets):
            yield from self._buckets[label]

    def offer(self, entry):
        """Insert ``entry``, evicting the highest-entropy entry of its class when full."""
        if self.capacity == 0:
            return False
        bucket = self._buckets.setdefault(entry.pseudo_label, [])
        if len(bucket) >= self.capacity:
            if entry.entropy >= bucket[-1].entropy:
                return False
            bucket.pop()
        bucket.append(entry)
        bucket.sort(key=lambda e: e.entropy)
        return True

    def keys(self, dim):
        entries = list(self.entries())
        if not entries:
            return np.zeros((0, dim))
        return np.stack([entry.feature for entry in entries])

    def one_hot_values(self, num_classes):
        labels = [entry.pseudo_label for entry in self.entries()]
        return np.eye(num_classes)[labels] if labels else np.zeros((0, num_classes))

    def band_mask_values(self, num_classes, band):
        low, high = band
        probs = [entry.probs for entry in self.entries()]
        if not probs:
            return np.zeros((0, num_classes))
        probs = np.stack(probs)
        return ((probs > low) & (probs < high)).astype(np.float64)

    def to_arrays(self, prefix, dim, num_classes):
        entries = list(self.entries())
        return {
            prefix + "features": self.keys(dim),
            prefix + "entropies": np.array([e.entropy for e in entries], dtype=np.float64),
            prefix + "labels": np.array([e.pseudo_label for e in entries], dtype=np.int64),
            prefix + "probs": np.stack([e.probs for e in entries]) if entries else np.zeros((0, num_classes)),
        }

    @classmethod
    def from_arrays(cls, capacity, arrays, prefix):
        cache = cls(capacity)
        columns = [arrays[prefix + name] for name in ("features", "entropies", "labels", "probs")]
        for feature, h, label, probs in zip(*columns):
            entry = CacheEntry(feature.copy(), float(h), int(label), probs.copy())
            cache._buckets.setdefault(int(label), []).append(entry)
        return cache


def cache_attention(x, keys, values, gamma):
    """``sum_i exp(gamma * (cos(x, key_i) - 1)) * value_i``; zero for an empty cache."""
    if keys.shape[0] == 0:
        return np.zeros(values.shape[1])
    return np.exp(gamma * (keys @ x - 1.0)) @ values


class OnlineState(object):
    method_tag = None

    def __init__(self, num_classes, dim, seed=0):
        self.num_classes = num_classes
        self.dim = dim
        self.seed = seed
        self.step_counter = 0
        self.rng = np.random.default_rng(seed)

    def advance(self):
        self.step_counter += 1

    def to_arrays(self):
        return {}

    def to_meta(self):
        return {}

    def restore(self, meta, arrays):
        pass


class ZeroShotState(OnlineState):
    method_tag = MethodTag.zero_shot


class TDAState(OnlineState):
    method_tag = MethodTag.tda

    def __init__(self, num_classes, dim, cfg, seed=0):
        super().__init__(num_classes, dim, seed)
        self.positive = ClassCache(cfg.pos_capacity)
        self.negative = ClassCache(cfg.neg_capacity)

    def to_arrays(self):
        arrays = self.positive.to_arrays("pos_", self.dim, self.num_classes)
        arrays.update(self.negative.to_arrays("neg_", self.dim, self.num_classes))
        return arrays

    def restore(self, meta, arrays):
        self.positive = ClassCache.from_arrays(self.positive.capacity, arrays, "pos_")
        self.negative = ClassCache.from_arrays(self.negative.capacity, arrays, "neg_")


class DMNState(OnlineState):
    method_tag = MethodTag.dmn

    def __init__(self, num_classes, dim, cfg, seed=0, method_tag=MethodTag.dmn):
        super().__init__(num_classes, dim, seed)
        self.method_tag = method_tag
        self.memory = ClassCache(cfg.memory_per_class)

    def to_arrays(self):
        return self.memory.to_arrays("mem_", self.dim, self.num_classes)

    def restore(self, meta, arrays):
        self.memory = ClassCache.from_arrays(self.memory.capacity, arrays, "mem_")


class OnZetaState(OnlineState):
    method_tag = MethodTag.onzeta

    def __init__(self, num_classes, dim, text_bank, seed=0):
        super().__init__(num_classes, dim, seed)
        self.label_dist = np.full(num_classes, 1.0 / num_classes)
        self.proxies = np.array(text_bank, dtype=np.float64)

    def to_arrays(self):
        return {"label_dist": self.label_dist, "proxies": self.proxies}

    def restore(self, meta, arrays):
        self.label_dist = arrays["label_dist"].copy()
        self.proxies = arrays["proxies"].copy()


class BoostAdapterState(OnlineState):
    method_tag = MethodTag.boostadapter

    def __init__(self, num_classes, dim, cfg, seed=0):
        super().__init__(num_classes, dim, seed)
        self.historical = ClassCache(cfg.hist_capacity)

    def to_arrays(self):
        return self.historical.to_arrays("hist_", self.dim, self.num_classes)

    def restore(self, meta, arrays):
        self.historical = ClassCache.from_arrays(self.historical.capacity, arrays, "hist_")


class DPEState(OnlineState):
    method_tag = MethodTag.dpe

    def __init__(self, num_classes, dim, text_bank, seed=0):
        super().__init__(num_classes, dim, seed)
        self.text_protos = np.array(text_bank, dtype=np.float64)
        self.vision_protos = np.array(text_bank, dtype=np.float64)
        self.counts = np.zeros(num_classes, dtype=np.int64)

    def to_arrays(self):
        return {"text_protos": self.text_protos, "vision_protos": self.vision_protos, "counts": self.counts}

    def restore(self, meta, arrays):
        self.text_protos = arrays["text_protos"].copy()
        self.vision_protos = arrays["vision_protos"].copy()
        self.counts = arrays["counts"].copy()


class ECALPState(OnlineState):
    method_tag = MethodTag.ecalp

    def __init__(self, num_classes, dim, cfg, seed=0):
        super().__init__(num_classes, dim, seed)
        self.window = deque(maxlen=cfg.window)

    def to_arrays(self):
        features = [feature for feature, _ in self.window]
        probs = [p for _, p in self.window]
        return {
            "window_features": np.stack(features) if features else np.zeros((0, self.dim)),
            "window_probs": np.stack(probs) if probs else np.zeros((0, self.num_classes)),
        }

    def restore(self, meta, arrays):
        self.window.clear()
        for feature, probs in zip(arrays["window_features"], arrays["window_probs"]):
            self.window.append((feature.copy(), probs.copy()))


class DynaPromptState(OnlineState):
    method_tag = MethodTag.dynaprompt

    def __init__(self, num_classes, dim, cfg, seed=0):
        super().__init__(num_classes, dim, seed)
        self.capacity = cfg.capacity
        self.shifts = [np.zeros((num_classes, dim))]
        self.last_selected = [0]

    def append_fresh(self):
        if len(self.shifts) >= self.capacity:
            stale = int(np.argmin(self.last_selected))
            del self.shifts[stale]
            del self.last_selected[stale]
        self.shifts.append(np.zeros((self.num_classes, self.dim)))
        self.last_selected.append(self.step_counter)
        return len(self.shifts) - 1

    def to_arrays(self):
        return {
            "shifts": np.stack(self.shifts),
            "last_selected": np.array(self.last_selected, dtype=np.int64),
        }

    def restore(self, meta, arrays):
        self.shifts = [delta.copy() for delta in arrays["shifts"]]
        self.last_selected = [int(step) for step in arrays["last_selected"]]


def zero_shot_step(state, sample, text_bank, rule, cfg=None):
    _, probs = score(sample.weak_view, text_bank, rule)
    state.advance()
    return Prediction.from_probs(probs, MethodTag.zero_shot.value), state


def tda_step(state, sample, text_bank, rule, cfg):
    x = sample.weak_view.astype(np.float64)
    C = text_bank.shape[0]
    logits, probs = score(x, text_bank, rule)

    positive = cache_attention(x, state.positive.keys(state.dim), state.positive.one_hot_values(C), cfg.pos_gamma)
    negative = cache_attention(
        x, state.negative.keys(state.dim), state.negative.band_mask_values(C, cfg.neg_mask_band), cfg.neg_gamma
    )
    final = logits + cfg.pos_alpha * positive
    final = final - cfg.neg_beta * negative
    prediction = Prediction.from_probs(probs_from_logits(final, rule), MethodTag.tda.value)

    entry = CacheEntry.from_probs(x, probs)
    state.positive.offer(entry)
    low, high = cfg.neg_entropy_band
    max_entropy = np.log(C)
    if C > 1 and low * max_entropy <= entry.entropy <= high * max_entropy:
        state.negative.offer(entry)
    state.advance()
    return prediction, state


def dmn_readout(features, probs):
    """Readout rows ``w_k = normalize(sum_m probs_m[k] * feature_m)``; rows with no mass stay zero."""
    weighted = np.asarray(probs, dtype=np.float64).T @ np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(weighted, axis=1, keepdims=True)
    return np.divide(weighted, norms, out=np.zeros_like(weighted), where=norms > 0)


def _memory_feature(sample, text_bank, rule, cfg):
    if not cfg.use_aug or sample.num_views == 1:
        return sample.weak_view.astype(np.float64)
    candidates = candidate_views(sample.views)
    _, probs = score(candidates, text_bank, rule)
    selected = select_confident_views(probs, cfg.selection_fraction)
    return l2_normalize(candidates[selected].mean(axis=0))


def dmn_step(state, sample, text_bank, rule, cfg):
    x = sample.weak_view.astype(np.float64)
    C = text_bank.shape[0]
    logits, _ = score(x, text_bank, rule)

    entries = list(state.memory.entries())
    if entries:
        readout = dmn_readout([e.feature for e in entries], [e.probs for e in entries])
    else:
        readout = np.zeros((C, state.dim))
    final = logits + cfg.alpha * rule.scale * (x @ readout.T)
    prediction = Prediction.from_probs(probs_from_logits(final, rule), state.method_tag.value)

    feature = _memory_feature(sample, text_bank, rule, cfg)
    _, feature_probs = score(feature, text_bank, rule)
    state.memory.offer(CacheEntry.from_probs(feature, feature_probs))
    state.advance()
    return prediction, state


def onzeta_step(state, sample, text_bank, rule, cfg):
    x = sample.weak_view.astype(np.float64)
    _, text_probs = score(x, text_bank, rule)
    if cfg.temper:
        tempered = text_probs / np.maximum(state.label_dist, np.finfo(np.float64).tiny) ** cfg.temper
        tempered = tempered / tempered.sum()
    else:
        tempered = text_probs
    proxy_logits, proxy_probs = score(x, state.proxies, rule)
    final = (1.0 - cfg.mix) * tempered + cfg.mix * proxy_probs
    prediction = Prediction.from_probs(final, MethodTag.onzeta.value)

    label_dist = (1.0 - cfg.label_rate) * state.label_dist + cfg.label_rate * text_probs
    state.label_dist = label_dist / label_dist.sum()
    target = np.zeros(state.num_classes)
    target[prediction.hard_label] = 1.0
    grad_logits = -log_prob_backward(proxy_logits, proxy_probs, target, rule)
    state.proxies = normalize_rows(state.proxies - cfg.proxy_lr * rule.scale * np.outer(grad_logits, x))
    state.advance()
    return prediction, state


def boostadapter_step(state, sample, text_bank, rule, cfg):
    x = sample.weak_view.astype(np.float64)
    C = text_bank.shape[0]
    logits, probs = score(x, text_bank, rule)

    keys = state.historical.keys(state.dim)
    values = state.historical.one_hot_values(C)
    if cfg.boosting:
        candidates = candidate_views(sample.views)
        _, candidate_probs = score(candidates, text_bank, rule)
        selected = select_confident_views(candidate_probs, cfg.selection_fraction)
        keys = np.concatenate([keys, candidates[selected]])
        values = np.concatenate([values, np.eye(C)[np.argmax(candidate_probs[selected], axis=1)]])
    final = logits + cfg.alpha * cache_attention(x, keys, values, cfg.gamma)
    prediction = Prediction.from_probs(probs_from_logits(final, rule), MethodTag.boostadapter.value)

    state.historical.offer(CacheEntry.from_probs(x, probs))
    state.advance()
    return prediction, state


def dpe_mixed_scores(x, text_protos, vision_protos, rule, mix_weight):
    """``(logits, probs)`` of the convex mixture of text-prototype and vision-prototype logits."""
    text_logits, _ = score(x, text_protos, rule)
    vision_logits, _ = score(x, vision_protos, rule)
    logits = (1.0 - mix_weight) * text_logits + mix_weight * vision_logits
    return logits, probs_from_logits(logits, rule)


def dpe_loss_and_grad(x, text_protos, vision_protos, text_residual, vision_residual, rule, cfg):
    """Loss ``H(p_mix) + eta * (1 - t'_k . v'_k)`` at the predicted class ``k`` and its residual gradients."""
    x = np.asarray(x, dtype=np.float64)
    text_shifted = apply_shift(text_protos, text_residual)
    vision_shifted = apply_shift(vision_protos, vision_residual)
    logits, probs = dpe_mixed_scores(x, text_shifted, vision_shifted, rule, cfg.mix_weight)
    k = int(np.argmax(probs))
    loss = float(entropy(probs)) + cfg.align_weight * (1.0 - float(text_shifted[k] @ vision_shifted[k]))

    grad_logits = logits_backward(logits, probs, entropy_grad(probs), rule)
    grad_scores = rule.scale * np.outer(grad_logits, x)
    grad_text = (1.0 - cfg.mix_weight) * grad_scores
    grad_vision = cfg.mix_weight * grad_scores
    grad_text[k] -= cfg.align_weight * vision_shifted[k]
    grad_vision[k] -= cfg.align_weight * text_shifted[k]
    return (
        loss,
        unit_rows_backward(text_protos + text_residual, text_shifted, grad_text),
        unit_rows_backward(vision_protos + vision_residual, vision_shifted, grad_vision),
    )


def dpe_step(state, sample, text_bank, rule, cfg):
    x = sample.weak_view.astype(np.float64)
    text_residual = np.zeros_like(state.text_protos)
    vision_residual = np.zeros_like(state.vision_protos)
    for _ in range(cfg.residual_steps):
        _, grad_text, grad_vision = dpe_loss_and_grad(
            x, state.text_protos, state.vision_protos, text_residual, vision_residual, rule, cfg
        )
        text_residual = text_residual - cfg.learning_rate * grad_text
        vision_residual = vision_residual - cfg.learning_rate * grad_vision

    text_shifted = apply_shift(state.text_protos, text_residual)
    vision_shifted = apply_shift(state.vision_protos, vision_residual)
    _, probs = dpe_mixed_scores(x, text_shifted, vision_shifted, rule, cfg.mix_weight)
    prediction = Prediction.from_probs(probs, MethodTag.dpe.value)

    k = prediction.hard_label
    if prediction.confidence >= cfg.update_threshold:
        state.vision_protos[k] = l2_normalize(cfg.momentum * state.vision_protos[k] + (1.0 - cfg.momentum) * x)
        state.counts[k] += 1
        if cfg.accumulate_text_residual:
            state.text_protos[k] = text_shifted[k]
    state.advance()
    return prediction, state


def dimension_weights(text_bank):
    """Per-dimension variance of the class text features, rescaled to mean one."""
    variance = np.var(np.asarray(text_bank, dtype=np.float64), axis=0)
    mean = variance.mean()
    if not mean > 0:
        return np.ones_like(variance)
    return variance / mean


def build_affinity(nodes, dim_weights, gamma, knn):
    """Symmetric, degree-normalized affinity ``D^-1/2 A D^-1/2`` over the node features."""
    features = normalize_rows(np.asarray(nodes, dtype=np.float64) * dim_weights)
    affinity = np.maximum(features @ features.T, 0.0) ** gamma
    np.fill_diagonal(affinity, 0.0)
    n = affinity.shape[0]
    if knn and knn < n - 1:
        drop = np.argsort(-affinity, axis=1, kind="stable")[:, knn:]
        np.put_along_axis(affinity, drop, 0.0, axis=1)
    affinity = (affinity + affinity.T) / 2.0
    degree = affinity.sum(axis=1)
    inv_sqrt = np.divide(1.0, np.sqrt(degree), out=np.zeros_like(degree), where=degree > 0)
    return inv_sqrt[:, None] * affinity * inv_sqrt[None, :]


def propagate_labels(affinity, seeds, alpha, iterations):
    seeds = np.asarray(seeds, dtype=np.float64)
    labels = seeds.copy()
    for _ in range(iterations):
        labels = (1.0 - alpha) * seeds + alpha * affinity @ labels
    return labels


def ecalp_step(state, sample, text_bank, rule, cfg):
    x = sample.weak_view.astype(np.float64)
    C = text_bank.shape[0]
    _, probs = score(x, text_bank, rule)

    window_features = [feature for feature, _ in state.window]
    window_probs = [p for _, p in state.window]
    nodes = np.vstack([text_bank] + window_features + [x])
    seeds = np.vstack([np.eye(C)] + window_probs + [probs])
    weights = dimension_weights(text_bank) if cfg.reweight else np.ones(state.dim)
    affinity = build_affinity(nodes, weights, cfg.gamma, cfg.knn)
    row = propagate_labels(affinity, seeds, cfg.alpha, cfg.iterations)[-1]
    prediction = Prediction.from_probs(row / row.sum(), MethodTag.ecalp.value)

    if state.window.maxlen != 0:
        state.window.append((x, probs))
    state.advance()
    return prediction, state


def dynaprompt_step(state, sample, text_bank, rule, cfg):
    x = sample.weak_view.astype(np.float64)
    buffered = np.stack([score(x, apply_shift(text_bank, delta), rule)[1] for delta in state.shifts])
    entropies = entropy(buffered)
    gaps = max_prob_gap(buffered)
    entropy_cut = np.median(entropies)
    gap_cut = np.median(gaps)
    selected = [i for i in range(len(state.shifts)) if entropies[i] <= entropy_cut and gaps[i] >= gap_cut]
    if not selected:
        selected = [state.append_fresh()]
        logger.log(
            logging.DEBUG,
            "Appended a fresh shift at step {step} ({buffer_size} buffered)",
            extra={"step": state.step_counter, "buffer_size": len(state.shifts)},
        )

    candidates = candidate_views(sample.views)
    spec = LossSpec(kind=LossKind.marginal_entropy)
    selected_probs = []
    for i in selected:
        shift = descend(ShiftParameters(state.shifts[i]), candidates, text_bank, rule, spec, cfg.optim)
        state.shifts[i] = shift.delta
        state.last_selected[i] = state.step_counter
        selected_probs.append(score(x, shift.apply(text_bank), rule)[1])
    prediction = Prediction.from_probs(np.mean(selected_probs, axis=0), MethodTag.dynaprompt.value)
    state.advance()
    return prediction, state


class OnlineMethod(NamedTuple):
    init_state: Callable[..., OnlineState]
    step: Callable


ONLINE_METHODS = {
    MethodTag.zero_shot: OnlineMethod(lambda bank, cfg, seed: ZeroShotState(*bank.shape, seed=seed), zero_shot_step),
    MethodTag.tda: OnlineMethod(lambda bank, cfg, seed: TDAState(*bank.shape, cfg, seed=seed), tda_step),
    MethodTag.dmn: OnlineMethod(
        lambda bank, cfg, seed: DMNState(*bank.shape, cfg, seed=seed, method_tag=MethodTag.dmn), dmn_step
    ),
    MethodTag.dmn_w: OnlineMethod(
        lambda bank, cfg, seed: DMNState(*bank.shape, cfg, seed=seed, method_tag=MethodTag.dmn_w), dmn_step
    ),
    MethodTag.onzeta: OnlineMethod(lambda bank, cfg, seed: OnZetaState(*bank.shape, bank, seed=seed), onzeta_step),
    MethodTag.boostadapter: OnlineMethod(
        lambda bank, cfg, seed: BoostAdapterState(*bank.shape, cfg, seed=seed), boostadapter_step
    ),
    MethodTag.dpe: OnlineMethod(lambda bank, cfg, seed: DPEState(*bank.shape, bank, seed=seed), dpe_step),
    MethodTag.ecalp: OnlineMethod(lambda bank, cfg, seed: ECALPState(*bank.shape, cfg, seed=seed), ecalp_step),
    MethodTag.dynaprompt: OnlineMethod(
        lambda bank, cfg, seed: DynaPromptState(*bank.shape, cfg, seed=seed), dynaprompt_step
    ),
}


def init_state(method_tag, text_bank, cfg, seed=0):
    return ONLINE_METHODS[MethodTag(method_tag)].init_state(np.asarray(text_bank, dtype=np.float64), cfg, seed)


def run_stream(method_tag, samples, text_bank, rule, cfg, state=None, seed=0):
    """Yield ``(sample, prediction)`` over ``samples`` in the given order, threading one state."""
    method = ONLINE_METHODS[MethodTag(method_tag)]
    text_bank = np.asarray(text_bank, dtype=np.float64)
    if state is None:
        state = method.init_state(text_bank, cfg, seed)
    for sample in samples:
        prediction, state = method.step(state, sample, text_bank, rule, cfg)
        yield sample, prediction
