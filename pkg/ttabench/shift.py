"""Text-feature shifts and the entropy-family objectives that tune them.

Prompt tuning is modelled as a per-class additive shift of the class text features, re-normalized
after application: ``t'_k = normalize(t_k + delta_k)``. Gradients are exact, including the Jacobian of
the re-normalization.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum, unique
from typing import List, Optional

import numpy as np

from .errors import DimensionMismatch, ValidationError
from .scoring import (
    entropy,
    entropy_grad,
    logits_backward,
    logits_from_cosine,
    normalize_rows,
    probs_from_logits,
    score,
    unit_rows_backward,
)

logger = logging.getLogger(__name__)

_FLOOR_SLACK = 1e-9


@unique
class LossKind(Enum):
    marginal_entropy = "marginal_entropy"
    marginal_entropy_plus_dispersion = "marginal_entropy_plus_dispersion"
    pointwise_entropy = "pointwise_entropy"
    weighted_entropy = "weighted_entropy"
    reinforce_reward = "reinforce_reward"


@dataclass(frozen=True)
class LossSpec:
    kind: LossKind = LossKind.marginal_entropy
    dispersion_weight: float = 1.0
    epsilon: float = 0.0
    reward_bank: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        if not self.dispersion_weight >= 0:
            raise ValidationError("dispersion_weight (lambda) must be non-negative", field="dispersion_weight")


@dataclass(frozen=True)
class OptimConfig:
    steps: int = 1
    learning_rate: float = 5e-3
    selection_fraction: float = 0.1
    reselect: bool = True

    def __post_init__(self):
        if not isinstance(self.steps, int) or self.steps < 0:
            raise ValidationError("steps must be a non-negative integer", field="steps")
        if not self.learning_rate >= 0:
            raise ValidationError("learning_rate must be non-negative", field="learning_rate")
        if not 0 < self.selection_fraction <= 1:
            raise ValidationError("selection_fraction must lie in (0, 1]", field="selection_fraction")


def apply_shift(text_bank, delta):
    """Shifted, re-normalized bank. A zero shift returns the bank untouched."""
    if not np.any(delta):
        return text_bank
    return normalize_rows(text_bank + delta)


@dataclass(eq=False)
class ShiftParameters:
    delta: np.ndarray
    loss_history: List[float] = field(default_factory=list)

    @classmethod
    def zeros(cls, num_classes, dim):
        return cls(np.zeros((num_classes, dim), dtype=np.float64))

    @classmethod
    def like(cls, text_bank):
        return cls.zeros(*np.shape(text_bank))

    def apply(self, text_bank):
        return apply_shift(text_bank, self.delta)

    @property
    def is_identity(self):
        return not np.any(self.delta)


def selection_count(num_views, rho):
    return max(1, int(math.floor(rho * num_views + _FLOOR_SLACK)))


def select_confident_views(view_probs, rho, by="entropy"):
    """Indices of the ``max(1, floor(rho * V))`` most confident views, most confident first.

    ``by="entropy"`` ranks by ascending entropy, ``by="msp"`` by descending max probability; ties go
    to the lower index.
    """
    view_probs = np.asarray(view_probs, dtype=np.float64)
    if view_probs.ndim != 2 or view_probs.shape[0] == 0:
        raise ValidationError("view probabilities must be a non-empty [V x C] stack")
    if not 0 < rho <= 1:
        raise ValidationError("selection fraction must lie in (0, 1], got {}".format(rho), field="selection_fraction")
    if by == "entropy":
        keys = entropy(view_probs)
    elif by == "msp":
        keys = -view_probs.max(axis=1)
    else:
        raise ValidationError("unknown view selection criterion {!r}".format(by), field="selection")
    order = np.argsort(keys, kind="stable")
    return order[:selection_count(view_probs.shape[0], rho)]


def candidate_views(views):
    """Augmented views (rows 1..V-1), or the weak view alone when it is the only one."""
    views = np.asarray(views, dtype=np.float64)
    return views[1:] if views.shape[0] > 1 else views[:1]


def dispersion_and_grad(bank):
    """``sum_k |mean(bank) - bank_k|`` and its gradient with respect to the bank rows."""
    residual = bank.mean(axis=0) - bank
    norms = np.linalg.norm(residual, axis=1, keepdims=True)
    directions = np.divide(residual, norms, out=np.zeros_like(residual), where=norms > 0)
    return float(norms.sum()), directions.sum(axis=0) / bank.shape[0] - directions


def loss_and_grad(selected_views, text_bank, shift, rule, spec):
    views = np.atleast_2d(np.asarray(selected_views, dtype=np.float64))
    text_bank = np.asarray(text_bank, dtype=np.float64)
    M = views.shape[0]
    if M < 1:
        raise ValidationError("at least one view is required")
    if views.shape[1] != text_bank.shape[1] or shift.delta.shape != text_bank.shape:
        raise DimensionMismatch(
            "views {}, text bank {} and shift {} disagree".format(views.shape, text_bank.shape, shift.delta.shape)
        )

    raw = text_bank + shift.delta
    bank = shift.apply(text_bank)
    logits = logits_from_cosine(views @ bank.T, rule)
    probs = probs_from_logits(logits, rule)

    if spec.kind in (LossKind.marginal_entropy, LossKind.marginal_entropy_plus_dispersion):
        mean_probs = probs.mean(axis=0)
        loss = float(entropy(mean_probs))
        grad_probs = np.broadcast_to(entropy_grad(mean_probs) / M, probs.shape)
    elif spec.kind is LossKind.pointwise_entropy:
        loss = float(entropy(probs).mean())
        grad_probs = entropy_grad(probs) / M
    elif spec.kind is LossKind.weighted_entropy:
        # beta(x) = 1 / exp(-H(x) - eps) weights each view and is not differentiated
        view_entropy = entropy(probs)
        beta = np.exp(view_entropy + spec.epsilon)
        loss = float(np.mean(beta * view_entropy))
        grad_probs = beta[:, None] * entropy_grad(probs) / M
    else:
        raise ValidationError("{} has no deterministic gradient; use rlcf_adapt".format(spec.kind.value))

    grad_logits = logits_backward(logits, probs, grad_probs, rule)
    grad_bank = rule.scale * grad_logits.T @ views

    if spec.kind is LossKind.marginal_entropy_plus_dispersion and spec.dispersion_weight:
        dispersion, grad_dispersion = dispersion_and_grad(bank)
        loss += spec.dispersion_weight * dispersion
        grad_bank = grad_bank + spec.dispersion_weight * grad_dispersion

    return loss, unit_rows_backward(raw, bank, grad_bank)


def descend(shift, candidates, text_bank, rule, spec, cfg, selected=None):
    """Apply ``cfg.steps`` gradient-descent updates to ``shift`` in place and return it."""
    for step in range(cfg.steps):
        if selected is None or cfg.reselect:
            _, probs = score(candidates, shift.apply(text_bank), rule)
            selected = select_confident_views(probs, cfg.selection_fraction)
        loss, grad = loss_and_grad(candidates[selected], text_bank, shift, rule, spec)
        shift.loss_history.append(loss)
        shift.delta = shift.delta - cfg.learning_rate * grad
        logger.log(
            logging.DEBUG,
            "Shift step {step} loss {loss}",
            extra={"step": step, "loss": loss, "loss_kind": spec.kind.value},
        )
    return shift


def optimize_shift(sample, text_bank, rule, spec, cfg):
    views = sample.views if hasattr(sample, "views") else sample
    text_bank = np.asarray(text_bank, dtype=np.float64)
    shift = ShiftParameters.like(text_bank)
    return descend(shift, candidate_views(views), text_bank, rule, spec, cfg)
