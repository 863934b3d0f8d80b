import mock
import numpy as np
import pytest

from ttabench.errors import DimensionMismatch, ValidationError
from ttabench.scoring import ScoringRule, entropy, normalize_rows, score
from ttabench.shift import (
    LossKind,
    LossSpec,
    OptimConfig,
    ShiftParameters,
    apply_shift,
    candidate_views,
    descend,
    dispersion_and_grad,
    loss_and_grad,
    optimize_shift,
    select_confident_views,
    selection_count,
)

RULES = [ScoringRule(scale=10.0), ScoringRule.sigmoid(scale=10.0, bias=-2.0)]


def _instance(seed, C=4, D=6, M=5):
    rng = np.random.default_rng(seed)
    bank = normalize_rows(rng.standard_normal((C, D)))
    views = normalize_rows(rng.standard_normal((M, D)))
    shift = ShiftParameters(0.1 * rng.standard_normal((C, D)))
    return bank, views, shift


def _random_instance(seed):
    rng = np.random.default_rng(1000 + seed)
    C, D, M = int(rng.integers(2, 9)), int(rng.integers(2, 17)), int(rng.integers(1, 11))
    bank = normalize_rows(rng.standard_normal((C, D)))
    views = normalize_rows(rng.standard_normal((M, D)))
    shift = ShiftParameters(0.1 * rng.standard_normal((C, D)))
    return bank, views, shift, RULES[seed % 2]


def _relative_error(analytic, numeric):
    return np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-4)


def _central_difference(f, delta, h=1e-4):
    grad = np.zeros_like(delta)
    for index in np.ndindex(delta.shape):
        up, down = delta.copy(), delta.copy()
        up[index] += h
        down[index] -= h
        grad[index] = (f(up) - f(down)) / (2 * h)
    return grad


def _loss_at(views, bank, rule, spec):
    def f(delta):
        loss, _ = loss_and_grad(views, bank, ShiftParameters(delta), rule, spec)
        return loss
    return f


class TestLossAndGrad(object):
    @pytest.mark.parametrize("seed", range(100))
    @pytest.mark.parametrize("spec", [
        LossSpec(kind=LossKind.marginal_entropy),
        LossSpec(kind=LossKind.marginal_entropy_plus_dispersion, dispersion_weight=0.7),
        LossSpec(kind=LossKind.pointwise_entropy),
    ])
    def test_matches_central_differences(self, seed, spec):
        bank, views, shift, rule = _random_instance(seed)

        _, analytic = loss_and_grad(views, bank, shift, rule, spec)

        numeric = _central_difference(_loss_at(views, bank, rule, spec), shift.delta)
        assert _relative_error(analytic, numeric) < 1e-3

    @pytest.mark.parametrize("seed", range(100))
    def test_weighted_entropy_treats_weights_as_constants(self, seed):
        bank, views, shift, rule = _random_instance(seed)
        spec = LossSpec(kind=LossKind.weighted_entropy, epsilon=0.5 * (seed % 3))
        _, probs = score(views, shift.apply(bank), rule)
        beta = np.exp(entropy(probs) + spec.epsilon)

        def frozen_weight_loss(delta):
            _, p = score(views, apply_shift(bank, delta), rule)
            return float(np.mean(beta * entropy(p)))

        loss, analytic = loss_and_grad(views, bank, shift, rule, spec)

        assert loss == pytest.approx(frozen_weight_loss(shift.delta))
        numeric = _central_difference(frozen_weight_loss, shift.delta)
        assert _relative_error(analytic, numeric) < 1e-3

    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("rule", RULES)
    def test_single_view_marginal_equals_pointwise(self, seed, rule):
        bank, views, shift = _instance(seed, M=1)

        marginal = loss_and_grad(views, bank, shift, rule, LossSpec(kind=LossKind.marginal_entropy))
        pointwise = loss_and_grad(views, bank, shift, rule, LossSpec(kind=LossKind.pointwise_entropy))

        assert marginal[0] == pytest.approx(pointwise[0])
        np.testing.assert_allclose(marginal[1], pointwise[1], rtol=1e-12, atol=1e-15)

    def test_marginal_entropy_value(self):
        rule = ScoringRule(scale=10.0)
        bank, views, shift = _instance(0)
        _, probs = score(views, shift.apply(bank), rule)

        loss, _ = loss_and_grad(views, bank, shift, rule, LossSpec())

        assert loss == pytest.approx(float(entropy(probs.mean(axis=0))))

    def test_zero_dispersion_weight_equals_marginal_entropy(self):
        rule = ScoringRule(scale=10.0)
        bank, views, shift = _instance(1)

        plain = loss_and_grad(views, bank, shift, rule, LossSpec(kind=LossKind.marginal_entropy))
        weighted = loss_and_grad(
            views, bank, shift, rule, LossSpec(kind=LossKind.marginal_entropy_plus_dispersion, dispersion_weight=0.0)
        )

        assert plain[0] == weighted[0]
        np.testing.assert_array_equal(plain[1], weighted[1])

    def test_reinforce_has_no_deterministic_gradient(self):
        bank, views, shift = _instance(0)
        with pytest.raises(ValidationError):
            loss_and_grad(views, bank, shift, ScoringRule(), LossSpec(kind=LossKind.reinforce_reward))

    def test_dimension_mismatch(self):
        bank, views, shift = _instance(0)
        with pytest.raises(DimensionMismatch):
            loss_and_grad(views[:, :3], bank, shift, ScoringRule(), LossSpec())

    def test_negative_dispersion_weight(self):
        with pytest.raises(ValidationError):
            LossSpec(kind=LossKind.marginal_entropy_plus_dispersion, dispersion_weight=-0.1)


class TestDispersion(object):
    def test_gradient(self):
        rng = np.random.default_rng(3)
        bank = rng.standard_normal((4, 5))

        value, analytic = dispersion_and_grad(bank)

        assert value == pytest.approx(np.linalg.norm(bank.mean(axis=0) - bank, axis=1).sum())
        numeric = _central_difference(lambda b: dispersion_and_grad(b)[0], bank)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-8)


class TestSelection(object):
    @pytest.mark.parametrize("views,rho,expected", [
        (64, 0.1, 6),
        (63, 0.1, 6),
        (10, 0.1, 1),
        (5, 0.1, 1),
        (1, 0.1, 1),
        (10, 1.0, 10),
        (10, 0.3, 3),
    ])
    def test_selection_count(self, views, rho, expected):
        assert selection_count(views, rho) == expected

    def test_orders_by_entropy_with_ties_to_lower_index(self):
        probs = np.array([
            [0.5, 0.5],
            [0.9, 0.1],
            [0.1, 0.9],
            [0.99, 0.01],
        ])
        np.testing.assert_array_equal(select_confident_views(probs, 0.75), [3, 1, 2])

    def test_orders_by_max_probability(self):
        probs = np.array([
            [0.6, 0.2, 0.2],
            [0.5, 0.5, 0.0],
            [0.7, 0.3, 0.0],
        ])
        assert list(select_confident_views(probs, 1.0, by="msp")) == [2, 0, 1]

    @pytest.mark.parametrize("rho", [0, 1.5])
    def test_fraction_bounds(self, rho):
        with pytest.raises(ValidationError):
            select_confident_views(np.full((4, 2), 0.5), rho)

    def test_candidate_views(self):
        views = np.arange(12.0).reshape(3, 4)
        np.testing.assert_array_equal(candidate_views(views), views[1:])
        np.testing.assert_array_equal(candidate_views(views[:1]), views[:1])


class TestShiftParameters(object):
    def test_zero_shift_returns_the_bank_itself(self, random_bank):
        bank = random_bank(3, 4)
        shift = ShiftParameters.like(bank)

        assert shift.is_identity
        assert shift.apply(bank) is bank

    def test_shifted_rows_are_unit_norm(self, random_bank):
        bank = random_bank(3, 4)
        shifted = apply_shift(bank, np.full((3, 4), 0.3))
        np.testing.assert_allclose(np.linalg.norm(shifted, axis=1), 1.0)


class TestOptimConfig(object):
    @pytest.mark.parametrize("kwargs", [
        {"steps": -1},
        {"steps": 1.5},
        {"learning_rate": -1e-3},
        {"selection_fraction": 0.0},
        {"selection_fraction": 1.1},
    ])
    def test_validation(self, kwargs):
        with pytest.raises(ValidationError):
            OptimConfig(**kwargs)


class TestOptimizeShift(object):
    def test_zero_steps_is_identity(self, small_bundle, small_bank, rule):
        shift = optimize_shift(small_bundle.samples[0], small_bank, rule, LossSpec(), OptimConfig(steps=0))

        assert shift.is_identity
        assert shift.loss_history == []

    def test_records_one_loss_per_step(self, small_bundle, small_bank, rule):
        shift = optimize_shift(small_bundle.samples[0], small_bank, rule, LossSpec(), OptimConfig(steps=4))

        assert len(shift.loss_history) == 4
        assert not shift.is_identity

    def test_small_steps_decrease_the_loss(self):
        rule = ScoringRule(scale=10.0)
        bank, views, _ = _instance(7, M=8)
        cfg = OptimConfig(steps=3, learning_rate=1e-3, selection_fraction=1.0, reselect=False)

        shift = descend(ShiftParameters.like(bank), views, bank, rule, LossSpec(), cfg)

        assert shift.loss_history[2] < shift.loss_history[1] < shift.loss_history[0]

    @pytest.mark.parametrize("index", range(5))
    def test_heavy_dispersion_weight_shrinks_dispersion(self, small_bundle, small_bank, rule, index):
        spec = LossSpec(kind=LossKind.marginal_entropy_plus_dispersion, dispersion_weight=1e4)
        cfg = OptimConfig(steps=1, learning_rate=1e-6)

        shift = optimize_shift(small_bundle.samples[index], small_bank, rule, spec, cfg)

        assert dispersion_and_grad(shift.apply(small_bank))[0] < dispersion_and_grad(small_bank)[0]

    def test_logs_each_step(self, small_bundle, small_bank, rule):
        with mock.patch("ttabench.shift.logger") as logger:
            optimize_shift(small_bundle.samples[0], small_bank, rule, LossSpec(), OptimConfig(steps=2))

        assert logger.log.call_count == 2
        assert logger.log.call_args[1]["extra"]["step"] == 1
        assert logger.log.call_args[1]["extra"]["loss_kind"] == "marginal_entropy"
