"""Regularizer and importance-estimation tests.

Fisher and MAS importances are checked on one-parameter models where the exact
gradient is known in closed form; each penalty also gets a finite-difference
gradient check.
"""

import numpy as np
import pytest
import torch
from torch import nn

from conftest import finite_difference_check
from sfdnet.continual import (
    BASELINE_METHODS,
    PIPELINE_METHODS,
    ImportanceMap,
    MethodConfig,
    TrainingConfig,
    combined_loss,
    estimate_fisher,
    ewc_loss,
    lwf_loss,
    mas_importance,
    mas_loss,
    sdc_drift_compensation,
    total_loss,
    triplet_loss,
)


class ScaleModel(nn.Module):
    """y = theta * x with a single scalar parameter."""

    def __init__(self, value):
        super().__init__()
        self.theta = nn.Parameter(torch.tensor(float(value)))

    def forward(self, x):
        return self.theta * x


class TestTotalLoss:
    def test_sum(self):
        out = total_loss(torch.tensor(1.5), torch.tensor(0.5))
        assert out.item() == pytest.approx(2.0, abs=1e-7)

    def test_non_finite_raises(self):
        with pytest.raises(RuntimeError):
            total_loss(torch.tensor(float("nan")), torch.tensor(0.0))
        with pytest.raises(RuntimeError):
            total_loss(torch.tensor(float("inf")), torch.tensor(1.0))


class TestLwf:
    def test_three_four_five(self):
        current = torch.tensor([[3.0, 0.0]])
        previous = torch.tensor([[0.0, -4.0]])
        assert lwf_loss(current, previous).item() == pytest.approx(5.0, rel=1e-6)

    def test_identical_embeddings_near_zero(self):
        z = torch.randn(4, 8)
        assert lwf_loss(z, z).item() == pytest.approx(0.0, abs=1e-5)

    def test_batch_mean(self):
        current = torch.tensor([[1.0], [0.0]])
        previous = torch.tensor([[0.0], [2.0]])
        assert lwf_loss(current, previous).item() == pytest.approx(1.5, rel=1e-6)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            lwf_loss(torch.zeros(2, 3), torch.zeros(2, 4))
        with pytest.raises(ValueError):
            lwf_loss(torch.zeros(3), torch.zeros(3))

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(0)
        current = nn.Parameter(torch.rand(3, 4, dtype=torch.float64))
        previous = torch.rand(3, 4, dtype=torch.float64)
        finite_difference_check(lambda: lwf_loss(current, previous), [current])


class TestQuadraticPenalties:
    def test_ewc_hand_example(self):
        cur = {"w": torch.tensor([5.0])}
        prev = {"w": torch.tensor([2.0])}
        fisher = ImportanceMap({"w": torch.tensor([2.0])}, "fisher")
        assert ewc_loss(cur, prev, fisher).item() == pytest.approx(9.0, rel=1e-6)

    def test_mas_hand_example(self):
        cur = {"w": torch.tensor([3.0])}
        prev = {"w": torch.tensor([2.0])}
        omega = ImportanceMap({"w": torch.tensor([4.0])}, "mas")
        assert mas_loss(cur, prev, omega).item() == pytest.approx(2.0, rel=1e-6)

    def test_importance_doubling_doubles_penalty(self):
        torch.manual_seed(1)
        cur = {"w": torch.randn(3, 2)}
        prev = {"w": torch.randn(3, 2)}
        base = torch.rand(3, 2)
        one = ewc_loss(cur, prev, ImportanceMap({"w": base}, "fisher")).item()
        two = ewc_loss(cur, prev, ImportanceMap({"w": 2 * base}, "fisher")).item()
        assert two == pytest.approx(2 * one, rel=1e-5)

    def test_kind_mismatch(self):
        cur = {"w": torch.zeros(1)}
        fisher = ImportanceMap({"w": torch.ones(1)}, "fisher")
        with pytest.raises(ValueError):
            mas_loss(cur, cur, fisher)
        omega = ImportanceMap({"w": torch.ones(1)}, "mas")
        with pytest.raises(ValueError):
            ewc_loss(cur, cur, omega)

    def test_missing_parameter(self):
        cur = {"w": torch.zeros(1)}
        fisher = ImportanceMap({"other": torch.ones(1)}, "fisher")
        with pytest.raises(ValueError):
            ewc_loss(cur, cur, fisher)

    def test_importance_validation(self):
        with pytest.raises(ValueError):
            ImportanceMap({"w": torch.tensor([-1.0])}, "fisher")
        with pytest.raises(ValueError):
            ImportanceMap({"w": torch.ones(1)}, "hessian")

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(2)
        w = nn.Parameter(torch.rand(4, 3, dtype=torch.float64))
        prev = {"w": torch.rand(4, 3, dtype=torch.float64)}
        fisher = ImportanceMap({"w": torch.rand(4, 3, dtype=torch.float64)}, "fisher")
        finite_difference_check(lambda: ewc_loss({"w": w}, prev, fisher), [w])


class TestImportanceEstimators:
    def test_fisher_of_half_theta_squared(self):
        # loss = 0.5 * theta^2 has gradient theta; at theta = 2 Fisher = 4
        model = ScaleModel(2.0)
        fisher = estimate_fisher(
            model, [None], lambda m, batch: 0.5 * m.theta**2
        )
        assert fisher.kind == "fisher"
        assert fisher.values["theta"].item() == pytest.approx(4.0, rel=1e-6)

    def test_fisher_averages_batches(self):
        # gradients 1 and 3 -> mean of squares (1 + 9) / 2 = 5
        model = ScaleModel(0.0)
        fisher = estimate_fisher(
            model, [1.0, 3.0], lambda m, batch: m.theta * batch
        )
        assert fisher.values["theta"].item() == pytest.approx(5.0, rel=1e-6)

    def test_fisher_needs_batches(self):
        with pytest.raises(ValueError):
            estimate_fisher(ScaleModel(1.0), [], lambda m, b: m.theta)

    def test_mas_of_scaled_output(self):
        # output theta * x, magnitude theta^2 x^2, gradient 2 theta x^2; x=2, theta=1 -> 8
        model = ScaleModel(1.0)
        batch = torch.tensor([[2.0]])
        omega = mas_importance(model, [batch], lambda m, b: m(b))
        assert omega.kind == "mas"
        assert omega.values["theta"].item() == pytest.approx(8.0, rel=1e-6)

    def test_mas_averages_per_sample_magnitudes(self):
        # per-sample gradients 2*theta*x^2 for x in (1, 2): |2| and |8| -> mean 5
        model = ScaleModel(1.0)
        batch = torch.tensor([[1.0], [2.0]])
        omega = mas_importance(model, [batch], lambda m, b: m(b))
        assert omega.values["theta"].item() == pytest.approx(5.0, rel=1e-6)

    def test_mas_is_nonnegative(self):
        torch.manual_seed(3)
        model = nn.Linear(3, 2)
        batch = torch.randn(4, 3)
        omega = mas_importance(model, [batch], lambda m, b: m(b))
        for value in omega.values.values():
            assert torch.all(value >= 0)


class TestTriplet:
    def test_active_margin(self):
        anchor = torch.tensor([[0.0, 0.0]])
        positive = torch.tensor([[1.0, 0.0]])
        negative = torch.tensor([[0.5, 0.0]])
        # d_pos 1.0, d_neg 0.5, margin 1.0 -> 1.5
        assert triplet_loss(anchor, positive, negative).item() == pytest.approx(1.5, rel=1e-5)

    def test_satisfied_triplet_clamps_to_zero(self):
        anchor = torch.tensor([[0.0, 0.0]])
        positive = torch.tensor([[0.1, 0.0]])
        negative = torch.tensor([[5.0, 0.0]])
        assert triplet_loss(anchor, positive, negative).item() == 0.0

    def test_margin_parameter(self):
        anchor = torch.zeros(1, 2)
        positive = torch.tensor([[1.0, 0.0]])
        negative = torch.tensor([[2.0, 0.0]])
        assert triplet_loss(anchor, positive, negative, margin=3.0).item() == pytest.approx(2.0, rel=1e-5)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            triplet_loss(torch.zeros(2, 3), torch.zeros(2, 3), torch.zeros(2, 4))

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(4)
        anchor = nn.Parameter(torch.rand(4, 3, dtype=torch.float64))
        positive = torch.rand(4, 3, dtype=torch.float64) + 1.0
        negative = torch.rand(4, 3, dtype=torch.float64) - 1.0
        finite_difference_check(
            lambda: triplet_loss(anchor, positive, negative, margin=0.5), [anchor]
        )


class TestCombined:
    def test_weighted_sum(self):
        config = MethodConfig(method="ewc", regularizer_weight=0.5)
        out = combined_loss(torch.tensor(1.0), torch.tensor(2.0), config)
        assert out.item() == pytest.approx(2.0, abs=1e-7)

    def test_zero_weight(self):
        config = MethodConfig(method="lwf", regularizer_weight=0.0)
        out = combined_loss(torch.tensor(1.0), torch.tensor(99.0), config)
        assert out.item() == pytest.approx(1.0, abs=1e-7)

    def test_unregularized_method_rejected(self):
        for name in ("ft", "sdc", "sfdnet"):
            config = MethodConfig(method=name)
            with pytest.raises(ValueError):
                combined_loss(torch.tensor(1.0), torch.tensor(1.0), config)

    def test_method_registry(self):
        assert set(BASELINE_METHODS) == {"ft", "lwf", "ewc", "mas", "sdc"}
        assert set(PIPELINE_METHODS) == {"sfdnet", "e-sfdnet"}
        with pytest.raises(ValueError):
            MethodConfig(method="icarl")
        with pytest.raises(ValueError):
            MethodConfig(method="ewc", regularizer_weight=-1.0)


class TestDriftCompensation:
    def test_zero_drift_leaves_prototypes(self):
        rng = np.random.default_rng(5)
        protos = rng.normal(size=(3, 4))
        feats = rng.normal(size=(10, 4))
        out = sdc_drift_compensation(protos, feats, feats.copy())
        np.testing.assert_allclose(out, protos, atol=1e-12)

    def test_uniform_drift_translates_prototypes(self):
        rng = np.random.default_rng(6)
        protos = rng.normal(size=(2, 3))
        before = rng.normal(size=(8, 3))
        shift = np.array([0.5, -1.0, 2.0])
        out = sdc_drift_compensation(protos, before, before + shift)
        np.testing.assert_allclose(out, protos + shift, atol=1e-10)

    def test_single_feature_drift(self):
        protos = np.array([[1.0, 0.0]])
        before = np.array([[2.0, 0.0]])
        after = np.array([[2.0, 1.0]])
        out = sdc_drift_compensation(protos, before, after)
        np.testing.assert_allclose(out, [[1.0, 1.0]], atol=1e-10)

    def test_nearby_features_dominate(self):
        protos = np.array([[1.0, 0.0]])
        before = np.array([[1.0, 0.0], [0.0, 1.0]])
        after = before + np.array([[1.0, 0.0], [0.0, 5.0]])
        out = sdc_drift_compensation(protos, before, after, bandwidth=0.1)
        # the aligned feature drifts by (1, 0); the orthogonal one is far in
        # direction space so its (0, 5) drift should barely register
        np.testing.assert_allclose(out, [[2.0, 0.0]], atol=1e-6)

    def test_underflow_falls_back_to_mean_drift(self):
        protos = np.array([[1.0, 0.0]])
        before = np.array([[-1.0, 0.0], [0.0, -1.0]])
        drift = np.array([[2.0, 0.0], [0.0, 4.0]])
        out = sdc_drift_compensation(protos, before, before + drift, bandwidth=1e-4)
        np.testing.assert_allclose(out, protos + drift.mean(axis=0), atol=1e-8)

    def test_empty_features_rejected(self):
        with pytest.raises(ValueError):
            sdc_drift_compensation(np.zeros((1, 2)), np.zeros((0, 2)), np.zeros((0, 2)))

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            sdc_drift_compensation(np.zeros((1, 2)), np.zeros((3, 2)), np.zeros((4, 2)))
        with pytest.raises(ValueError):
            sdc_drift_compensation(np.zeros((1, 3)), np.zeros((2, 2)), np.zeros((2, 2)))


class TestTrainingConfig:
    def test_defaults(self):
        config = TrainingConfig()
        assert config.epochs == 15
        assert config.batch_size == 32
        assert config.translator_epochs == 20
        assert config.augment is True

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainingConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainingConfig(learning_rate=-1.0)
        with pytest.raises(ValueError):
            TrainingConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainingConfig(base_epochs=0)

    def test_base_epochs_applies_to_first_task_only(self):
        config = TrainingConfig(epochs=3, base_epochs=10)
        assert config.task_epochs(first_task=True) == 10
        assert config.task_epochs(first_task=False) == 3

    def test_base_epochs_defaults_to_epochs(self):
        config = TrainingConfig(epochs=3)
        assert config.task_epochs(first_task=True) == 3
        assert config.task_epochs(first_task=False) == 3
