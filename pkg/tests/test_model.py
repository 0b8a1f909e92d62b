import math

import numpy as np
import pytest

from conftest import central_difference, make_dataset, unit
from src.core.errors import ParameterError, ParseError, ShapeError, ValidationError
from src.services import model
from src.services.model import ModelParams
from src.services.numerics import RngStream


def direct_output(params: ModelParams, x: np.ndarray) -> float:
    pre = params.weights.T @ x
    return float(np.sum(params.signs * np.maximum(pre, 0.0)) / math.sqrt(params.m))


class TestInit:
    def test_shapes_and_signs(self):
        params = model.init(64, 3, 1.0, RngStream(0, 1))
        assert params.weights.shape == (3, 64)
        assert set(np.unique(params.signs)) <= {-1.0, 1.0}
        assert (params.d, params.m) == (3, 64)

    def test_deterministic(self):
        a = model.init(32, 4, 0.5, RngStream(9, 1))
        b = model.init(32, 4, 0.5, RngStream(9, 1))
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.signs, b.signs)

    def test_both_signs_appear(self, small_params):
        assert np.any(small_params.signs > 0) and np.any(small_params.signs < 0)

    @pytest.mark.parametrize("m, d, sigma", [(0, 3, 1.0), (4, 0, 1.0), (4, 3, 0.0)])
    def test_invalid_arguments(self, m, d, sigma):
        with pytest.raises(ParameterError):
            model.init(m, d, sigma, RngStream(0, 1))

    def test_signs_must_be_unit(self):
        with pytest.raises(ValidationError):
            ModelParams(np.zeros((2, 2)), np.array([1.0, 0.5]), 1.0)

    def test_sign_count_must_match_width(self):
        with pytest.raises(ShapeError):
            ModelParams(np.zeros((2, 3)), np.array([1.0, -1.0]), 1.0)


class TestForward:
    def test_matches_direct_formula(self, small_params, small_dataset):
        for x in small_dataset.inputs:
            assert model.forward(small_params, x) == pytest.approx(
                direct_output(small_params, x), abs=1e-12
            )

    def test_single_point_matches_batch_bitwise(self, small_params, small_dataset):
        batch = model.forward_all(small_params, small_dataset)
        for i, x in enumerate(small_dataset.inputs):
            assert model.forward(small_params, x) == batch[i]

    def test_subset_matches_full_batch(self, small_params, small_dataset):
        full = model.forward_all(small_params, small_dataset)
        part = model.forward_all(small_params, small_dataset, indices=[3, 0])
        assert part[0] == full[3] and part[1] == full[0]

    def test_empty_subset(self, small_params, small_dataset):
        assert model.forward_all(small_params, small_dataset, indices=[]).shape == (0,)

    def test_non_unit_input_rejected(self, small_params):
        with pytest.raises(ValidationError):
            model.forward(small_params, np.ones(small_params.d))

    def test_wrong_dimension_rejected(self, small_params):
        with pytest.raises(ShapeError):
            model.forward(small_params, unit(1, 0))

    def test_zero_weights_give_zero(self):
        params = ModelParams(np.zeros((2, 4)), np.ones(4), 1.0)
        assert model.forward(params, unit(1, 1)) == 0.0


class TestGradient:
    @pytest.mark.parametrize("seed", range(100))
    def test_matches_finite_differences(self, seed):
        ds = make_dataset(n=5, d=3, seed=seed)
        params = model.init(16, 3, 1.0, RngStream(seed, 1))
        weights = np.array(params.weights)

        def half_sq_loss(w):
            residuals = model.outputs(w, params.signs, ds.inputs) - ds.labels
            return 0.5 * float(np.sum(residuals**2))

        # Columns with a preactivation near the ReLU kink are skipped
        smooth = np.min(np.abs(ds.inputs @ weights), axis=0) >= 1e-4
        expected = central_difference(half_sq_loss, weights)[:, smooth]
        actual = model.gradient(weights, params.signs, ds.inputs, ds.labels)[:, smooth]
        scale = np.linalg.norm(actual) + np.linalg.norm(expected)
        assert np.linalg.norm(actual - expected) <= 1e-5 * max(scale, 1e-12)

    def test_relu_derivative_at_zero_is_one(self):
        grad = model.gradient(
            np.zeros((2, 2)), np.array([1.0, -1.0]), np.array([[1.0, 0.0]]), np.array([1.0])
        )
        s = 1.0 / math.sqrt(2.0)
        assert np.allclose(grad, [[-s, s], [0.0, 0.0]])

    def test_zero_at_exact_fit(self, small_params, small_dataset):
        labels = model.forward_all(small_params, small_dataset)
        grad = model.gradient(
            small_params.weights, small_params.signs, small_dataset.inputs, labels
        )
        assert not np.any(grad)

    def test_client_gradient_uses_member_points(self, small_params, small_dataset):
        members = [1, 4]
        expected = model.gradient(
            small_params.weights,
            small_params.signs,
            small_dataset.inputs[members],
            small_dataset.labels[members],
        )
        actual = model.client_gradient(small_params, small_dataset, members)
        assert np.array_equal(actual, expected)

    def test_client_gradient_rejects_empty_set(self, small_params, small_dataset):
        with pytest.raises(ParameterError):
            model.client_gradient(small_params, small_dataset, [])

    def test_client_gradient_rejects_out_of_range(self, small_params, small_dataset):
        with pytest.raises(ParameterError):
            model.client_gradient(small_params, small_dataset, [0, 99])


class TestLoss:
    def test_total_is_mean_of_client_losses(
        self, small_params, small_dataset, small_partition
    ):
        losses = model.loss(small_params, small_dataset, small_partition)
        assert len(losses.per_client) == 2
        assert losses.total == pytest.approx(sum(losses.per_client) / 2)
        assert losses.residual_sq == pytest.approx(2 * sum(losses.per_client))

    def test_residual_matches_outputs(self, small_params, small_dataset, small_partition):
        residuals = model.forward_all(small_params, small_dataset) - small_dataset.labels
        losses = model.loss(small_params, small_dataset, small_partition)
        assert losses.residual_sq == pytest.approx(float(residuals @ residuals))


class TestParamsFile:
    def test_reload_is_exact(self, tmp_path):
        params = model.init(16, 3, 0.7, RngStream(1, 1))
        loaded = model.load_params(model.save_params(params, tmp_path / "params.csv"))
        assert np.array_equal(loaded.weights, params.weights)
        assert np.array_equal(loaded.signs, params.signs)
        assert loaded.sigma == 0.7

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "params.csv"
        path.write_text("# fl-ntk params v1, d=2, m=2, sigma=1.0\n1,-1\n0.1,0.2\n")
        with pytest.raises(ParseError):
            model.load_params(path)
