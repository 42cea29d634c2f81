import math

import numpy as np
import pytest

from eigenrom.errors import ConfigError, GprError, ModelFormatError
from eigenrom.gpr import (
    NOISE_FLOOR,
    GprModel,
    Hyperparameters,
    band,
    factorize,
    fit,
    kernel,
    latent_variance_raw,
    log_marginal_likelihood,
    predict,
)
from eigenrom.problems import get_problem
from eigenrom.rom_pipeline import FullOrderModel
from eigenrom.sampling import uniform_grid


def hyper(lengthscales=(1.0,), signal=1.0, noise=NOISE_FLOOR, mean=None):
    lengthscales = np.asarray(lengthscales, dtype=float)
    mean = np.zeros(lengthscales.size + 1) if mean is None else np.asarray(mean, dtype=float)
    return Hyperparameters(mean_coeffs=mean, signal_variance=signal, lengthscales=lengthscales,
                           noise_variance=noise)


class TestKernel:
    def test_same_point_is_signal_variance(self):
        assert kernel(0.3, 0.3, hyper(signal=2.5)) == pytest.approx(2.5)

    def test_unit_distance(self):
        assert kernel(0.0, 1.0, hyper()) == pytest.approx(math.exp(-0.5), abs=1e-6)
        assert kernel([0.0, 0.0], [2.0, 0.0], hyper(lengthscales=(2.0, 0.1))) == pytest.approx(0.606531, abs=1e-6)

    def test_symmetric_matrix(self, rng):
        x = rng.random((6, 2))
        k = kernel(x, x, hyper(lengthscales=(0.3, 0.7), signal=1.7))
        np.testing.assert_allclose(k, k.T)
        np.testing.assert_allclose(np.diag(k), 1.7)

    def test_invalid_hyperparameters(self):
        with pytest.raises(ConfigError):
            hyper(signal=0.0)
        with pytest.raises(ConfigError):
            hyper(lengthscales=(-1.0,))
        with pytest.raises(ConfigError):
            hyper(noise=1e-20)


class TestLikelihood:
    def test_single_point(self):
        value = log_marginal_likelihood([[0.0]], [0.0], hyper(signal=0.5, noise=0.5), profile_mean=False)
        assert value == pytest.approx(-0.9189385, abs=1e-7)

    @pytest.mark.parametrize("dim", [1, 2])
    def test_gradient_matches_finite_differences(self, rng, dim):
        x = rng.random((7, dim))
        y = np.sin(3 * x).sum(axis=1) + 0.1 * rng.standard_normal(7)
        base = hyper(lengthscales=np.full(dim, 0.3), signal=1.3, noise=0.05)
        _, grad = log_marginal_likelihood(x, y, base, gradient=True)

        eta = base.log_vector()
        step = 1e-5
        for i in range(eta.size):
            up, down = eta.copy(), eta.copy()
            up[i] += step
            down[i] -= step
            f_up = log_marginal_likelihood(x, y, Hyperparameters.from_log_vector(up, base.mean_coeffs))
            f_down = log_marginal_likelihood(x, y, Hyperparameters.from_log_vector(down, base.mean_coeffs))
            fd = (f_up - f_down) / (2 * step)
            assert grad[i] == pytest.approx(fd, rel=1e-5, abs=1e-6)

    def test_affine_data_has_no_fit_term(self):
        x = np.linspace(0.0, 1.0, 6).reshape(-1, 1)
        y = 2.0 + 3.0 * x.ravel()
        h = hyper(lengthscales=(0.4,), signal=1.0, noise=1e-6)
        value = log_marginal_likelihood(x, y, h)
        zero = log_marginal_likelihood(x, np.zeros(6), h)
        assert value == pytest.approx(zero, abs=1e-8)


class TestFactorize:
    def test_plain_factorization(self):
        factor, jitter = factorize(np.array([[2.0, 1.0], [1.0, 2.0]]))
        assert jitter == 0.0
        np.testing.assert_allclose(factor @ factor.T, [[2.0, 1.0], [1.0, 2.0]])

    def test_jitter_ladder(self):
        _, jitter = factorize(np.ones((3, 3)))
        assert 0.0 < jitter <= 1e-6

    def test_hopeless_matrix(self):
        with pytest.raises(GprError):
            factorize(-np.eye(3))


class TestPosterior:
    def test_two_point_oracle(self):
        x = np.array([[0.0], [1.0]])
        y = np.array([0.0, 1.0])
        h = hyper(lengthscales=(1.0,), signal=1.0, noise=1e-4)
        model = GprModel.from_hyperparameters(x, y, h)
        mean, _, _ = predict(model, [0.5])

        k = np.exp(-0.5 * np.array([[0.0, 1.0], [1.0, 0.0]]))
        k_star = np.exp(-0.5 * np.array([0.25, 0.25]))
        expected = k_star @ np.linalg.solve(k + 1e-4 * np.eye(2), y)
        assert mean[0] == pytest.approx(expected, abs=1e-10)

    def test_interpolates_at_noise_floor(self):
        x = np.linspace(0.0, 1.0, 6).reshape(-1, 1)
        y = np.cos(4 * x.ravel())
        model = GprModel.from_hyperparameters(x, y, hyper(lengthscales=(0.3,)))
        mean, _, _ = predict(model, x)
        np.testing.assert_allclose(mean, y, atol=1e-6)

    def test_far_query_reverts_to_prior(self):
        x = np.linspace(0.0, 1.0, 5).reshape(-1, 1)
        y = np.sin(2 * x.ravel())
        h = hyper(lengthscales=(0.2,), signal=0.7, noise=1e-6, mean=[0.5, 1.0])
        model = GprModel.from_hyperparameters(x, y, h)
        mean, latent, _ = predict(model, [100.0])
        assert mean[0] == pytest.approx(0.5 + 100.0, rel=1e-10)
        assert latent[0] == pytest.approx(0.7, rel=1e-10)

    def test_variance_bounded_by_prior(self, rng):
        x = rng.random((8, 2))
        y = rng.standard_normal(8)
        model = GprModel.from_hyperparameters(x, y, hyper(lengthscales=(0.3, 0.5), signal=2.0, noise=1e-3))
        queries = rng.random((50, 2))
        _, latent, predictive = predict(model, queries)
        assert np.all(latent <= 2.0 + 1e-12)
        np.testing.assert_allclose(predictive - latent, 1e-3)
        assert np.all(latent_variance_raw(model, queries) >= -1e-10)

    def test_conditioning_on_more_data_shrinks_variance(self, rng):
        x = rng.random((6, 1))
        y = rng.standard_normal(6)
        h = hyper(lengthscales=(0.25,), noise=1e-4)
        smaller = GprModel.from_hyperparameters(x[:5], y[:5], h)
        larger = GprModel.from_hyperparameters(x, y, h)
        queries = np.linspace(0, 1, 40).reshape(-1, 1)
        assert np.all(predict(larger, queries)[1] <= predict(smaller, queries)[1] + 1e-9)

    def test_band(self):
        lo, hi = band(np.array([1.0]), np.array([4.0]))
        assert lo[0] == pytest.approx(1.0 - 3.92)
        assert hi[0] == pytest.approx(1.0 + 3.92)


class TestFit:
    def test_constant_targets(self):
        x = np.linspace(1.0, 9.0, 5)
        model = fit(x, np.full(5, 3.0), box=[[1.0, 9.0]])
        mean, _, predictive = predict(model, [4.2])
        assert mean[0] == pytest.approx(3.0, abs=1e-9)
        assert math.sqrt(predictive[0]) <= 1e-5 * model.y_scale

    def test_affine_targets_predicted_exactly(self):
        x = np.linspace(0.0, 1.0, 5)
        model = fit(x, 2.0 + 3.0 * x, box=[[0.0, 1.0]])
        mean, _, _ = predict(model, [0.37])
        assert mean[0] == pytest.approx(2.0 + 3.0 * 0.37, rel=1e-6)

    def test_deterministic(self):
        x = np.linspace(0.0, 2.0, 9)
        y = np.sin(2 * x)
        a = fit(x, y, box=[[0.0, 2.0]], seed=4)
        b = fit(x, y, box=[[0.0, 2.0]], seed=4)
        np.testing.assert_array_equal(a.hyper.log_vector(), b.hyper.log_vector())
        assert a.log_likelihood == b.log_likelihood

    def test_smooth_function_2d(self):
        design = uniform_grid([[0.0, 1.0], [0.0, 2.0]], [6, 6])
        f = lambda p: np.sin(2 * p[:, 0]) + 0.5 * np.cos(p[:, 1])
        model = fit(design.points, f(design.points), box=design.box, n_starts=4)
        queries = np.array([[0.33, 0.7], [0.61, 1.45]])
        mean, _, _ = predict(model, queries)
        np.testing.assert_allclose(mean, f(queries), atol=1e-3)

    def test_needs_two_points(self):
        with pytest.raises(ConfigError):
            fit([0.5], [1.0])

    def test_inputs_outside_box(self):
        with pytest.raises(ConfigError):
            fit([0.0, 2.0], [1.0, 2.0], box=[[0.0, 1.0]])

    def test_harmonic_oscillator_eigenvalue(self):
        spec = get_problem("ho1d")
        design = uniform_grid(spec.parameter_box, 41)
        fom = FullOrderModel(spec, spec.build_mesh(0.05))
        values = [pairs[0].value for pairs in fom.sweep(design.points)]
        model = fit(design.points, values, box=spec.parameter_box)
        mean, _, _ = predict(model, [4.5])
        assert mean[0] == pytest.approx(2.2548, abs=5e-3)


class TestSerialization:
    @pytest.fixture(scope="class")
    def model(self):
        x = np.linspace(1.0, 9.0, 12)
        return fit(x, np.log(x) + 0.1 * x, box=[[1.0, 9.0]], n_starts=3)

    def test_round_trip_predicts_identically(self, model):
        restored = GprModel.from_dict(model.to_dict())
        queries = np.linspace(0.5, 9.5, 17)
        for a, b in zip(predict(model, queries), predict(restored, queries)):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)

    def test_tampered_record_rejected(self, model):
        data = model.to_dict()
        data["hyperparameters"]["lengthscales"] = [data["hyperparameters"]["lengthscales"][0] * 1.5]
        with pytest.raises(ModelFormatError):
            GprModel.from_dict(data)

    def test_missing_field_rejected(self, model):
        data = model.to_dict()
        data.pop("y")
        with pytest.raises(ModelFormatError):
            GprModel.from_dict(data)
