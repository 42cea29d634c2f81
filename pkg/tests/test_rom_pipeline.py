import math

import numpy as np
import pytest

from eigenrom.errors import ConfigError, FomError, ModelFormatError
from eigenrom.problems import get_problem
from eigenrom.rom_pipeline import (
    ErrorReport,
    ErrorRow,
    FullOrderModel,
    Mode,
    RomModel,
    convergence_study,
    evaluate,
    offline_train,
    online_predict,
)
from eigenrom.sampling import explicit, uniform_grid

HO1D_TEST_POINTS = [2.5, 3.5, 4.5, 5.5, 6.5, 7.5, 8.5]


class TestFullOrderModel:
    def test_sweep_keeps_design_order(self, ho1d):
        fom = FullOrderModel(ho1d, ho1d.build_mesh(0.1))
        points = np.array([[7.0], [2.0], [5.0]])
        serial = fom.sweep(points, 2, jobs=1)
        parallel = fom.sweep(points, 2, jobs=3)
        for a, b in zip(serial, parallel):
            assert [p.value for p in a] == [p.value for p in b]
        assert serial[1][0].value < serial[2][0].value < serial[0][0].value

    def test_nonlinear_sweep_matches_direct_solves(self):
        spec = get_problem("nonlinear1d")
        fom = FullOrderModel(spec, spec.build_mesh(0.02))
        points = np.array([[3.0], [1.0], [2.0]])
        swept = fom.sweep(points)
        for mu, pairs in zip(points, swept):
            assert pairs[0].value == pytest.approx(fom.solve(mu)[0].value, rel=1e-9)

    def test_nonlinear_only_first_pair(self):
        spec = get_problem("nonlinear1d")
        fom = FullOrderModel(spec, spec.build_mesh(0.1))
        with pytest.raises(ConfigError):
            fom.solve(2.0, count=2)

    def test_solver_failure_is_wrapped(self, ho1d, monkeypatch):
        from eigenrom import settings
        fom = FullOrderModel(ho1d, ho1d.build_mesh(0.5))
        monkeypatch.setattr(settings, "DENSE_LIMIT", 3)
        with pytest.raises(FomError) as info:
            fom.solve(2.0)
        np.testing.assert_array_equal(info.value.mu, [2.0])


class TestOfflineTrain:
    def test_model_structure(self, ho1d_model):
        model = ho1d_model
        assert model.mode == Mode.SINGLE
        assert model.eigen_numbers == (1,)
        assert model.n_dofs == 399
        assert model.n_regressors == 1 + model.basis.n_modes
        assert model.per_eigenpair_regressors == model.n_regressors
        assert model.provenance["h"] == 0.05
        assert "created_at" not in model.provenance
        v = model.basis.vectors
        np.testing.assert_allclose(v.T @ v, np.eye(model.basis.n_modes), atol=1e-10)

    def test_snapshots_reconstruct_within_pod_tail(self, ho1d, ho1d_model):
        fom = FullOrderModel(ho1d, ho1d.build_mesh(0.05))
        v = ho1d_model.basis.vectors
        tail = np.sum(ho1d_model.basis.singular_values[ho1d_model.basis.n_modes:] ** 2)
        for mu in ho1d_model.design.points[::8]:
            u = fom.solve(mu)[0].vector
            assert np.linalg.norm(u - v @ (v.T @ u)) ** 2 <= tail + 1e-8

    def test_reproduces_training_eigenvalues(self, ho1d, ho1d_model):
        fom = FullOrderModel(ho1d, ho1d.build_mesh(0.05))
        for mu in ho1d_model.design.points[::10]:
            predicted = online_predict(ho1d_model, mu).eigenvalues[0]
            assert predicted == pytest.approx(fom.solve(mu)[0].value, rel=1e-5)

    def test_design_outside_box(self, ho1d):
        with pytest.raises(ConfigError):
            offline_train(ho1d, 0.5, explicit([[0.5], [2.0]]))

    def test_design_dimension(self, ho1d):
        with pytest.raises(ConfigError):
            offline_train(ho1d, 0.5, uniform_grid([[1.0, 9.0], [1.0, 9.0]], 3))

    def test_single_point_design(self, ho1d):
        with pytest.raises(ConfigError):
            offline_train(ho1d, 0.5, explicit([[2.0]]))

    def test_crossing_single(self, crossing_model):
        assert crossing_model.n_dofs == 361
        assert crossing_model.n_regressors == 1 + crossing_model.basis.n_modes
        report = evaluate(crossing_model, explicit([[-0.75], [-0.05], [0.35], [0.85]]))
        assert report.aggregate()["max_lambda_err"] <= 1e-3

    def test_two_parameter_problem(self):
        spec = get_problem("interface2p")
        design = uniform_grid(spec.parameter_box, [3, 5])
        model = offline_train(spec, 0.2, design, n_starts=3)
        assert model.parameter_box.shape == (2, 2)
        fom = FullOrderModel(spec, spec.build_mesh(0.2))
        mu = design.points[7]
        assert online_predict(model, mu).eigenvalues[0] == pytest.approx(fom.solve(mu)[0].value, rel=1e-2)

    def test_simultaneous_mode(self, crossing):
        design = uniform_grid(crossing.parameter_box, 7)
        model = offline_train(crossing, 0.25, design, mode="simultaneous", n_e=3, n_starts=2)
        assert model.eigen_numbers == (1, 2, 3)
        assert len(model.eigenvalue_models) == 3
        assert model.n_regressors == 3 + model.basis.n_modes
        assert model.per_eigenpair_regressors == 3 * (model.basis.n_modes + 1)
        assert model.basis.n_rows == 3 * model.n_dofs
        pred = online_predict(model, [0.1])
        assert pred.eigenvectors.shape == (3, model.n_dofs)


class TestOnlinePredict:
    def test_bands_bracket_mean(self, ho1d_model):
        pred = online_predict(ho1d_model, [4.5])
        assert pred.eigenvalue_lo[0] <= pred.eigenvalues[0] <= pred.eigenvalue_hi[0]
        assert np.all(pred.coefficient_lo <= pred.coefficients)
        assert np.all(pred.coefficients <= pred.coefficient_hi)
        assert pred.eigenvectors.shape == (1, 399)
        assert not pred.out_of_box

    def test_out_of_box_widens_band(self, ho1d_model):
        inside = [online_predict(ho1d_model, mu) for mu in HO1D_TEST_POINTS]
        widths = [p.eigenvalue_hi[0] - p.eigenvalue_lo[0] for p in inside]
        for mu in (0.5, 9.5):
            pred = online_predict(ho1d_model, [mu])
            assert pred.out_of_box
            assert pred.eigenvalue_hi[0] - pred.eigenvalue_lo[0] > np.median(widths)

    def test_wrong_dimension(self, ho1d_model):
        with pytest.raises(ConfigError):
            online_predict(ho1d_model, [1.0, 2.0])

    def test_to_dict(self, tiny_model):
        data = online_predict(tiny_model, [3.0]).to_dict(include_vectors=True)
        assert data["eigenvalues"][0]["k"] == 1
        assert [c["index"] for c in data["coefficients"]] == list(range(1, tiny_model.basis.n_modes + 1))
        assert len(data["eigenvectors"][0]) == tiny_model.n_dofs
        assert "eigenvectors" not in online_predict(tiny_model, [3.0]).to_dict()


class TestEvaluate:
    def test_ho1d_accuracy(self, ho1d_model):
        report = evaluate(ho1d_model, explicit(np.reshape(HO1D_TEST_POINTS, (-1, 1))), h=0.05)
        agg = report.aggregate()
        assert agg["n_failed"] == 0
        assert agg["max_lambda_err"] <= 5e-3
        dd = {row.mu[0]: row.lambda_dd for row in report.rows}
        assert dd[4.5] == pytest.approx(2.2548, abs=5e-3)

    def test_ho1d_band_coverage(self, ho1d):
        design = uniform_grid(ho1d.parameter_box, 21)
        model = offline_train(ho1d, 0.05, design)
        tests = explicit(np.linspace(1.2, 8.8, 20).reshape(-1, 1))
        assert evaluate(model, tests).aggregate()["coverage"] >= 0.6
        report = evaluate(model, explicit(np.reshape(HO1D_TEST_POINTS, (-1, 1))))
        for row in report.rows:
            assert row.lambda_err <= 5e-3

    def test_training_points_are_reproduced(self, crossing_model):
        report = evaluate(crossing_model, explicit(crossing_model.design.points[::3]))
        for row in report.rows:
            assert row.lambda_err <= 1e-5 * abs(row.lambda_fem)

    def test_mesh_mismatch(self, ho1d_model):
        with pytest.raises(ConfigError):
            evaluate(ho1d_model, explicit([[2.5]]), h=0.1)

    def test_failed_solves_become_nan_rows(self, tiny_model, monkeypatch):
        from eigenrom import settings
        monkeypatch.setattr(settings, "DENSE_LIMIT", 3)
        report = evaluate(tiny_model, explicit([[2.5], [3.5]]))
        assert report.n_failed == 2
        assert all(math.isnan(row.lambda_fem) for row in report.rows)
        assert report.violations()

    def test_violations(self):
        rows = [ErrorRow(mu=(1.0,), k=1, lambda_fem=1.0, lambda_dd=1.1, lambda_lo=0.9,
                         lambda_hi=1.2, vec_inf_err=0.01, vec_l2_rel_err=0.02),
                ErrorRow(mu=(2.0,), k=1, lambda_fem=2.0, lambda_dd=2.0, lambda_lo=2.05,
                         lambda_hi=2.1, vec_inf_err=0.0, vec_l2_rel_err=0.0)]
        report = ErrorReport(rows=rows)
        agg = report.aggregate()
        assert agg["max_lambda_err"] == pytest.approx(0.1)
        assert agg["coverage"] == pytest.approx(0.5)
        assert report.violations(lambda_abs=0.2, coverage=0.5) == []
        assert len(report.violations(lambda_abs=0.05, vec_inf=1e-3, coverage=0.9)) == 3


class TestModelDocument:
    def test_round_trip(self, tiny_model):
        restored = RomModel.from_dict(tiny_model.to_dict())
        a = online_predict(tiny_model, [3.3])
        b = online_predict(restored, [3.3])
        np.testing.assert_allclose(a.eigenvalues, b.eigenvalues, rtol=1e-12)
        np.testing.assert_allclose(a.eigenvectors, b.eigenvectors, rtol=1e-12, atol=1e-15)

    def test_regressor_count_checked(self, tiny_model):
        data = tiny_model.to_dict()
        data["coefficient_models"] = data["coefficient_models"][:-1]
        with pytest.raises(ModelFormatError):
            RomModel.from_dict(data)

    def test_missing_key(self, tiny_model):
        data = tiny_model.to_dict()
        del data["basis"]
        with pytest.raises(ModelFormatError):
            RomModel.from_dict(data)


class TestConvergence:
    def test_ho1d_second_order(self, ho1d):
        rows = convergence_study(ho1d, [0.2, 0.1, 0.05], 3.0)
        assert [r.h for r in rows] == [0.2, 0.1, 0.05]
        for row in rows[1:]:
            assert 3.5 <= 2 ** row.rate <= 4.5

    def test_crossing_against_analytic(self, crossing):
        rows = convergence_study(crossing, [0.2, 0.1], -0.5)
        assert rows[-1].error < rows[0].error
        assert 3.5 <= 2 ** rows[-1].rate <= 4.5

    def test_without_analytic_spectrum(self):
        rows = convergence_study(get_problem("nonaffine1p"), [0.25, 0.125], 2.0)
        assert rows[0].error is not None and rows[-1].error is None

    def test_needs_two_meshes(self, ho1d):
        with pytest.raises(ConfigError):
            convergence_study(ho1d, [0.1], 3.0)

    @pytest.mark.slow
    def test_crossing_first_pair_reference(self, crossing):
        model = offline_train(crossing, 0.05, uniform_grid(crossing.parameter_box, 19))
        assert model.basis.n_modes == 1
        assert model.n_regressors == 2
        report = evaluate(model, explicit([[-0.75], [-0.25], [0.25], [0.75]]))
        for row in report.rows:
            assert row.lambda_err <= 1e-3
        fem = {row.mu[0]: row.lambda_fem for row in report.rows}
        assert fem[-0.75] == pytest.approx(3.08606437, abs=1e-4)

    @pytest.mark.slow
    def test_crossing_simultaneous_reference(self, crossing):
        design = uniform_grid(crossing.parameter_box, 19)
        model = offline_train(crossing, 0.05, design, mode="simultaneous", n_e=3)
        # the triangulation splits the second and third modes by about 1e-2 at mu = 0,
        # which leaves a fifth POD mode carrying just over 1e-8 of the energy
        profile = model.basis.energy_profile()
        assert 1.0 - profile[3] == pytest.approx(1.44e-8, rel=0.3)
        assert 1.0 - profile[4] < 1e-9
        assert model.basis.n_modes == 5
        assert model.n_regressors == 3 + 5

        loose = offline_train(crossing, 0.05, design, mode="simultaneous", n_e=3, epsilon=2e-8)
        assert loose.basis.n_modes == 4
        assert loose.n_regressors == 7
        values = online_predict(loose, [0.25]).eigenvalues
        assert values[0] == pytest.approx(5.55496589, abs=1e-3)
        np.testing.assert_allclose(values[1:], [12.97341757, 14.82575077], atol=0.15)


class TestReferenceProblems:
    def test_nonlinear_pipeline(self):
        spec = get_problem("nonlinear1d")
        model = offline_train(spec, 0.01, uniform_grid(spec.parameter_box, 41))
        points = np.arange(1.5, 7.0, 1.0).reshape(-1, 1)
        report = evaluate(model, explicit(points))
        assert report.n_failed == 0
        assert len(report.rows) == 6
        for row in report.rows:
            assert row.lambda_err <= 5e-2
        fom = FullOrderModel(spec, spec.build_mesh(0.01))
        for mu in points:
            assert 1 <= fom.solve(mu)[0].iterations <= 15

    def test_nonaffine_pipeline(self):
        spec = get_problem("nonaffine1p")
        model = offline_train(spec, 0.05, uniform_grid(spec.parameter_box, 36))
        report = evaluate(model, explicit([[1.5], [3.5], [5.5], [7.5]]))
        agg = report.aggregate()
        assert agg["max_lambda_err"] <= 7e-2
        assert agg["max_vec_inf_err"] <= 5e-3

    @pytest.mark.slow
    def test_nonaffine_pipeline_fine_mesh(self):
        spec = get_problem("nonaffine1p")
        model = offline_train(spec, 0.01, uniform_grid(spec.parameter_box, 36))
        report = evaluate(model, explicit([[1.5], [3.5], [5.5], [7.5]]))
        agg = report.aggregate()
        assert agg["n_failed"] == 0
        assert agg["max_lambda_err"] <= 7e-2
        assert agg["max_vec_inf_err"] <= 5e-3
        fem = {row.mu[0]: row.lambda_fem for row in report.rows}
        assert fem[1.5] == pytest.approx(39.62169633, abs=5e-3)

    @pytest.mark.slow
    def test_ho2d_pipeline(self):
        spec = get_problem("ho2d")
        model = offline_train(spec, 0.05, uniform_grid(spec.parameter_box, 21), jobs=4)
        mus = [1.5, 2.5, 3.5, 4.5, 5.5, 6.5, 7.5]
        report = evaluate(model, explicit(np.reshape(mus, (-1, 1))), jobs=4)
        assert report.n_failed == 0
        assert report.aggregate()["max_lambda_err"] <= 2.5e-2
        for row in report.rows:
            if row.mu[0] >= 3.5:
                assert row.lambda_fem == pytest.approx(row.mu[0], abs=1e-2)
