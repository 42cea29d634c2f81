import math

import numpy as np
import pytest
import scipy.linalg

from eigenrom.errors import ConfigError
from eigenrom.mesh_fem import (
    UNIT_FIELD,
    CoefficientField,
    assemble_interpolated_mass,
    assemble_mass,
    assemble_stiffness,
    assemble_vector_from_quadrature,
    assemble_weighted_mass,
    blend_with_lumped,
    build_interval_mesh,
    build_rect_mesh,
    cells_for_mesh_size,
    element_measures,
    interpolate_p1,
    quadrature_rule,
)


def p1_laplace_eigenvalue(k: int, h: float) -> float:
    """Closed form of the k-th P1 (consistent mass) eigenvalue of -u'' on (0, 1)."""
    c = math.cos(k * math.pi * h)
    return 6.0 / h ** 2 * (1.0 - c) / (2.0 + c)


class TestIntervalMesh:
    def test_counts_and_boundary(self):
        mesh = build_interval_mesh(0.0, 1.0, 0.25)
        assert mesh.n_vertices == 5
        assert mesh.n_elements == 4
        assert mesh.n_dofs == 3
        assert mesh.boundary_nodes.tolist() == [0, 4]
        np.testing.assert_allclose(mesh.interior_coordinates().ravel(), [0.25, 0.5, 0.75])

    def test_descriptor(self):
        mesh = build_interval_mesh(-10.0, 10.0, 0.05)
        assert mesh.descriptor == {"kind": "interval", "bounds": [-10.0, 10.0], "h": 0.05, "n": 400}
        assert mesh.n_dofs == 399

    @pytest.mark.parametrize("h", [0.0, -0.1, 3.0])
    def test_bad_mesh_size(self, h):
        with pytest.raises(ConfigError):
            build_interval_mesh(0.0, 1.0, h)

    def test_expand_puts_zero_on_boundary(self):
        mesh = build_interval_mesh(0.0, 1.0, 0.25)
        full = mesh.expand(np.array([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(full, [0.0, 1.0, 2.0, 3.0, 0.0])


class TestRectMesh:
    def test_two_by_two(self):
        mesh = build_rect_mesh(0.0, 1.0, 0.0, 1.0, 2)
        assert mesh.n_vertices == 9
        assert mesh.n_elements == 8
        assert len(mesh.boundary_nodes) == 8
        assert mesh.n_dofs == 1
        np.testing.assert_allclose(mesh.interior_coordinates(), [[0.5, 0.5]])

    def test_triangles_are_positively_oriented(self):
        mesh = build_rect_mesh(-1.0, 1.0, -1.0, 1.0, 6)
        areas = element_measures(mesh)
        assert np.all(areas > 0)
        assert areas.sum() == pytest.approx(4.0)

    def test_too_coarse(self):
        with pytest.raises(ConfigError):
            build_rect_mesh(0.0, 1.0, 0.0, 1.0, 1)

    def test_cells_for_mesh_size(self):
        assert cells_for_mesh_size(2.0, 0.05) == 40
        assert cells_for_mesh_size(math.pi, 0.05) == 63
        with pytest.raises(ConfigError):
            cells_for_mesh_size(1.0, 0.0)


class TestAssembly:
    def test_1d_stiffness_stencil(self):
        mesh = build_interval_mesh(0.0, 1.0, 0.25)
        a = assemble_stiffness(mesh).toarray()
        expected = 4.0 * np.array([[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 2.0]])
        np.testing.assert_allclose(a, expected)

    @pytest.mark.parametrize("mesh", [
        build_interval_mesh(-1.0, 2.0, 0.1),
        build_rect_mesh(0.0, 2.0, 0.0, 1.5, 5),
    ])
    def test_full_mass_integrates_domain_measure(self, mesh):
        m = assemble_mass(mesh, dirichlet=False)
        assert m.sum() == pytest.approx(3.0, rel=1e-12)

    @pytest.mark.parametrize("mesh", [
        build_interval_mesh(0.0, 1.0, 0.2),
        build_rect_mesh(0.0, 1.0, 0.0, 1.0, 4),
    ])
    def test_full_stiffness_annihilates_constants(self, mesh):
        a = assemble_stiffness(mesh, dirichlet=False)
        np.testing.assert_allclose(a @ np.ones(mesh.n_vertices), 0.0, atol=1e-12)

    @pytest.mark.parametrize("mesh", [
        build_interval_mesh(0.0, 1.0, 0.1),
        build_rect_mesh(0.0, 1.0, 0.0, 1.0, 5),
    ])
    def test_unit_weight_reproduces_mass(self, mesh):
        weighted = assemble_weighted_mass(mesh, UNIT_FIELD, mu=[0.0]).toarray()
        np.testing.assert_allclose(weighted, assemble_mass(mesh).toarray(), atol=1e-14)

    def test_x_squared_weight_is_exact_in_1d(self):
        mesh = build_interval_mesh(-1.0, 1.0, 0.1)
        field = CoefficientField("x^2", lambda p, mu: p[:, 0] ** 2)
        m = assemble_weighted_mass(mesh, field, mu=[0.0], dirichlet=False)
        assert m.sum() == pytest.approx(2.0 / 3.0, rel=1e-12)

    def test_scale_is_linear(self):
        mesh = build_rect_mesh(0.0, 1.0, 0.0, 1.0, 3)
        np.testing.assert_allclose(assemble_stiffness(mesh, scale=0.5).toarray(),
                                   0.5 * assemble_stiffness(mesh).toarray())

    def test_anisotropic_diffusion_splits_by_axis(self):
        mesh = build_rect_mesh(0.0, 1.0, 0.0, 1.0, 4)
        kx = assemble_stiffness(mesh, np.diag([1.0, 0.0]) + np.diag([0.0, 1e-300])).toarray()
        both = assemble_stiffness(mesh, np.diag([1.0, 2.0])).toarray()
        iso = assemble_stiffness(mesh).toarray()
        np.testing.assert_allclose(both - iso, iso - kx, atol=1e-12)

    def test_non_spd_diffusion_rejected(self):
        mesh = build_rect_mesh(0.0, 1.0, 0.0, 1.0, 2)
        with pytest.raises(ConfigError):
            assemble_stiffness(mesh, np.diag([1.0, -1.0]))

    def test_load_vector_of_constant(self):
        mesh = build_rect_mesh(0.0, 1.0, 0.0, 1.0, 4)
        _, weights, _ = quadrature_rule(mesh)
        load = assemble_vector_from_quadrature(mesh, np.ones_like(weights), dirichlet=False)
        assert load.sum() == pytest.approx(1.0)

    def test_interpolation_of_linear_function(self):
        mesh = build_rect_mesh(0.0, 1.0, 0.0, 1.0, 3)
        values = 2.0 * mesh.vertices[:, 0] - mesh.vertices[:, 1]
        points, _, _ = quadrature_rule(mesh)
        np.testing.assert_allclose(interpolate_p1(mesh, values),
                                   2.0 * points[..., 0] - points[..., 1], atol=1e-14)


class TestLaplaceSpectrum:
    @pytest.mark.parametrize("h", [0.25, 0.1, 0.05])
    def test_1d_matches_closed_form(self, h):
        mesh = build_interval_mesh(0.0, 1.0, h)
        values = scipy.linalg.eigh(assemble_stiffness(mesh).toarray(),
                                   assemble_mass(mesh).toarray(), eigvals_only=True)
        for k in (1, 2):
            assert values[k - 1] == pytest.approx(p1_laplace_eigenvalue(k, h), rel=1e-10)

    def test_1d_converges_to_pi_squared(self):
        coarse, fine = (p1_laplace_eigenvalue(1, h) - math.pi ** 2 for h in (0.1, 0.05))
        assert 3.5 <= coarse / fine <= 4.5


class TestMassTreatment:
    @pytest.mark.parametrize("mesh", [
        build_interval_mesh(0.0, 1.0, 0.1),
        build_rect_mesh(0.0, 1.0, 0.0, 1.0, 4),
    ])
    @pytest.mark.parametrize("fraction", [0.0, 0.535, 1.0])
    def test_blend_preserves_row_sums(self, mesh, fraction):
        full = assemble_mass(mesh, dirichlet=False)
        blended = assemble_mass(mesh, dirichlet=False, consistent_fraction=fraction)
        np.testing.assert_allclose(np.asarray(blended.sum(axis=1)).ravel(),
                                   np.asarray(full.sum(axis=1)).ravel(), rtol=1e-12)

    def test_lumped_mass_is_diagonal(self):
        mesh = build_rect_mesh(0.0, 1.0, 0.0, 1.0, 4)
        lumped = assemble_mass(mesh, consistent_fraction=0.0).toarray()
        np.testing.assert_allclose(lumped, np.diag(np.full(mesh.n_dofs, 0.25 ** 2)), atol=1e-15)

    def test_blend_is_linear_in_fraction(self):
        mesh = build_interval_mesh(0.0, 1.0, 0.25)
        full = assemble_mass(mesh).toarray()
        lumped = assemble_mass(mesh, consistent_fraction=0.0).toarray()
        half = assemble_mass(mesh, consistent_fraction=0.5).toarray()
        np.testing.assert_allclose(half, 0.5 * (full + lumped), atol=1e-15)

    @pytest.mark.parametrize("fraction", [-0.1, 1.5])
    def test_fraction_out_of_range(self, fraction):
        mesh = build_interval_mesh(0.0, 1.0, 0.25)
        with pytest.raises(ConfigError):
            blend_with_lumped(assemble_mass(mesh, dirichlet=False), fraction)

    def test_weighted_mass_blends_before_dirichlet(self):
        mesh = build_interval_mesh(0.0, 1.0, 0.25)
        lumped = assemble_weighted_mass(mesh, UNIT_FIELD, mu=[0.0], consistent_fraction=0.0)
        np.testing.assert_allclose(lumped.toarray(), 0.25 * np.eye(3), atol=1e-15)


class TestInterpolatedMass:
    @pytest.mark.parametrize("mesh", [
        build_interval_mesh(0.0, 1.0, 0.1),
        build_rect_mesh(0.0, 1.0, 0.0, 1.0, 5),
    ])
    def test_unit_field_reproduces_mass(self, mesh):
        interpolated = assemble_interpolated_mass(mesh, UNIT_FIELD, mu=[0.0]).toarray()
        np.testing.assert_allclose(interpolated, assemble_mass(mesh).toarray(), atol=1e-14)

    def test_linear_field_matches_gauss_quadrature_in_1d(self):
        mesh = build_interval_mesh(-1.0, 2.0, 0.2)
        field = CoefficientField("x", lambda p, mu: 3.0 * p[:, 0] + 1.0)
        exact = assemble_weighted_mass(mesh, field, mu=[0.0], dirichlet=False).toarray()
        interpolated = assemble_interpolated_mass(mesh, field, mu=[0.0], dirichlet=False).toarray()
        np.testing.assert_allclose(interpolated, exact, atol=1e-13)

    def test_single_element_values(self):
        mesh = build_interval_mesh(0.0, 1.0, 1.0)
        field = CoefficientField("nodal", lambda p, mu: np.where(p[:, 0] > 0.5, 4.0, 1.0))
        local = assemble_interpolated_mass(mesh, field, mu=[0.0], dirichlet=False).toarray()
        # f interpolates 1 -> 4 linearly; integrals of f (1-x)^2, f x(1-x), f x^2
        np.testing.assert_allclose(local, np.array([[7.0, 5.0], [5.0, 13.0]]) / 12.0, atol=1e-14)

    def test_x_squared_interpolant_overestimates(self):
        mesh = build_interval_mesh(-1.0, 1.0, 0.1)
        field = CoefficientField("x^2", lambda p, mu: p[:, 0] ** 2)
        m = assemble_interpolated_mass(mesh, field, mu=[0.0], dirichlet=False)
        # total is the integral of I_h x^2, which exceeds 2/3 by h^2 / 3 on (-1, 1)
        assert m.sum() == pytest.approx(2.0 / 3.0 + 0.1 ** 2 / 3.0, rel=1e-10)
