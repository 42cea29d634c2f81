"""
Mesh & FEM - P1 finite elements on intervals and structured triangulations.

Covers:
  1. Uniform 1D interval meshes and structured 2D rectangle triangulations
  2. Exact element integrals for constant-coefficient stiffness and mass
  3. Quadrature-based weighted mass (4-point Gauss-Legendre in 1D,
     3-point mid-edge rule in 2D)
  4. Weighted mass of a P1-interpolated coefficient, integrated exactly
  5. Mass treatment: consistent, row-sum lumped, or a blend of the two
  6. Dirichlet elimination: restriction to interior degrees of freedom

Global matrices are scipy CSR matrices indexed by vertices until
``apply_dirichlet`` restricts them to the interior ordering held in
``Mesh.interior_map``.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp

from eigenrom.errors import ConfigError

logger = logging.getLogger(__name__)

# ──────────────────── Quadrature tables ──────────────────── #

GAUSS_POINTS_1D, GAUSS_WEIGHTS_1D = np.polynomial.legendre.leggauss(4)

# Barycentric coordinates of the three edge midpoints; row q gives the value
# of each vertex basis function at midpoint q.
MIDEDGE_BASIS_2D = np.array([
    [0.5, 0.5, 0.0],
    [0.0, 0.5, 0.5],
    [0.5, 0.0, 0.5],
])

REFERENCE_GRADIENTS_2D = np.array([
    [-1.0, -1.0],
    [1.0, 0.0],
    [0.0, 1.0],
])


# ──────────────────── Domain types ──────────────────── #

@dataclass(frozen=True)
class Mesh:
    """
    Vertices, element connectivity and Dirichlet tagging.

    ``interior_map[v]`` is the dof index of vertex ``v`` or -1 for a
    boundary vertex; ``interior_nodes[i]`` is the inverse map.
    """
    dim: int
    vertices: np.ndarray
    elements: np.ndarray
    boundary_nodes: np.ndarray
    interior_map: np.ndarray = field(repr=False)
    interior_nodes: np.ndarray = field(repr=False)
    descriptor: dict = field(default_factory=dict, compare=False)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_dofs(self) -> int:
        return self.interior_nodes.shape[0]

    def expand(self, interior_values: np.ndarray) -> np.ndarray:
        """Vertex vector with zeros on the boundary."""
        full = np.zeros(self.n_vertices)
        full[self.interior_nodes] = interior_values
        return full

    def interior_coordinates(self) -> np.ndarray:
        return self.vertices[self.interior_nodes]


@dataclass(frozen=True)
class CoefficientField:
    """
    Spatially varying coefficient ``f(x; mu)`` used inside quadrature.

    ``evaluator(points, mu)`` receives an ``(n, dim)`` array and returns
    ``n`` values (a scalar is broadcast).
    """
    name: str
    evaluator: Callable[[np.ndarray, np.ndarray], Union[np.ndarray, float]]

    def __call__(self, points: np.ndarray, mu) -> np.ndarray:
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        values = np.asarray(self.evaluator(points, mu), dtype=float)
        values = np.broadcast_to(values, (points.shape[0],))
        if not np.all(np.isfinite(values)):
            raise ConfigError(f"Coefficient field '{self.name}' is not finite at mu={mu.tolist()}")
        return values


UNIT_FIELD = CoefficientField("one", lambda points, mu: 1.0)


def _finalize_mesh(dim: int, vertices: np.ndarray, elements: np.ndarray,
                   boundary: np.ndarray, descriptor: dict) -> Mesh:
    boundary = np.unique(boundary).astype(np.int64)
    interior_map = np.full(vertices.shape[0], -1, dtype=np.int64)
    mask = np.ones(vertices.shape[0], dtype=bool)
    mask[boundary] = False
    interior_nodes = np.flatnonzero(mask)
    interior_map[interior_nodes] = np.arange(interior_nodes.size)
    return Mesh(dim=dim, vertices=vertices, elements=elements.astype(np.int64),
                boundary_nodes=boundary, interior_map=interior_map,
                interior_nodes=interior_nodes, descriptor=descriptor)


# ──────────────────── Mesh builders ──────────────────── #

def build_interval_mesh(a: float, b: float, h: float) -> Mesh:
    """Uniform mesh of (a, b) with round((b-a)/h) elements; endpoints are boundary."""
    if not h > 0:
        raise ConfigError(f"Mesh size must be positive, got h={h}")
    if not a < b:
        raise ConfigError(f"Degenerate interval ({a}, {b})")

    n_el = int(round((b - a) / h))
    if n_el < 1:
        raise ConfigError(f"Mesh size h={h} is larger than the interval ({a}, {b})")

    vertices = np.linspace(a, b, n_el + 1).reshape(-1, 1)
    elements = np.column_stack([np.arange(n_el), np.arange(1, n_el + 1)])
    descriptor = {"kind": "interval", "bounds": [float(a), float(b)], "h": float(h), "n": n_el}

    mesh = _finalize_mesh(1, vertices, elements, np.array([0, n_el]), descriptor)
    logger.debug("Interval mesh (%g, %g): %d elements, N_h=%d", a, b, n_el, mesh.n_dofs)
    return mesh


def build_rect_mesh(x0: float, x1: float, y0: float, y1: float, n: int) -> Mesh:
    """
    Structured (n+1)^2-vertex triangulation of [x0,x1]x[y0,y1].

    Every cell is split along its (lower-left, upper-right) diagonal.
    """
    if n < 2:
        raise ConfigError(f"Rectangle mesh needs n >= 2 cells per side, got n={n}")
    if not (x0 < x1 and y0 < y1):
        raise ConfigError(f"Degenerate rectangle [{x0},{x1}]x[{y0},{y1}]")

    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    gx, gy = np.meshgrid(xs, ys)
    vertices = np.column_stack([gx.ravel(), gy.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (j * (n + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + (n + 1)
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    elements = np.empty((2 * n * n, 3), dtype=np.int64)
    elements[0::2] = lower
    elements[1::2] = upper

    gi, gj = np.meshgrid(np.arange(n + 1), np.arange(n + 1))
    on_border = (gi == 0) | (gi == n) | (gj == 0) | (gj == n)
    boundary = np.flatnonzero(on_border.ravel())

    descriptor = {"kind": "rectangle", "bounds": [float(x0), float(x1), float(y0), float(y1)],
                  "h": float((x1 - x0) / n), "n": int(n)}
    mesh = _finalize_mesh(2, vertices, elements, boundary, descriptor)
    logger.debug("Rectangle mesh n=%d: %d triangles, N_h=%d", n, mesh.n_elements, mesh.n_dofs)
    return mesh


def cells_for_mesh_size(length: float, h: float) -> int:
    """Number of cells along a side of the given length for mesh size h."""
    if not h > 0:
        raise ConfigError(f"Mesh size must be positive, got h={h}")
    return int(round(length / h))


# ──────────────────── Element geometry ──────────────────── #

def element_measures(mesh: Mesh) -> np.ndarray:
    """Interval lengths (1D) or signed triangle areas (2D)."""
    coords = mesh.vertices[mesh.elements]
    if mesh.dim == 1:
        return coords[:, 1, 0] - coords[:, 0, 0]
    e1 = coords[:, 1] - coords[:, 0]
    e2 = coords[:, 2] - coords[:, 0]
    return 0.5 * (e1[:, 0] * e2[:, 1] - e2[:, 0] * e1[:, 1])


def _basis_gradients(mesh: Mesh, measures: np.ndarray) -> np.ndarray:
    """Constant P1 gradients per element, shape (n_el, n_basis, dim)."""
    if mesh.dim == 1:
        inv_h = 1.0 / measures
        return np.stack([-inv_h, inv_h], axis=1)[:, :, None]

    coords = mesh.vertices[mesh.elements]
    jac = np.stack([coords[:, 1] - coords[:, 0], coords[:, 2] - coords[:, 0]], axis=2)
    inv_jac = np.linalg.inv(jac)
    return np.einsum("ak,ekj->eaj", REFERENCE_GRADIENTS_2D, inv_jac)


def quadrature_rule(mesh: Mesh):
    """
    Quadrature points, weights and basis values for every element.

    Returns (points (n_el, n_q, dim), weights (n_el, n_q), basis (n_q, n_basis)).
    """
    measures = element_measures(mesh)
    coords = mesh.vertices[mesh.elements]

    if mesh.dim == 1:
        basis = np.column_stack([(1.0 - GAUSS_POINTS_1D) / 2.0, (1.0 + GAUSS_POINTS_1D) / 2.0])
        points = np.einsum("qa,ead->eqd", basis, coords)
        weights = np.outer(measures / 2.0, GAUSS_WEIGHTS_1D)
        return points, weights, basis

    basis = MIDEDGE_BASIS_2D
    points = np.einsum("qa,ead->eqd", basis, coords)
    weights = np.repeat((measures / 3.0)[:, None], 3, axis=1)
    return points, weights, basis


def interpolate_p1(mesh: Mesh, vertex_values: np.ndarray) -> np.ndarray:
    """P1 interpolant evaluated at the quadrature points, shape (n_el, n_q)."""
    _, _, basis = quadrature_rule(mesh)
    return vertex_values[mesh.elements] @ basis.T


# ──────────────────── Global assembly ──────────────────── #

def _scatter(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    nb = mesh.elements.shape[1]
    rows = np.repeat(mesh.elements, nb, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, nb)).ravel()
    shape = (mesh.n_vertices, mesh.n_vertices)
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=shape).tocsr()


def _as_diffusion(mesh: Mesh, diffusion) -> np.ndarray:
    tensor = np.atleast_2d(np.asarray(diffusion, dtype=float))
    if tensor.shape == (1, 1):
        tensor = tensor[0, 0] * np.eye(mesh.dim)
    if tensor.shape != (mesh.dim, mesh.dim):
        raise ConfigError(f"Diffusion must be a scalar or {mesh.dim}x{mesh.dim} matrix")
    if not np.allclose(tensor, tensor.T, rtol=0.0, atol=1e-14 * np.abs(tensor).max()):
        raise ConfigError("Diffusion matrix must be symmetric positive definite")
    if np.linalg.eigvalsh(tensor).min() <= 0.0:
        raise ConfigError("Diffusion matrix must be symmetric positive definite")
    return tensor


def assemble_stiffness(mesh: Mesh, diffusion=1.0, scale: float = 1.0,
                       dirichlet: bool = True) -> sp.csr_matrix:
    """Entries scale * integral of (diffusion grad phi_j) . grad phi_i, exact per element."""
    tensor = _as_diffusion(mesh, diffusion)
    measures = element_measures(mesh)
    grads = _basis_gradients(mesh, measures)
    local = np.einsum("eik,kl,ejl->eij", grads, tensor, grads) * (scale * measures)[:, None, None]
    full = _scatter(mesh, local)
    return apply_dirichlet(full, mesh) if dirichlet else full


def blend_with_lumped(full_matrix: sp.spmatrix, consistent_fraction: float) -> sp.csr_matrix:
    """
    fraction * M + (1 - fraction) * diag(row sums of M).

    Row sums are taken on the vertex-indexed matrix, before any Dirichlet
    restriction, so the lumped diagonal carries the full integral of phi_i.
    """
    if not 0.0 <= consistent_fraction <= 1.0:
        raise ConfigError(f"Consistent mass fraction must lie in [0, 1], got {consistent_fraction}")
    full_matrix = sp.csr_matrix(full_matrix)
    if consistent_fraction == 1.0:
        return full_matrix
    lumped = sp.diags(np.asarray(full_matrix.sum(axis=1)).ravel(), format="csr")
    if consistent_fraction == 0.0:
        return lumped
    return (consistent_fraction * full_matrix + (1.0 - consistent_fraction) * lumped).tocsr()


def assemble_mass(mesh: Mesh, scale: float = 1.0, dirichlet: bool = True,
                  consistent_fraction: float = 1.0) -> sp.csr_matrix:
    """Mass matrix from the closed-form element integrals; fraction 1 is the consistent mass."""
    measures = element_measures(mesh)
    nb = mesh.dim + 1
    reference = (np.ones((nb, nb)) + np.eye(nb)) / ((nb + 1) * nb)
    local = reference[None, :, :] * (scale * measures)[:, None, None]
    full = blend_with_lumped(_scatter(mesh, local), consistent_fraction)
    return apply_dirichlet(full, mesh) if dirichlet else full


def assemble_from_quadrature(mesh: Mesh, coefficient: np.ndarray, scale: float = 1.0,
                             dirichlet: bool = True) -> sp.csr_matrix:
    """Entries scale * integral of c phi_j phi_i with c given at quadrature points."""
    _, weights, basis = quadrature_rule(mesh)
    local = np.einsum("eq,qi,qj->eij", weights * coefficient, basis, basis) * scale
    full = _scatter(mesh, local)
    return apply_dirichlet(full, mesh) if dirichlet else full


def assemble_vector_from_quadrature(mesh: Mesh, values: np.ndarray,
                                    dirichlet: bool = True) -> np.ndarray:
    """Load vector: integral of v phi_i with v given at quadrature points."""
    _, weights, basis = quadrature_rule(mesh)
    local = np.einsum("eq,qi->ei", weights * values, basis)
    full = np.zeros(mesh.n_vertices)
    np.add.at(full, mesh.elements.ravel(), local.ravel())
    return full[mesh.interior_nodes] if dirichlet else full


def assemble_weighted_mass(mesh: Mesh, coefficient: CoefficientField, mu, scale: float = 1.0,
                           dirichlet: bool = True, consistent_fraction: float = 1.0) -> sp.csr_matrix:
    """Entries scale * integral of f(x; mu) phi_j phi_i by quadrature."""
    points, _, _ = quadrature_rule(mesh)
    n_el, n_q, dim = points.shape
    values = coefficient(points.reshape(-1, dim), mu).reshape(n_el, n_q)
    full = blend_with_lumped(assemble_from_quadrature(mesh, values, scale=scale, dirichlet=False),
                             consistent_fraction)
    return apply_dirichlet(full, mesh) if dirichlet else full


def _triple_product_table(dim: int) -> np.ndarray:
    """T[a, b, c] = integral of lambda_a lambda_b lambda_c over a unit-measure simplex."""
    nb = dim + 1
    table = np.empty((nb, nb, nb))
    for a in range(nb):
        for b in range(nb):
            for c in range(nb):
                counts = np.bincount([a, b, c], minlength=nb)
                table[a, b, c] = (math.factorial(dim) * np.prod([math.factorial(m) for m in counts])
                                  / math.factorial(dim + 3))
    return table


def assemble_interpolated_mass(mesh: Mesh, coefficient: CoefficientField, mu, scale: float = 1.0,
                               dirichlet: bool = True) -> sp.csr_matrix:
    """
    Entries scale * integral of (I_h f) phi_j phi_i, exact.

    I_h f is the P1 interpolant of f(x; mu) through the mesh vertices.
    """
    nodal = coefficient(mesh.vertices, mu)
    table = _triple_product_table(mesh.dim)
    local = np.einsum("abc,ec->eab", table, nodal[mesh.elements])
    local *= (scale * element_measures(mesh))[:, None, None]
    full = _scatter(mesh, local)
    return apply_dirichlet(full, mesh) if dirichlet else full


def apply_dirichlet(full_matrix, mesh: Mesh):
    """Delete boundary rows and columns; rows follow ``mesh.interior_nodes``."""
    idx = mesh.interior_nodes
    if sp.issparse(full_matrix):
        return full_matrix.tocsr()[idx][:, idx]
    return np.asarray(full_matrix)[np.ix_(idx, idx)]
