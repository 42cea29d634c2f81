"""
Problem catalog - the six parametric benchmark eigenproblems.

Each ProblemSpec bundles:
  1. The spatial domain and how to mesh it for a mesh size h
  2. The parameter box
  3. The parametric bilinear-form pair, assembled as (A_h(mu), B_h(mu))
  4. An optional nonlinearity (g, g') for the Newton path
  5. An optional analytic spectrum used as a reference

Ids ("ho1d", "ho2d", "nonlinear1d", "nonaffine1p", "interface2p",
"crossing") are the strings the CLI and the model files use.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from eigenrom.errors import ConfigError
from eigenrom.mesh_fem import (
    CoefficientField,
    Mesh,
    assemble_interpolated_mass,
    assemble_mass,
    assemble_stiffness,
    assemble_weighted_mass,
    build_interval_mesh,
    build_rect_mesh,
    cells_for_mesh_size,
)

logger = logging.getLogger(__name__)


class ProblemId(str, Enum):
    HO1D = "ho1d"
    HO2D = "ho2d"
    NONLINEAR1D = "nonlinear1d"
    NONAFFINE1P = "nonaffine1p"
    INTERFACE2P = "interface2p"
    CROSSING = "crossing"


# ──────────────────── Interface problem constants ──────────────────── #

EPSILON_LEFT = 0.1
EPSILON_RIGHT = 0.2
# Half-width of the linear transition, in multiples of the mesh size.
TRANSITION_WIDTH_FACTOR = 1.0


# ──────────────────── Mass treatment ──────────────────── #

# Share of the consistent mass in B_h; the remainder is its row-sum lumping.
CONSISTENT_MASS = 1.0
LUMPED_MASS = 0.0
BLENDED_MASS_2D = 0.535


# ──────────────────── Domain types ──────────────────── #

@dataclass(frozen=True)
class AssembledOperator:
    """The pencil (A_h(mu), B_h(mu)) on interior dofs."""
    a_matrix: sp.csr_matrix
    b_matrix: sp.csr_matrix
    parameter: np.ndarray

    @property
    def size(self) -> int:
        return self.a_matrix.shape[0]

    def verify(self, rtol: float = 1e-12) -> bool:
        """Symmetry of both matrices and a successful Cholesky of B."""
        for name, mat in (("A", self.a_matrix), ("B", self.b_matrix)):
            scale = abs(mat).max() or 1.0
            if abs(mat - mat.T).max() > rtol * scale:
                raise ConfigError(f"{name}(mu) is not symmetric")
        try:
            scipy.linalg.cholesky(self.b_matrix.toarray(), lower=True)
        except np.linalg.LinAlgError as e:
            raise ConfigError(f"B(mu) is not positive definite: {e}")
        return True


@dataclass(frozen=True)
class Nonlinearity:
    """Pointwise nonlinearity g, its derivative, and the parameter weight mu^2."""
    g: Callable[[np.ndarray], np.ndarray]
    dg: Callable[[np.ndarray], np.ndarray]
    weight: Callable[[np.ndarray], float]


@dataclass(frozen=True)
class ProblemSpec:
    id: ProblemId
    title: str
    domain: dict
    parameter_box: np.ndarray
    build_parts: Callable[[Mesh], dict] = field(repr=False)
    combine: Callable[[dict, Mesh, np.ndarray], tuple] = field(repr=False)
    nonlinearity: Optional[Nonlinearity] = None
    analytic_eigenvalue: Optional[Callable[[tuple, np.ndarray], float]] = field(default=None, repr=False)
    analytic_spectrum: Optional[Callable[[np.ndarray, int], np.ndarray]] = field(default=None, repr=False)

    @property
    def n_params(self) -> int:
        return self.parameter_box.shape[0]

    def build_mesh(self, h: float) -> Mesh:
        bounds = self.domain["bounds"]
        if self.domain["kind"] == "interval":
            return build_interval_mesh(bounds[0], bounds[1], h)
        n = cells_for_mesh_size(bounds[1] - bounds[0], h)
        return build_rect_mesh(bounds[0], bounds[1], bounds[2], bounds[3], n)

    def as_parameter(self, mu) -> np.ndarray:
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        if mu.shape != (self.n_params,):
            raise ConfigError(f"Problem '{self.id.value}' takes {self.n_params} parameter(s), "
                              f"got {mu.tolist()}")
        return mu

    def contains(self, mu, tol: float = 1e-12) -> bool:
        mu = self.as_parameter(mu)
        lo, hi = self.parameter_box[:, 0], self.parameter_box[:, 1]
        span = hi - lo
        return bool(np.all(mu >= lo - tol * span) and np.all(mu <= hi + tol * span))

    def corners(self) -> np.ndarray:
        return np.array(list(itertools.product(*self.parameter_box.tolist())))

    def assembler(self, mesh: Mesh) -> Callable[[np.ndarray], AssembledOperator]:
        """mu -> AssembledOperator with parameter-independent parts cached."""
        parts = self.build_parts(mesh)

        def assemble(mu) -> AssembledOperator:
            mu = self.as_parameter(mu)
            a_matrix, b_matrix = self.combine(parts, mesh, mu)
            return AssembledOperator(a_matrix=a_matrix.tocsr(), b_matrix=b_matrix.tocsr(),
                                     parameter=mu)

        return assemble

    def assemble(self, mesh: Mesh, mu) -> AssembledOperator:
        return self.assembler(mesh)(mu)


def _box(*intervals) -> np.ndarray:
    box = np.array(intervals, dtype=float)
    if np.any(box[:, 0] >= box[:, 1]):
        raise ConfigError(f"Parameter box needs lo < hi in every coordinate: {box.tolist()}")
    return box


def _sorted_lattice(values: Callable[[int, int], float], start: int, count: int) -> np.ndarray:
    """First ``count`` sorted values of a two-index spectrum."""
    extent = start + count + 1
    spectrum = sorted(values(m, n) for m in range(start, extent) for n in range(start, extent))
    return np.array(spectrum[:count])


# ──────────────────── Harmonic oscillators ──────────────────── #

X_SQUARED = CoefficientField("x^2", lambda points, mu: points[:, 0] ** 2)
R_SQUARED = CoefficientField("x^2+y^2", lambda points, mu: points[:, 0] ** 2 + points[:, 1] ** 2)


def _oscillator_parts(weight: CoefficientField, mass_fraction: float, interpolate: bool):
    potential = assemble_interpolated_mass if interpolate else assemble_weighted_mass

    def build(mesh: Mesh) -> dict:
        return {
            "a1": assemble_stiffness(mesh, scale=0.5),
            "a2": potential(mesh, weight, mu=[0.0], scale=0.5),
            "mass": assemble_mass(mesh, consistent_fraction=mass_fraction),
        }
    return build


def _oscillator_combine(parts: dict, mesh: Mesh, mu: np.ndarray):
    return parts["a1"] + mu[0] ** 2 * parts["a2"], parts["mass"]


def ho1d_spec() -> ProblemSpec:
    """-1/2 u'' + 1/2 mu^2 x^2 u = lambda u on (-10, 10); lambda_n = (n + 1/2) mu."""
    return ProblemSpec(
        id=ProblemId.HO1D,
        title="Harmonic oscillator 1D",
        domain={"kind": "interval", "bounds": [-10.0, 10.0]},
        parameter_box=_box([1.0, 9.0]),
        build_parts=_oscillator_parts(X_SQUARED, LUMPED_MASS, interpolate=True),
        combine=_oscillator_combine,
        analytic_eigenvalue=lambda idx, mu: (idx[0] + 0.5) * float(np.atleast_1d(mu)[0]),
        analytic_spectrum=lambda mu, count: (np.arange(count) + 0.5) * float(np.atleast_1d(mu)[0]),
    )


def ho2d_spec() -> ProblemSpec:
    """2D oscillator on (-pi/2, pi/2)^2; lambda_{m,n} = (m + n + 1) mu."""
    half = math.pi / 2.0
    return ProblemSpec(
        id=ProblemId.HO2D,
        title="Harmonic oscillator 2D",
        domain={"kind": "rectangle", "bounds": [-half, half, -half, half]},
        parameter_box=_box([1.0, 9.0]),
        build_parts=_oscillator_parts(R_SQUARED, BLENDED_MASS_2D, interpolate=False),
        combine=_oscillator_combine,
        analytic_eigenvalue=lambda idx, mu: (idx[0] + idx[1] + 1) * float(np.atleast_1d(mu)[0]),
        analytic_spectrum=lambda mu, count: _sorted_lattice(
            lambda m, n: (m + n + 1) * float(np.atleast_1d(mu)[0]), 0, count),
    )


# ──────────────────── Nonlinear problem ──────────────────── #

def g_power(w: np.ndarray) -> np.ndarray:
    """g(w) = |w|^{7/3} w."""
    return np.abs(w) ** (7.0 / 3.0) * w


def dg_power(w: np.ndarray) -> np.ndarray:
    """g'(w) = (10/3) |w|^{7/3}."""
    return (10.0 / 3.0) * np.abs(w) ** (7.0 / 3.0)


def _laplace_mass_parts(mesh: Mesh) -> dict:
    return {"stiffness": assemble_stiffness(mesh),
            "mass": assemble_mass(mesh, consistent_fraction=CONSISTENT_MASS)}


def nonlinear1d_spec() -> ProblemSpec:
    """
    -u'' + mu^2 g(u) = lambda u on (0, 1) with (u, u) = 1.

    ``assemble`` returns the linear part (stiffness, mass); the Newton path
    adds the nonlinearity.
    """
    return ProblemSpec(
        id=ProblemId.NONLINEAR1D,
        title="Nonlinear eigenproblem 1D",
        domain={"kind": "interval", "bounds": [0.0, 1.0]},
        parameter_box=_box([1.0, 9.0]),
        build_parts=_laplace_mass_parts,
        combine=lambda parts, mesh, mu: (parts["stiffness"], parts["mass"]),
        nonlinearity=Nonlinearity(g=g_power, dg=dg_power, weight=lambda mu: float(mu[0]) ** 2),
    )


# ──────────────────── Non-affine problems ──────────────────── #

GAUSSIAN_WEIGHT = CoefficientField(
    "exp(-mu(x^2+y^2))",
    lambda points, mu: np.exp(-mu[0] * (points[:, 0] ** 2 + points[:, 1] ** 2)),
)


def nonaffine1p_spec() -> ProblemSpec:
    """-Laplace u = lambda exp(-mu(x^2+y^2)) u on (0, 1)^2."""
    return ProblemSpec(
        id=ProblemId.NONAFFINE1P,
        title="Non-affine single-parameter problem",
        domain={"kind": "rectangle", "bounds": [0.0, 1.0, 0.0, 1.0]},
        parameter_box=_box([1.0, 8.0]),
        build_parts=lambda mesh: {"stiffness": assemble_stiffness(mesh)},
        combine=lambda parts, mesh, mu: (parts["stiffness"],
                                         assemble_weighted_mass(mesh, GAUSSIAN_WEIGHT, mu,
                                                                consistent_fraction=BLENDED_MASS_2D)),
    )


def interface_signed_distance(points: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """x1 - mu1 sin(mu2 pi x2): negative on the epsilon_1 side."""
    return points[:, 0] - mu[0] * np.sin(mu[1] * np.pi * points[:, 1])


def interface_permittivity(width: float) -> CoefficientField:
    """
    epsilon(x; mu) ramping linearly from EPSILON_LEFT to EPSILON_RIGHT
    over |d| <= width around the interface.
    """
    if not width > 0:
        raise ConfigError(f"Transition width must be positive, got {width}")

    def evaluate(points, mu):
        d = interface_signed_distance(points, mu)
        t = np.clip((d + width) / (2.0 * width), 0.0, 1.0)
        return EPSILON_LEFT + (EPSILON_RIGHT - EPSILON_LEFT) * t

    return CoefficientField(f"interface(width={width:g})", evaluate)


def _interface_parts(mesh: Mesh) -> dict:
    width = TRANSITION_WIDTH_FACTOR * mesh.descriptor["h"]
    return {"stiffness": assemble_stiffness(mesh), "permittivity": interface_permittivity(width)}


def interface2p_spec() -> ProblemSpec:
    """-Laplace u = lambda eps(x; mu) u on (-1, 1)^2, interface x1 = mu1 sin(mu2 pi x2)."""
    return ProblemSpec(
        id=ProblemId.INTERFACE2P,
        title="Two-parameter interface problem",
        domain={"kind": "rectangle", "bounds": [-1.0, 1.0, -1.0, 1.0]},
        parameter_box=_box([0.1, 0.2], [1.0, 8.0]),
        build_parts=_interface_parts,
        combine=lambda parts, mesh, mu: (parts["stiffness"],
                                         assemble_weighted_mass(mesh, parts["permittivity"], mu,
                                                                consistent_fraction=BLENDED_MASS_2D)),
    )


# ──────────────────── Crossing eigenvalues ──────────────────── #

def crossing_eigenvalue(m: int, n: int, mu: float) -> float:
    return math.pi ** 2 / 4.0 * (m ** 2 + (1.0 + mu) * n ** 2)


def crossing_spec() -> ProblemSpec:
    """-div(diag(1, 1+mu) grad u) = lambda u on (-1, 1)^2."""
    return ProblemSpec(
        id=ProblemId.CROSSING,
        title="Anisotropic diffusion with crossing eigenvalues",
        domain={"kind": "rectangle", "bounds": [-1.0, 1.0, -1.0, 1.0]},
        parameter_box=_box([-0.9, 0.9]),
        build_parts=lambda mesh: {"mass": assemble_mass(mesh, consistent_fraction=BLENDED_MASS_2D)},
        combine=lambda parts, mesh, mu: (assemble_stiffness(mesh, np.diag([1.0, 1.0 + mu[0]])),
                                         parts["mass"]),
        analytic_eigenvalue=lambda idx, mu: crossing_eigenvalue(idx[0], idx[1], float(np.atleast_1d(mu)[0])),
        analytic_spectrum=lambda mu, count: _sorted_lattice(
            lambda m, n: crossing_eigenvalue(m, n, float(np.atleast_1d(mu)[0])), 1, count),
    )


# ──────────────────── Registry ──────────────────── #

PROBLEM_FACTORIES = {
    ProblemId.HO1D: ho1d_spec,
    ProblemId.HO2D: ho2d_spec,
    ProblemId.NONLINEAR1D: nonlinear1d_spec,
    ProblemId.NONAFFINE1P: nonaffine1p_spec,
    ProblemId.INTERFACE2P: interface2p_spec,
    ProblemId.CROSSING: crossing_spec,
}


def get_problem(problem_id) -> ProblemSpec:
    try:
        key = ProblemId(problem_id)
    except ValueError:
        valid = ", ".join(p.value for p in ProblemId)
        raise ConfigError(f"Unknown problem '{problem_id}' (expected one of: {valid})")
    return PROBLEM_FACTORIES[key]()
