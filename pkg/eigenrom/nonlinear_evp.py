"""
Nonlinear eigenproblem - Newton iteration on the bordered system.

Problem: a(u, v) + mu^2 (g(u), v) = lambda (u, v), (u, u) = 1.

Each Newton step linearizes g around the current iterate and solves

    [ A1 + mu^2 M_g' - lambda M   -M u ] [ d            ]   [ lambda M u - A1 u - mu^2 g ]
    [ 2 (M u)^T                    0   ] [ delta_lambda ] = [ 1 - u^T M u                ]

with the g-terms integrated by the mesh quadrature and u interpolated as P1.
"""

import logging
from dataclasses import dataclass
from typing import Iterator, Optional, Union

import numpy as np
import scipy.linalg

from eigenrom.eigensolve import Eigenpair, fix_sign, solve_generalized
from eigenrom.errors import ConfigError, NewtonError
from eigenrom.mesh_fem import (
    Mesh,
    assemble_from_quadrature,
    assemble_vector_from_quadrature,
    interpolate_p1,
)
from eigenrom.problems import ProblemSpec

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 50


@dataclass(frozen=True)
class NewtonState:
    u: np.ndarray
    lam: float
    iteration: int = 0
    residual: float = float("inf")


@dataclass(frozen=True)
class NonlinearSystem:
    """Linear part and nonlinearity of a problem on a fixed mesh."""
    spec: ProblemSpec
    mesh: Mesh
    stiffness: np.ndarray
    mass: np.ndarray

    @classmethod
    def from_spec(cls, spec: ProblemSpec, mesh: Mesh) -> "NonlinearSystem":
        if spec.nonlinearity is None:
            raise ConfigError(f"Problem '{spec.id.value}' has no nonlinearity")
        op = spec.assemble(mesh, spec.parameter_box[:, 0])
        return cls(spec=spec, mesh=mesh, stiffness=op.a_matrix.toarray(), mass=op.b_matrix.toarray())

    def g_terms(self, u: np.ndarray):
        """Load vector g_j = (g(u), phi_j) and matrix (g'(u) phi_j, phi_i)."""
        nl = self.spec.nonlinearity
        at_points = interpolate_p1(self.mesh, self.mesh.expand(u))
        g_vec = assemble_vector_from_quadrature(self.mesh, nl.g(at_points))
        dg_mat = assemble_from_quadrature(self.mesh, nl.dg(at_points)).toarray()
        return g_vec, dg_mat

    def residual_norm(self, u: np.ndarray, lam: float, mu) -> float:
        """||A1 u + mu^2 g(u) - lambda M u||_2."""
        weight = self.spec.nonlinearity.weight(self.spec.as_parameter(mu))
        g_vec, _ = self.g_terms(u)
        return float(np.linalg.norm(self.stiffness @ u + weight * g_vec - lam * (self.mass @ u)))


def as_system(target: Union[NonlinearSystem, ProblemSpec],
              mesh: Optional[Mesh] = None) -> NonlinearSystem:
    """Accept a prepared system, or a problem spec together with the mesh to discretize it on."""
    if isinstance(target, NonlinearSystem):
        return target
    if mesh is None:
        raise ConfigError(f"Problem '{target.id.value}' needs a mesh for the Newton solve")
    return NonlinearSystem.from_spec(target, mesh)


def newton_step(state: NewtonState, mu, system: Union[NonlinearSystem, ProblemSpec],
                mesh: Optional[Mesh] = None) -> NewtonState:
    """
    One Newton update of (u, lambda) from the bordered linear system.

    ``system`` is either a ``NonlinearSystem`` or the ``ProblemSpec`` plus
    ``mesh``; the latter reassembles the linear part on every call.
    """
    system = as_system(system, mesh)
    mu = system.spec.as_parameter(mu)
    u, lam = state.u, state.lam
    if not np.any(u):
        raise NewtonError("Newton iterate is the zero vector", iterations=state.iteration)

    weight = system.spec.nonlinearity.weight(mu)
    g_vec, dg_mat = system.g_terms(u)
    mass_u = system.mass @ u

    n = u.size
    bordered = np.zeros((n + 1, n + 1))
    bordered[:n, :n] = system.stiffness + weight * dg_mat - lam * system.mass
    bordered[:n, n] = -mass_u
    bordered[n, :n] = 2.0 * mass_u
    rhs = np.empty(n + 1)
    rhs[:n] = lam * mass_u - system.stiffness @ u - weight * g_vec
    rhs[n] = 1.0 - u @ mass_u

    try:
        step = scipy.linalg.solve(bordered, rhs)
    except np.linalg.LinAlgError as e:
        raise NewtonError(f"Bordered Newton matrix is singular at mu={mu.tolist()}: {e}",
                          residual=state.residual, iterations=state.iteration) from e
    if not np.all(np.isfinite(step)):
        raise NewtonError(f"Newton step is not finite at mu={mu.tolist()}",
                          residual=state.residual, iterations=state.iteration)

    d, d_lam = step[:n], step[n]
    return NewtonState(
        u=u + d,
        lam=lam + d_lam,
        iteration=state.iteration + 1,
        residual=float(abs(d_lam) + np.max(np.abs(d))),
    )


def initial_state(system: NonlinearSystem, init: Optional[Eigenpair] = None) -> NewtonState:
    """Seed from ``init`` or from the ground state of the linear part."""
    if init is None:
        init = solve_generalized(system.stiffness, system.mass, 1)[0]
    return NewtonState(u=np.array(init.vector, dtype=float), lam=float(init.value))


def iterate_newton(mu, system: NonlinearSystem, init: Optional[Eigenpair] = None,
                   max_iter: int = DEFAULT_MAX_ITER) -> Iterator[NewtonState]:
    """Yield successive Newton states, at most ``max_iter`` of them."""
    state = initial_state(system, init)
    for _ in range(max_iter):
        state = newton_step(state, mu, system)
        yield state


def solve_nonlinear(mu, system: Union[NonlinearSystem, ProblemSpec], init: Optional[Eigenpair] = None,
                    tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                    mesh: Optional[Mesh] = None) -> Eigenpair:
    """Iterate Newton until |delta_lambda| + ||delta_u||_inf < tol."""
    system = as_system(system, mesh)
    if not tol > 0:
        raise ConfigError(f"Newton tolerance must be positive, got {tol}")

    state = None
    for state in iterate_newton(mu, system, init=init, max_iter=max_iter):
        logger.debug("Newton mu=%s it=%d lambda=%.12g step=%.3e",
                     np.atleast_1d(mu).tolist(), state.iteration, state.lam, state.residual)
        if state.residual < tol:
            break
    else:
        last = None if state is None else state.residual
        raise NewtonError(f"Newton did not converge in {max_iter} iterations at mu={np.atleast_1d(mu).tolist()} "
                          f"(last step {last})", residual=last, iterations=max_iter)

    logger.info("Newton converged at mu=%s in %d iterations: lambda=%.10g",
                np.atleast_1d(mu).tolist(), state.iteration, state.lam)
    pair = Eigenpair(value=float(state.lam), vector=state.u, index=0, iterations=state.iteration)
    return fix_sign(pair, None if init is None else init.vector)
