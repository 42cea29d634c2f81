"""
POD - reduced basis from eigenvector snapshots.

  1. Sign alignment of snapshots along a parameter chain
  2. Stacking of several eigenvectors per parameter (simultaneous mode)
  3. POD through the correlation matrix C = S^T S with the energy criterion
     I(N) >= 1 - epsilon
  4. Projection S_N = V^T S and reconstruction u_h = V u_N
"""

import logging
from dataclasses import dataclass, replace
from typing import List, Sequence

import numpy as np
import scipy.linalg

from eigenrom.eigensolve import solve_symmetric
from eigenrom.errors import ConfigError, PodError

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-8
# Correlation eigenvalues below RANK_GUARD * sigma_1^2 are treated as zero.
RANK_GUARD = 1e-14


@dataclass(frozen=True)
class SnapshotSet:
    """Columns are eigenvectors; a column holds one block per eigen index."""
    matrix: np.ndarray
    parameters: np.ndarray
    eigen_indices: tuple = (0,)

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.shape[1] != self.parameters.shape[0]:
            raise ConfigError(f"Snapshot matrix has {self.matrix.shape[-1]} columns for "
                              f"{self.parameters.shape[0]} parameters")
        if self.matrix.shape[0] % len(self.eigen_indices):
            raise ConfigError("Snapshot rows are not a whole number of eigenvector blocks")
        if np.isnan(self.matrix).any():
            raise ConfigError("Snapshot matrix contains NaN entries")

    @property
    def n_snapshots(self) -> int:
        return self.matrix.shape[1]

    @property
    def block_size(self) -> int:
        return self.matrix.shape[0] // len(self.eigen_indices)

    def blocks(self) -> List[np.ndarray]:
        n = self.block_size
        return [self.matrix[b * n:(b + 1) * n] for b in range(len(self.eigen_indices))]


@dataclass(frozen=True)
class PodBasis:
    vectors: np.ndarray
    singular_values: np.ndarray
    n_modes: int
    epsilon: float
    energy: float

    @property
    def n_rows(self) -> int:
        return self.vectors.shape[0]

    def energy_profile(self) -> np.ndarray:
        """I(n) for n = 1..r."""
        squares = self.singular_values ** 2
        return np.cumsum(squares) / squares.sum()

    def to_dict(self) -> dict:
        return {
            "vectors": self.vectors.T.tolist(),
            "singular_values": self.singular_values.tolist(),
            "n_modes": self.n_modes,
            "epsilon": self.epsilon,
            "energy": self.energy,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PodBasis":
        return cls(vectors=np.asarray(data["vectors"], dtype=float).T,
                   singular_values=np.asarray(data["singular_values"], dtype=float),
                   n_modes=int(data["n_modes"]), epsilon=float(data["epsilon"]),
                   energy=float(data["energy"]))


# ──────────────────── Sign alignment ──────────────────── #

def chain_order(parameters: np.ndarray) -> tuple:
    """
    Nearest-neighbour chain over the parameters.

    Starts at the lexicographically smallest point; coordinates are scaled by
    the design span. Returns (order, predecessor) where predecessor[i] is the
    column a chain member aligns against (-1 for the start).
    """
    params = np.asarray(parameters, dtype=float)
    if params.ndim == 1:
        params = params.reshape(-1, 1)
    n = params.shape[0]
    predecessor = np.full(n, -1, dtype=int)
    if n == 0:
        return np.array([], dtype=int), predecessor

    span = params.max(axis=0) - params.min(axis=0)
    scaled = params / np.where(span > 0, span, 1.0)

    start = int(np.lexsort(params.T[::-1])[0])
    order = [start]
    visited = np.zeros(n, dtype=bool)
    visited[start] = True
    current = start
    for _ in range(n - 1):
        dist = np.linalg.norm(scaled - scaled[current], axis=1)
        dist[visited] = np.inf
        nxt = int(np.argmin(dist))
        predecessor[nxt] = current
        order.append(nxt)
        visited[nxt] = True
        current = nxt
    return np.array(order), predecessor


def align_signs(raw: SnapshotSet) -> SnapshotSet:
    """Flip a column block when ||u - u_prev|| >= ||u + u_prev|| along the chain."""
    order, predecessor = chain_order(raw.parameters)
    aligned = raw.matrix.copy()
    n = raw.block_size
    flips = 0
    for b in range(len(raw.eigen_indices)):
        rows = slice(b * n, (b + 1) * n)
        for col in order[1:]:
            prev = aligned[rows, predecessor[col]]
            u = aligned[rows, col]
            if np.linalg.norm(u - prev) >= np.linalg.norm(u + prev):
                aligned[rows, col] = -u
                flips += 1
    logger.debug("Sign alignment flipped %d of %d snapshot blocks", flips,
                 raw.n_snapshots * len(raw.eigen_indices))
    return replace(raw, matrix=aligned)


def stack_snapshots(sets: Sequence[SnapshotSet], n_e: int = None) -> SnapshotSet:
    """Stack n_e single-eigenvector sets into columns of height n_e * N_h."""
    sets = list(sets)
    if n_e is not None and len(sets) != n_e:
        raise ConfigError(f"Expected {n_e} snapshot sets, got {len(sets)}")
    if not sets:
        raise ConfigError("No snapshot sets to stack")
    first = sets[0]
    for other in sets[1:]:
        if other.parameters.shape != first.parameters.shape or \
                not np.array_equal(other.parameters, first.parameters):
            raise ConfigError("Snapshot sets do not share the same parameter list")
        if other.matrix.shape[0] != first.matrix.shape[0]:
            raise ConfigError("Snapshot sets have different N_h")

    aligned = [align_signs(s) for s in sets]
    indices = tuple(i for s in aligned for i in s.eigen_indices)
    return SnapshotSet(matrix=np.vstack([s.matrix for s in aligned]),
                       parameters=first.parameters, eigen_indices=indices)


# ──────────────────── POD ──────────────────── #

def compute_pod(snapshots: SnapshotSet, epsilon: float = DEFAULT_EPSILON) -> PodBasis:
    """POD basis through the eigen-decomposition of C = S^T S."""
    if not 0.0 < epsilon < 1.0:
        raise ConfigError(f"POD tolerance must lie in (0, 1), got {epsilon}")
    s = snapshots.matrix
    if s.shape[1] < 1 or not np.any(s):
        raise PodError("Snapshot matrix is empty or identically zero")

    eigvals, psi = solve_symmetric(s.T @ s)
    keep = eigvals > RANK_GUARD * eigvals[0]
    sigma = np.sqrt(eigvals[keep])
    psi = psi[:, keep]
    # Largest-magnitude entry of each psi_j positive, so modes have a fixed sign.
    lead = psi[np.argmax(np.abs(psi), axis=0), np.arange(psi.shape[1])]
    psi = psi * np.where(lead < 0, -1.0, 1.0)

    energy = np.cumsum(sigma ** 2) / np.sum(sigma ** 2)
    n_modes = int(np.argmax(energy >= 1.0 - epsilon)) + 1

    zeta = (s @ psi[:, :n_modes]) / sigma[:n_modes]
    # Correlation route loses orthogonality for small sigma; re-orthonormalize.
    q, r = scipy.linalg.qr(zeta, mode="economic")
    vectors = q * np.sign(np.diag(r))

    logger.info("POD: rank %d, selected N=%d (I(N)=%.12f, epsilon=%g)",
                sigma.size, n_modes, energy[n_modes - 1], epsilon)
    return PodBasis(vectors=vectors, singular_values=sigma, n_modes=n_modes,
                    epsilon=float(epsilon), energy=float(energy[n_modes - 1]))


def project(basis: PodBasis, matrix: np.ndarray) -> np.ndarray:
    """S_N = V^T S; row i holds the training targets of coefficient i."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape[0] != basis.n_rows:
        raise PodError(f"Cannot project {matrix.shape[0]}-row data on a basis of "
                       f"{basis.n_rows} rows")
    return basis.vectors.T @ matrix


def reconstruct(basis: PodBasis, coefficients: np.ndarray) -> np.ndarray:
    coefficients = np.asarray(coefficients, dtype=float)
    if coefficients.shape[0] != basis.n_modes:
        raise PodError(f"Expected {basis.n_modes} coefficients, got {coefficients.shape[0]}")
    return basis.vectors @ coefficients
