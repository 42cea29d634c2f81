"""
ROM pipeline - offline training and online evaluation of the data-driven model.

Offline:
  1. Full-order solves at every design point (generalized eigensolve, or
     Newton with continuation along the design chain for the nonlinear problem)
  2. Sign alignment and POD (stacked snapshots in simultaneous mode)
  3. One GPR per eigenvalue and one per reduced coefficient

Online:
  4. Regressors evaluated at a query, eigenvectors rebuilt as V u_N
  5. Error reports against fresh full-order solves
  6. Mesh convergence study of the full-order eigenvalues
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np

from eigenrom import __version__
from eigenrom.eigensolve import Eigenpair, solve_generalized
from eigenrom.errors import (
    ConfigError,
    FomError,
    ModelFormatError,
    NumericalError,
)
from eigenrom.gpr import DEFAULT_STARTS, GprModel, band, fit, predict
from eigenrom.mesh_fem import Mesh
from eigenrom.nonlinear_evp import NonlinearSystem, solve_nonlinear
from eigenrom.pod import (
    DEFAULT_EPSILON,
    PodBasis,
    SnapshotSet,
    align_signs,
    chain_order,
    compute_pod,
    project,
    reconstruct,
    stack_snapshots,
)
from eigenrom.problems import ProblemSpec, get_problem
from eigenrom.sampling import SampleDesign, check_inside

logger = logging.getLogger(__name__)

ORTHONORMALITY_TOL = 1e-10


class Mode(str, Enum):
    SINGLE = "single"
    SIMULTANEOUS = "simultaneous"


# ──────────────────── Full-order model ──────────────────── #

class FullOrderModel:
    """FEM solver for one problem on one mesh; eigen numbers are 1-based."""

    def __init__(self, spec: ProblemSpec, mesh: Mesh):
        self.spec = spec
        self.mesh = mesh
        self._assemble = spec.assembler(mesh)
        self._system = NonlinearSystem.from_spec(spec, mesh) if spec.nonlinearity else None

    @property
    def is_nonlinear(self) -> bool:
        return self._system is not None

    def solve(self, mu, count: int = 1, init: Optional[Eigenpair] = None) -> List[Eigenpair]:
        """The first ``count`` sorted eigenpairs at mu."""
        mu = self.spec.as_parameter(mu)
        try:
            if self.is_nonlinear:
                if count != 1:
                    raise ConfigError("The nonlinear problem only provides its first eigenpair")
                return [solve_nonlinear(mu, self._system, init=init)]
            op = self._assemble(mu)
            return solve_generalized(op.a_matrix, op.b_matrix, count)
        except NumericalError as e:
            raise FomError(f"Full-order solve failed at mu={mu.tolist()}: {e}", mu=mu) from e

    def sweep(self, points: np.ndarray, count: int = 1, jobs: int = 1) -> List[List[Eigenpair]]:
        """
        Solve at every point; results are returned in design order.

        The nonlinear path walks the nearest-neighbour chain of the design and
        seeds each Newton solve with its predecessor's solution.
        """
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points.reshape(-1, 1)
        if self.is_nonlinear:
            order, predecessor = chain_order(points)
            results: List[Optional[List[Eigenpair]]] = [None] * len(points)
            for idx in order:
                prev = predecessor[idx]
                init = results[prev][0] if prev >= 0 else None
                results[idx] = self.solve(points[idx], count, init=init)
            return results

        with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
            return list(pool.map(lambda mu: self.solve(mu, count), points))


# ──────────────────── Model types ──────────────────── #

@dataclass(frozen=True, eq=False)
class RomModel:
    problem: str
    mesh: dict
    mode: Mode
    eigen_numbers: tuple
    parameter_box: np.ndarray
    basis: PodBasis
    eigenvalue_models: List[GprModel] = field(repr=False)
    coefficient_models: List[GprModel] = field(repr=False)
    design: SampleDesign = field(repr=False)
    provenance: dict = field(default_factory=dict)

    @property
    def n_e(self) -> int:
        return len(self.eigen_numbers)

    @property
    def n_dofs(self) -> int:
        return self.basis.n_rows // self.n_e

    @property
    def n_regressors(self) -> int:
        return len(self.eigenvalue_models) + len(self.coefficient_models)

    @property
    def per_eigenpair_regressors(self) -> int:
        """Regressors the one-model-per-eigenpair route would need, n_e (N + 1)."""
        return self.n_e * (self.basis.n_modes + 1)

    def validate(self) -> "RomModel":
        if len(self.coefficient_models) != self.basis.n_modes:
            raise ModelFormatError(f"{len(self.coefficient_models)} coefficient regressors for "
                                   f"N={self.basis.n_modes}")
        expected = 1 if self.mode == Mode.SINGLE else self.n_e
        if len(self.eigenvalue_models) != expected or (self.mode == Mode.SINGLE and self.n_e != 1):
            raise ModelFormatError(f"{len(self.eigenvalue_models)} eigenvalue regressors in {self.mode.value} mode")
        v = self.basis.vectors
        if v.shape[1] != self.basis.n_modes or \
                np.max(np.abs(v.T @ v - np.eye(v.shape[1]))) > ORTHONORMALITY_TOL:
            raise ModelFormatError("POD basis is not orthonormal")
        if self.basis.n_rows % self.n_e:
            raise ModelFormatError("POD basis height is not a multiple of n_e")
        return self

    def summary(self) -> dict:
        return {
            "problem": self.problem,
            "mode": self.mode.value,
            "eigen_numbers": list(self.eigen_numbers),
            "h": self.mesh.get("h"),
            "n_dofs": self.n_dofs,
            "n_modes": self.basis.n_modes,
            "pod_energy": self.basis.energy,
            "n_train": self.design.size,
            "regressors": self.n_regressors,
            "per_eigenpair_regressors": self.per_eigenpair_regressors,
            "parameter_box": self.parameter_box.tolist(),
        }

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "mesh": self.mesh,
            "mode": self.mode.value,
            "eigen_numbers": list(self.eigen_numbers),
            "parameter_box": self.parameter_box.tolist(),
            "basis": self.basis.to_dict(),
            "eigenvalue_models": [m.to_dict() for m in self.eigenvalue_models],
            "coefficient_models": [m.to_dict() for m in self.coefficient_models],
            "design": self.design.to_dict(),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RomModel":
        try:
            model = cls(
                problem=str(data["problem"]),
                mesh=dict(data["mesh"]),
                mode=Mode(data["mode"]),
                eigen_numbers=tuple(int(k) for k in data["eigen_numbers"]),
                parameter_box=np.asarray(data["parameter_box"], dtype=float),
                basis=PodBasis.from_dict(data["basis"]),
                eigenvalue_models=[GprModel.from_dict(m) for m in data["eigenvalue_models"]],
                coefficient_models=[GprModel.from_dict(m) for m in data["coefficient_models"]],
                design=SampleDesign.from_dict(data["design"]),
                provenance=dict(data.get("provenance", {})),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ModelFormatError(f"Malformed model document: {e}") from e
        return model.validate()


@dataclass(frozen=True, eq=False)
class Prediction:
    parameter: np.ndarray
    eigen_numbers: tuple
    eigenvalues: np.ndarray
    eigenvalue_variance: np.ndarray
    eigenvalue_lo: np.ndarray
    eigenvalue_hi: np.ndarray
    coefficients: np.ndarray
    coefficient_lo: np.ndarray
    coefficient_hi: np.ndarray
    eigenvectors: np.ndarray = field(repr=False)
    out_of_box: bool = False

    def to_dict(self, include_vectors: bool = False) -> dict:
        result = {
            "mu": self.parameter.tolist(),
            "out_of_box": self.out_of_box,
            "eigenvalues": [
                {"k": k, "mean": float(m), "lo": float(lo), "hi": float(hi)}
                for k, m, lo, hi in zip(self.eigen_numbers, self.eigenvalues,
                                        self.eigenvalue_lo, self.eigenvalue_hi)
            ],
            "coefficients": [
                {"index": i + 1, "mean": float(m), "lo": float(lo), "hi": float(hi)}
                for i, (m, lo, hi) in enumerate(zip(self.coefficients, self.coefficient_lo,
                                                    self.coefficient_hi))
            ],
        }
        if include_vectors:
            result["eigenvectors"] = self.eigenvectors.tolist()
        return result


# ──────────────────── Offline stage ──────────────────── #

def _eigen_numbers(mode: Mode, k: int, n_e: int) -> tuple:
    if mode == Mode.SINGLE:
        if k < 1:
            raise ConfigError(f"Eigen number k must be >= 1, got {k}")
        return (k,)
    if n_e < 1:
        raise ConfigError(f"n_e must be >= 1, got {n_e}")
    return tuple(range(1, n_e + 1))


def _fit_all(x_train: np.ndarray, tasks: Sequence[tuple], box: np.ndarray, n_starts: int,
             seed: int, jobs: int) -> List[GprModel]:
    """Fit one GPR per (name, targets); results keep the task order."""
    def run(task):
        name, targets = task
        return fit(x_train, targets, box=box, n_starts=n_starts, seed=seed, name=name)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        return list(pool.map(run, tasks))


def offline_train(spec: ProblemSpec, h: float, design: SampleDesign, mode=Mode.SINGLE,
                  k: int = 1, n_e: int = 3, epsilon: float = DEFAULT_EPSILON,
                  n_starts: int = DEFAULT_STARTS, seed: int = 0, jobs: int = 1) -> RomModel:
    """Snapshots -> POD -> GPRs; returns a sealed RomModel."""
    mode = Mode(mode)
    numbers = _eigen_numbers(mode, k, n_e)
    if design.dim != spec.n_params:
        raise ConfigError(f"Design has {design.dim} coordinates, problem '{spec.id.value}' "
                          f"takes {spec.n_params}")
    if design.size < 2:
        raise ConfigError(f"Training needs at least 2 design points, got {design.size}")
    if not check_inside(design, spec.parameter_box):
        raise ConfigError(f"Training design leaves the parameter box {spec.parameter_box.tolist()}")

    mesh = spec.build_mesh(h)
    fom = FullOrderModel(spec, mesh)
    count = max(numbers)
    logger.info("Offline: %s, h=%g, N_h=%d, %d design points, mode=%s, eigen numbers %s",
                spec.id.value, h, mesh.n_dofs, design.size, mode.value, list(numbers))
    solutions = fom.sweep(design.points, count, jobs=jobs)
    logger.info("Offline: full-order sweep done")

    per_number = [
        SnapshotSet(matrix=np.column_stack([sol[j - 1].vector for sol in solutions]),
                    parameters=design.points, eigen_indices=(j,))
        for j in numbers
    ]
    if mode == Mode.SINGLE:
        snapshots = align_signs(per_number[0])
    else:
        snapshots = stack_snapshots(per_number, len(numbers))

    basis = compute_pod(snapshots, epsilon)
    targets = project(basis, snapshots.matrix)

    tasks = [(f"lambda_{j}", np.array([sol[j - 1].value for sol in solutions])) for j in numbers]
    tasks += [(f"coeff_{i + 1}", targets[i]) for i in range(basis.n_modes)]
    models = _fit_all(design.points, tasks, spec.parameter_box, n_starts, seed, jobs)

    model = RomModel(
        problem=spec.id.value,
        mesh=dict(mesh.descriptor),
        mode=mode,
        eigen_numbers=numbers,
        parameter_box=spec.parameter_box.copy(),
        basis=basis,
        eigenvalue_models=models[:len(numbers)],
        coefficient_models=models[len(numbers):],
        design=design,
        provenance={
            "h": float(h),
            "epsilon": float(epsilon),
            "gpr_seed": int(seed),
            "gpr_starts": int(n_starts),
            "design_seed": design.seed,
            "version": __version__,
        },
    ).validate()
    logger.info("Offline: N=%d POD modes, %d regressors (per-eigenpair route: %d)",
                basis.n_modes, model.n_regressors, model.per_eigenpair_regressors)
    return model


# ──────────────────── Online stage ──────────────────── #

def online_predict(model: RomModel, mu) -> Prediction:
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    dim = model.parameter_box.shape[0]
    if mu.shape != (dim,):
        raise ConfigError(f"Model takes {dim} parameter(s), got {mu.tolist()}")

    lo, hi = model.parameter_box[:, 0], model.parameter_box[:, 1]
    out_of_box = bool(np.any(mu < lo) or np.any(mu > hi))
    if out_of_box:
        logger.warning("Query mu=%s lies outside the training box %s",
                       mu.tolist(), model.parameter_box.tolist())

    def evaluate(models):
        means, variances = np.empty(len(models)), np.empty(len(models))
        for i, gp in enumerate(models):
            mean, _, predictive = predict(gp, mu)
            means[i], variances[i] = mean[0], predictive[0]
        return means, variances

    values, value_var = evaluate(model.eigenvalue_models)
    coeffs, coeff_var = evaluate(model.coefficient_models)
    value_lo, value_hi = band(values, value_var)
    coeff_lo, coeff_hi = band(coeffs, coeff_var)

    stacked = reconstruct(model.basis, coeffs)
    vectors = stacked.reshape(model.n_e, model.n_dofs)

    return Prediction(parameter=mu, eigen_numbers=model.eigen_numbers, eigenvalues=values,
                      eigenvalue_variance=value_var, eigenvalue_lo=value_lo, eigenvalue_hi=value_hi,
                      coefficients=coeffs, coefficient_lo=coeff_lo, coefficient_hi=coeff_hi,
                      eigenvectors=vectors, out_of_box=out_of_box)


# ──────────────────── Evaluation ──────────────────── #

@dataclass(frozen=True)
class ErrorRow:
    mu: tuple
    k: int
    lambda_fem: float
    lambda_dd: float
    lambda_lo: float
    lambda_hi: float
    vec_inf_err: float
    vec_l2_rel_err: float

    @property
    def failed(self) -> bool:
        return math.isnan(self.lambda_fem)

    @property
    def lambda_err(self) -> float:
        return abs(self.lambda_dd - self.lambda_fem)

    @property
    def covered(self) -> bool:
        return self.lambda_lo <= self.lambda_fem <= self.lambda_hi


@dataclass(frozen=True)
class ErrorReport:
    rows: List[ErrorRow]

    @property
    def ok_rows(self) -> List[ErrorRow]:
        return [r for r in self.rows if not r.failed]

    @property
    def n_failed(self) -> int:
        return sum(r.failed for r in self.rows)

    def aggregate(self) -> Dict[str, float]:
        ok = self.ok_rows
        if not ok:
            return {"max_lambda_err": math.nan, "mean_lambda_err": math.nan,
                    "max_lambda_rel_err": math.nan, "max_vec_inf_err": math.nan,
                    "max_vec_l2_rel_err": math.nan, "coverage": math.nan,
                    "n_rows": len(self.rows), "n_failed": self.n_failed}
        errs = np.array([r.lambda_err for r in ok])
        rel = np.array([r.lambda_err / abs(r.lambda_fem) if r.lambda_fem else r.lambda_err for r in ok])
        return {
            "max_lambda_err": float(errs.max()),
            "mean_lambda_err": float(errs.mean()),
            "max_lambda_rel_err": float(rel.max()),
            "max_vec_inf_err": float(max(r.vec_inf_err for r in ok)),
            "max_vec_l2_rel_err": float(max(r.vec_l2_rel_err for r in ok)),
            "coverage": float(np.mean([r.covered for r in ok])),
            "n_rows": len(self.rows),
            "n_failed": self.n_failed,
        }

    def violations(self, lambda_abs: Optional[float] = None, lambda_rel: Optional[float] = None,
                   vec_inf: Optional[float] = None, coverage: Optional[float] = None) -> List[str]:
        """Messages for every configured tolerance the report breaks."""
        agg = self.aggregate()
        found = []
        if self.n_failed:
            found.append(f"{self.n_failed} test point(s) failed the full-order solve")
        checks = (("max_lambda_err", lambda_abs), ("max_lambda_rel_err", lambda_rel),
                  ("max_vec_inf_err", vec_inf))
        for key, limit in checks:
            if limit is not None and not agg[key] <= limit:
                found.append(f"{key}={agg[key]:.3e} exceeds {limit:.3e}")
        if coverage is not None and not agg["coverage"] >= coverage:
            found.append(f"band coverage {agg['coverage']:.2f} below {coverage:.2f}")
        return found


def _vector_errors(u_dd: np.ndarray, u_fem: np.ndarray) -> tuple:
    """Sup and relative l2 errors, minimized over the sign of u_fem."""
    inf_err = min(np.max(np.abs(u_dd - u_fem)), np.max(np.abs(u_dd + u_fem)))
    l2 = min(np.linalg.norm(u_dd - u_fem), np.linalg.norm(u_dd + u_fem))
    return float(inf_err), float(l2 / np.linalg.norm(u_fem))


def evaluate(model: RomModel, test_design: SampleDesign, h: Optional[float] = None,
             jobs: int = 1) -> ErrorReport:
    """Compare online predictions with full-order solves on the model's own mesh."""
    trained_h = float(model.provenance.get("h", model.mesh.get("h")))
    if h is not None and not math.isclose(h, trained_h, rel_tol=1e-12):
        raise ConfigError(f"Test mesh h={h} differs from the training mesh h={trained_h}")

    spec = get_problem(model.problem)
    mesh = spec.build_mesh(trained_h)
    if mesh.descriptor != model.mesh:
        raise ConfigError(f"Rebuilt mesh {mesh.descriptor} does not match the model's {model.mesh}")
    if mesh.n_dofs != model.n_dofs:
        raise ConfigError(f"Rebuilt mesh has N_h={mesh.n_dofs}, model has {model.n_dofs}")
    fom = FullOrderModel(spec, mesh)
    count = max(model.eigen_numbers)

    def solve_or_none(mu):
        try:
            return fom.solve(mu, count)
        except FomError as e:
            logger.warning("Evaluation: %s", e)
            return None

    points = test_design.points
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        solutions = list(pool.map(solve_or_none, points))

    rows = []
    for mu, sol in zip(points, solutions):
        pred = online_predict(model, mu)
        for b, k in enumerate(model.eigen_numbers):
            if sol is None:
                lam_fem, inf_err, l2_err = math.nan, math.nan, math.nan
            else:
                lam_fem = sol[k - 1].value
                inf_err, l2_err = _vector_errors(pred.eigenvectors[b], sol[k - 1].vector)
            rows.append(ErrorRow(mu=tuple(float(m) for m in mu), k=k, lambda_fem=lam_fem,
                                 lambda_dd=float(pred.eigenvalues[b]),
                                 lambda_lo=float(pred.eigenvalue_lo[b]),
                                 lambda_hi=float(pred.eigenvalue_hi[b]),
                                 vec_inf_err=inf_err, vec_l2_rel_err=l2_err))

    report = ErrorReport(rows=rows)
    agg = report.aggregate()
    logger.info("Evaluation over %d points: max |lambda_DD - lambda_FEM|=%.3e, "
                "max sup eigenvector error=%.3e, coverage=%.2f",
                len(points), agg["max_lambda_err"], agg["max_vec_inf_err"], agg["coverage"])
    return report


# ──────────────────── Mesh convergence ──────────────────── #

@dataclass(frozen=True)
class ConvergenceRow:
    h: float
    n_dofs: int
    eigenvalue: float
    error: Optional[float]
    rate: Optional[float]


def convergence_study(spec: ProblemSpec, hs: Sequence[float], mu, k: int = 1) -> List[ConvergenceRow]:
    """
    k-th FEM eigenvalue for each h with observed convergence rates.

    Errors are taken against the analytic spectrum when the problem has one,
    otherwise against the finest mesh.
    """
    if len(hs) < 2:
        raise ConfigError("A convergence study needs at least two mesh sizes")
    hs = sorted((float(h) for h in hs), reverse=True)
    mu = spec.as_parameter(mu)

    values, sizes = [], []
    for h in hs:
        mesh = spec.build_mesh(h)
        values.append(FullOrderModel(spec, mesh).solve(mu, k)[k - 1].value)
        sizes.append(mesh.n_dofs)

    if spec.analytic_spectrum is not None:
        reference = float(spec.analytic_spectrum(mu, k)[k - 1])
        errors = [abs(v - reference) for v in values]
    else:
        errors = [abs(v - values[-1]) for v in values[:-1]] + [None]

    rows = []
    for i, h in enumerate(hs):
        rate = None
        if i > 0 and errors[i] is not None and errors[i - 1] and errors[i]:
            rate = math.log(errors[i - 1] / errors[i]) / math.log(hs[i - 1] / h)
        rows.append(ConvergenceRow(h=h, n_dofs=sizes[i], eigenvalue=values[i],
                                   error=errors[i], rate=rate))
        logger.info("Convergence %s: h=%g N_h=%d lambda_%d=%.10g error=%s rate=%s",
                    spec.id.value, h, sizes[i], k, values[i], errors[i], rate)
    return rows
