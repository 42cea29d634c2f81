"""
GPR - scalar Gaussian-process regression with a linear mean.

Features:
  1. ARD squared-exponential kernel with a white-noise term
  2. Linear mean m(x) = theta_0 + theta^T x, profiled out by generalized least squares
  3. Log marginal likelihood with its analytic gradient in log-hyperparameters
  4. Multi-start L-BFGS-B fit, seeded and deterministic
  5. Posterior mean, latent and predictive variance, 95% bands
  6. JSON-ready serialization with a likelihood re-check on load

Inputs are mapped to the unit box and outputs standardized before fitting;
hyperparameters live in those units, predictions come back in output units.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.optimize
from scipy.spatial.distance import cdist

from eigenrom.errors import ConfigError, GprError, ModelFormatError
from eigenrom.sampling import make_rng

logger = logging.getLogger(__name__)

# Noise variance floor in standardized output units.
NOISE_FLOOR = 1e-12
SIGNAL_FLOOR = 1e-12
DEFAULT_STARTS = 8
Z95 = 1.96

JITTER_START = 1e-10
JITTER_MAX = 1e-6

# Start heuristic and log-uniform ranges for the random starts.
HEURISTIC_START = {"lengthscale": 0.5, "signal_std": 1.0, "noise_std": 1e-2}
LENGTHSCALE_RANGE = (1e-2, 10.0)
SIGNAL_STD_RANGE = (1e-1, 10.0)
NOISE_STD_RANGE = (1e-6, 1.0)

# Optimizer bounds on (lengthscale, signal std, noise std).
LENGTHSCALE_BOUNDS = (1e-3, 1e2)
SIGNAL_STD_BOUNDS = (math.sqrt(SIGNAL_FLOOR), 1e3)
NOISE_STD_BOUNDS = (math.sqrt(NOISE_FLOOR), 1e1)

LIKELIHOOD_RTOL = 1e-8
_PENALTY = 1e25


# ──────────────────── Hyperparameters ──────────────────── #

@dataclass(frozen=True, eq=False)
class Hyperparameters:
    mean_coeffs: np.ndarray
    signal_variance: float
    lengthscales: np.ndarray
    noise_variance: float

    def __post_init__(self):
        if not self.signal_variance > 0:
            raise ConfigError(f"Signal variance must be positive, got {self.signal_variance}")
        if np.any(np.asarray(self.lengthscales) <= 0):
            raise ConfigError(f"Lengthscales must be positive, got {np.asarray(self.lengthscales).tolist()}")
        if not self.noise_variance >= NOISE_FLOOR * (1 - 1e-9):
            raise ConfigError(f"Noise variance {self.noise_variance} below floor {NOISE_FLOOR}")

    @property
    def dim(self) -> int:
        return int(np.asarray(self.lengthscales).size)

    def log_vector(self) -> np.ndarray:
        """eta = (log l_1..l_d, log sigma_1, log sigma)."""
        return np.concatenate([np.log(self.lengthscales),
                               [0.5 * math.log(self.signal_variance),
                                0.5 * math.log(self.noise_variance)]])

    @classmethod
    def from_log_vector(cls, eta: np.ndarray, mean_coeffs: np.ndarray) -> "Hyperparameters":
        eta = np.asarray(eta, dtype=float)
        return cls(mean_coeffs=np.asarray(mean_coeffs, dtype=float),
                   signal_variance=float(np.exp(2.0 * eta[-2])),
                   lengthscales=np.exp(eta[:-2]),
                   noise_variance=max(float(np.exp(2.0 * eta[-1])), NOISE_FLOOR))

    def to_dict(self) -> dict:
        return {
            "mean_coeffs": np.asarray(self.mean_coeffs).tolist(),
            "signal_variance": self.signal_variance,
            "lengthscales": np.asarray(self.lengthscales).tolist(),
            "noise_variance": self.noise_variance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Hyperparameters":
        return cls(mean_coeffs=np.asarray(data["mean_coeffs"], dtype=float),
                   signal_variance=float(data["signal_variance"]),
                   lengthscales=np.asarray(data["lengthscales"], dtype=float),
                   noise_variance=float(data["noise_variance"]))


# ──────────────────── Kernel and likelihood ──────────────────── #

def _as_points(x, dim: Optional[int] = None) -> np.ndarray:
    pts = np.asarray(x, dtype=float)
    if pts.ndim <= 1:
        pts = pts.reshape(1, -1)
    if dim is not None and pts.shape[1] != dim:
        raise ConfigError(f"Expected {dim}-dimensional inputs, got {pts.shape[1]}")
    return pts


def kernel_matrix(xa: np.ndarray, xb: np.ndarray, signal_variance: float,
                  lengthscales: np.ndarray) -> np.ndarray:
    """sigma_1^2 exp(-1/2 sum_i (x_i - x'_i)^2 / l_i^2) for all row pairs."""
    scale = np.asarray(lengthscales, dtype=float)
    r2 = cdist(xa / scale, xb / scale, metric="sqeuclidean")
    return signal_variance * np.exp(-0.5 * r2)


def kernel(x, x_prime, hyper: Hyperparameters):
    """Kernel value for two points, or the cross matrix when rows are given."""
    xa = _as_points(x, hyper.dim)
    xb = _as_points(x_prime, hyper.dim)
    k = kernel_matrix(xa, xb, hyper.signal_variance, hyper.lengthscales)
    if np.ndim(x) <= 1 and np.ndim(x_prime) <= 1:
        return float(k[0, 0])
    return k


def design_matrix(x: np.ndarray) -> np.ndarray:
    """Rows H(x) = [1, x_1, .., x_d] of the linear mean basis."""
    return np.column_stack([np.ones(x.shape[0]), x])


def factorize(k_y: np.ndarray, jitter: Optional[float] = None) -> Tuple[np.ndarray, float]:
    """
    Lower Cholesky factor of K_y.

    With ``jitter`` given it is added as is; otherwise the ladder
    gamma * mean(diag K_y), gamma = 1e-10 .. 1e-6, is tried after a plain attempt.
    Returns (L, jitter actually added).
    """
    n = k_y.shape[0]
    if jitter is not None:
        try:
            return scipy.linalg.cholesky(k_y + jitter * np.eye(n), lower=True), jitter
        except np.linalg.LinAlgError as e:
            raise GprError(f"K_y not factorizable with recorded jitter {jitter:g}") from e

    try:
        return scipy.linalg.cholesky(k_y, lower=True), 0.0
    except np.linalg.LinAlgError:
        pass

    diag_mean = float(np.mean(np.diag(k_y)))
    gamma = JITTER_START
    while gamma <= JITTER_MAX * (1 + 1e-9):
        added = gamma * diag_mean
        try:
            factor = scipy.linalg.cholesky(k_y + added * np.eye(n), lower=True)
            logger.debug("K_y factorized with jitter %.1e * mean(diag)", gamma)
            return factor, added
        except np.linalg.LinAlgError:
            gamma *= 10.0
    raise GprError("K_y is singular even after the jitter ladder")


@dataclass(frozen=True, eq=False)
class _Conditioned:
    factor: np.ndarray
    jitter: float
    mean_coeffs: np.ndarray
    alpha: np.ndarray
    log_likelihood: float


def _condition(x: np.ndarray, y: np.ndarray, hyper: Hyperparameters, profile_mean: bool,
               jitter: Optional[float] = None) -> Tuple[_Conditioned, np.ndarray, np.ndarray]:
    n = x.shape[0]
    k_f = kernel_matrix(x, x, hyper.signal_variance, hyper.lengthscales)
    k_y = k_f + hyper.noise_variance * np.eye(n)
    factor, added = factorize(k_y, jitter)

    h = design_matrix(x)
    if profile_mean:
        # GLS on the whitened system L^{-1} H theta = L^{-1} y
        h_white = scipy.linalg.solve_triangular(factor, h, lower=True)
        y_white = scipy.linalg.solve_triangular(factor, y, lower=True)
        theta = scipy.linalg.lstsq(h_white, y_white)[0]
    else:
        theta = np.asarray(hyper.mean_coeffs, dtype=float)
        if theta.size != h.shape[1]:
            raise ConfigError(f"Expected {h.shape[1]} mean coefficients, got {theta.size}")

    resid = y - h @ theta
    alpha = scipy.linalg.cho_solve((factor, True), resid)
    log_det = 2.0 * np.sum(np.log(np.diag(factor)))
    value = -0.5 * resid @ alpha - 0.5 * log_det - 0.5 * n * math.log(2.0 * math.pi)
    if not np.isfinite(value):
        raise GprError("Log marginal likelihood is not finite")
    return _Conditioned(factor, added, theta, alpha, float(value)), k_f, k_y


def log_marginal_likelihood(x, y, hyper: Hyperparameters, profile_mean: bool = True,
                            gradient: bool = False):
    """
    log p(y | X, eta) = -1/2 r^T K_y^-1 r - 1/2 log|K_y| - n/2 log 2 pi, r = y - H theta.

    With ``profile_mean`` theta is the GLS estimate, otherwise hyper.mean_coeffs.
    With ``gradient`` also returns dL/d eta for eta = (log l, log sigma_1, log sigma),
    1/2 tr((alpha alpha^T - K_y^-1) dK_y/d eta_k). The GLS mean is stationary in
    theta, so the profiled gradient takes the same form.
    """
    x = np.asarray(x, dtype=float)
    x = x.reshape(x.shape[0], -1)
    if x.shape[1] != hyper.dim:
        raise ConfigError(f"Expected {hyper.dim}-dimensional inputs, got {x.shape[1]}")
    y = np.asarray(y, dtype=float).ravel()
    cond, k_f, _ = _condition(x, y, hyper, profile_mean)
    if not gradient:
        return cond.log_likelihood

    n = x.shape[0]
    k_inv = scipy.linalg.cho_solve((cond.factor, True), np.eye(n))
    inner = np.outer(cond.alpha, cond.alpha) - k_inv

    grad = np.empty(hyper.dim + 2)
    for i, length in enumerate(np.asarray(hyper.lengthscales)):
        d2 = cdist(x[:, [i]], x[:, [i]], metric="sqeuclidean")
        grad[i] = 0.5 * np.sum(inner * (k_f * d2 / length ** 2))
    grad[-2] = 0.5 * np.sum(inner * (2.0 * k_f))
    grad[-1] = 0.5 * np.trace(inner) * 2.0 * hyper.noise_variance
    return cond.log_likelihood, grad


# ──────────────────── Model ──────────────────── #

@dataclass(frozen=True, eq=False)
class GprModel:
    hyper: Hyperparameters
    x: np.ndarray              # unit-box inputs
    y: np.ndarray              # standardized targets
    box: np.ndarray
    y_mean: float
    y_scale: float
    jitter: float
    log_likelihood: float
    factor: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)

    @property
    def n_train(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def to_unit(self, points) -> np.ndarray:
        pts = _as_points(points, self.dim)
        return (pts - self.box[:, 0]) / (self.box[:, 1] - self.box[:, 0])

    @classmethod
    def from_hyperparameters(cls, x, y, hyper: Hyperparameters, box=None,
                             standardize: bool = False, profile_mean: bool = False,
                             jitter: Optional[float] = None) -> "GprModel":
        """Condition on (x, y) at fixed hyperparameters; no optimization."""
        x = np.asarray(x, dtype=float).reshape(len(x), -1)
        y = np.asarray(y, dtype=float).ravel()
        box = _unit_identity(x.shape[1]) if box is None else _as_box(box, x.shape[1])
        y_mean, y_scale = _output_transform(y) if standardize else (0.0, 1.0)
        z = (x - box[:, 0]) / (box[:, 1] - box[:, 0])
        ys = (y - y_mean) / y_scale
        cond, _, _ = _condition(z, ys, hyper, profile_mean, jitter)
        hyper = Hyperparameters(mean_coeffs=cond.mean_coeffs, signal_variance=hyper.signal_variance,
                                lengthscales=np.asarray(hyper.lengthscales, dtype=float),
                                noise_variance=hyper.noise_variance)
        return cls(hyper=hyper, x=z, y=ys, box=box, y_mean=y_mean, y_scale=y_scale,
                   jitter=cond.jitter, log_likelihood=cond.log_likelihood,
                   factor=cond.factor, alpha=cond.alpha)

    def to_dict(self) -> dict:
        return {
            "hyperparameters": self.hyper.to_dict(),
            "x": self.x.tolist(),
            "y": self.y.tolist(),
            "box": self.box.tolist(),
            "y_mean": self.y_mean,
            "y_scale": self.y_scale,
            "jitter": self.jitter,
            "log_likelihood": self.log_likelihood,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GprModel":
        """Rebuild factor and alpha; the stored log-likelihood must be reproduced."""
        try:
            hyper = Hyperparameters.from_dict(data["hyperparameters"])
            x = np.asarray(data["x"], dtype=float)
            y = np.asarray(data["y"], dtype=float)
            box = np.asarray(data["box"], dtype=float)
            cond, _, _ = _condition(x, y, hyper, profile_mean=False, jitter=float(data["jitter"]))
            stored = float(data["log_likelihood"])
        except (KeyError, TypeError, ValueError, GprError) as e:
            raise ModelFormatError(f"Malformed GPR record: {e}") from e

        if abs(cond.log_likelihood - stored) > LIKELIHOOD_RTOL * max(1.0, abs(stored)):
            raise ModelFormatError(f"GPR log-likelihood {cond.log_likelihood:.12g} does not "
                                   f"reproduce stored value {stored:.12g}")
        return cls(hyper=hyper, x=x, y=y, box=box, y_mean=float(data["y_mean"]),
                   y_scale=float(data["y_scale"]), jitter=cond.jitter, log_likelihood=stored,
                   factor=cond.factor, alpha=cond.alpha)


def _unit_identity(dim: int) -> np.ndarray:
    return np.tile([0.0, 1.0], (dim, 1))


def _as_box(box, dim: int) -> np.ndarray:
    box = np.atleast_2d(np.asarray(box, dtype=float))
    if box.shape != (dim, 2) or np.any(box[:, 1] <= box[:, 0]):
        raise ConfigError(f"Input box must be {dim} rows of [lo, hi] with lo < hi")
    return box


def _output_transform(y: np.ndarray) -> Tuple[float, float]:
    mean = float(np.mean(y))
    scale = float(np.std(y))
    if scale <= 1e-14 * max(1.0, abs(mean)):
        scale = 1.0
    return mean, scale


# ──────────────────── Fit ──────────────────── #

def _start_points(dim: int, n_starts: int, seed: int) -> np.ndarray:
    heuristic = np.concatenate([np.full(dim, math.log(HEURISTIC_START["lengthscale"])),
                                [math.log(HEURISTIC_START["signal_std"]),
                                 math.log(HEURISTIC_START["noise_std"])]])
    starts = [heuristic]
    rng = make_rng(seed)
    for _ in range(n_starts - 1):
        log_l = rng.uniform(*np.log(LENGTHSCALE_RANGE), size=dim)
        log_s1 = rng.uniform(*np.log(SIGNAL_STD_RANGE))
        log_s = rng.uniform(*np.log(NOISE_STD_RANGE))
        starts.append(np.concatenate([log_l, [log_s1, log_s]]))
    return np.array(starts)


def _log_bounds(dim: int) -> list:
    return ([tuple(np.log(LENGTHSCALE_BOUNDS))] * dim
            + [tuple(np.log(SIGNAL_STD_BOUNDS)), tuple(np.log(NOISE_STD_BOUNDS))])


def fit(x, y, box=None, n_starts: int = DEFAULT_STARTS, seed: int = 0,
        name: str = "gpr") -> GprModel:
    """
    Maximize the profiled log marginal likelihood over log-hyperparameters.

    Inputs are normalized to [0, 1]^d over ``box`` (the data bounding box when
    omitted); outputs are standardized. The best of ``n_starts`` L-BFGS-B runs
    is kept, the earliest start winning ties.
    """
    x = np.asarray(x, dtype=float)
    x = x.reshape(len(x), -1)
    y = np.asarray(y, dtype=float).ravel()
    if x.shape[0] < 2:
        raise ConfigError(f"GPR fit needs at least 2 training points, got {x.shape[0]}")
    if y.size != x.shape[0]:
        raise ConfigError(f"{x.shape[0]} inputs but {y.size} targets")
    if not np.all(np.isfinite(y)):
        raise ConfigError("GPR targets must be finite")
    if n_starts < 1:
        raise ConfigError(f"n_starts must be >= 1, got {n_starts}")

    dim = x.shape[1]
    if box is None:
        lo, hi = x.min(axis=0), x.max(axis=0)
        box = np.column_stack([lo, np.where(hi > lo, hi, lo + 1.0)])
    box = _as_box(box, dim)
    span = box[:, 1] - box[:, 0]
    if np.any(x < box[:, 0] - 1e-9 * span) or np.any(x > box[:, 1] + 1e-9 * span):
        raise ConfigError("GPR training inputs lie outside the declared box")

    y_mean, y_scale = _output_transform(y)
    z = (x - box[:, 0]) / span
    ys = (y - y_mean) / y_scale
    zero_mean = np.zeros(dim + 1)

    if np.ptp(y) <= 1e-14 * max(1.0, abs(y_mean)):
        # Constant data: the likelihood is unbounded as both variances vanish.
        hyper = Hyperparameters(mean_coeffs=zero_mean, signal_variance=SIGNAL_FLOOR,
                                lengthscales=np.full(dim, HEURISTIC_START["lengthscale"]),
                                noise_variance=NOISE_FLOOR)
        logger.info("GPR %s: constant targets, variances pinned at their floors", name)
        return GprModel.from_hyperparameters(x, y, hyper, box=box, standardize=True, profile_mean=True)

    def objective(eta):
        try:
            value, grad = log_marginal_likelihood(
                z, ys, Hyperparameters.from_log_vector(eta, zero_mean), gradient=True)
        except GprError:
            return _PENALTY, np.zeros_like(eta)
        return -value, -grad

    bounds = _log_bounds(dim)
    best_eta, best_value = None, -np.inf
    for i, start in enumerate(_start_points(dim, n_starts, seed)):
        result = scipy.optimize.minimize(objective, start, jac=True, method="L-BFGS-B", bounds=bounds)
        if not np.isfinite(result.fun) or result.fun >= _PENALTY:
            logger.debug("GPR %s start %d failed", name, i)
            continue
        logger.debug("GPR %s start %d: log-likelihood %.10g (%s)", name, i, -result.fun, result.message)
        if -result.fun > best_value:
            best_eta, best_value = result.x, -result.fun

    if best_eta is None:
        raise GprError(f"All {n_starts} GPR fit starts failed for {name}")

    hyper = Hyperparameters.from_log_vector(best_eta, zero_mean)
    model = GprModel.from_hyperparameters(x, y, hyper, box=box, standardize=True, profile_mean=True)
    if model.jitter > 0:
        logger.warning("GPR %s: K_y needed jitter %.3e", name, model.jitter)
    logger.info("GPR %s fitted: log-likelihood %.10g, l=%s, sigma_1^2=%.3e, sigma^2=%.3e",
                name, model.log_likelihood, np.round(model.hyper.lengthscales, 6).tolist(),
                model.hyper.signal_variance, model.hyper.noise_variance)
    return model


# ──────────────────── Prediction ──────────────────── #

def predict(model: GprModel, x_query) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Posterior (mean, latent variance, predictive variance) in output units."""
    z = model.to_unit(x_query)
    k_star = kernel_matrix(z, model.x, model.hyper.signal_variance, model.hyper.lengthscales)
    mean_std = design_matrix(z) @ model.hyper.mean_coeffs + k_star @ model.alpha

    v = scipy.linalg.solve_triangular(model.factor, k_star.T, lower=True)
    latent = model.hyper.signal_variance - np.sum(v * v, axis=0)
    latent = np.maximum(latent, 0.0)
    predictive = latent + model.hyper.noise_variance

    scale2 = model.y_scale ** 2
    return model.y_mean + model.y_scale * mean_std, latent * scale2, predictive * scale2


def band(mean: np.ndarray, predictive_variance: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """95% band mean -/+ 1.96 sqrt(predictive variance)."""
    half = Z95 * np.sqrt(predictive_variance)
    return mean - half, mean + half


def latent_variance_raw(model: GprModel, x_query) -> np.ndarray:
    """kappa* before clamping, in standardized units."""
    z = model.to_unit(x_query)
    k_star = kernel_matrix(z, model.x, model.hyper.signal_variance, model.hyper.lengthscales)
    v = scipy.linalg.solve_triangular(model.factor, k_star.T, lower=True)
    return model.hyper.signal_variance - np.sum(v * v, axis=0)
