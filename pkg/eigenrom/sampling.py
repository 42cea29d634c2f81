"""
Sampling - training and test parameter designs over a parameter box.

Kinds:
  uniform_grid     tensor product of equispaced grids, endpoints included
  latin_hypercube  one point per stratum per axis, jittered around the cell centre
  random           i.i.d. uniform draws
  explicit         literal point list (test designs, possibly out of the box)

Stochastic kinds draw from numpy's Philox generator (64-bit counter-based,
splittable), seeded with the design seed, so designs are reproducible
byte-for-byte.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from eigenrom.errors import ConfigError

logger = logging.getLogger(__name__)

PRNG = "philox"
# Perturbation of an LHS point about its stratum centre, in stratum widths.
LHS_JITTER = 0.5
DESIGN_KINDS = ("uniform_grid", "latin_hypercube", "random", "explicit")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class SampleDesign:
    points: np.ndarray
    kind: str
    seed: Optional[int] = None
    box: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "prng": PRNG if self.kind in ("latin_hypercube", "random") else None,
            "box": None if self.box is None else self.box.tolist(),
            "points": self.points.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SampleDesign":
        points = np.asarray(data["points"], dtype=float)
        box = data.get("box")
        if points.size == 0:
            points = points.reshape(0, 1 if box is None else len(box))
        elif points.ndim == 1:
            points = points.reshape(-1, 1)
        return cls(points=points,
                   kind=data["kind"], seed=data.get("seed"),
                   box=None if box is None else np.asarray(box, dtype=float))


def _as_box(box) -> np.ndarray:
    box = np.atleast_2d(np.asarray(box, dtype=float))
    if box.shape[1] != 2 or np.any(box[:, 0] >= box[:, 1]):
        raise ConfigError(f"Parameter box must be rows of [lo, hi] with lo < hi, got {box.tolist()}")
    return box


def _check_size(n_s: int):
    if n_s < 2:
        raise ConfigError(f"A training design needs at least 2 points, got {n_s}")


def _scale(unit: np.ndarray, box: np.ndarray) -> np.ndarray:
    points = box[:, 0] + unit * (box[:, 1] - box[:, 0])
    return np.clip(points, box[:, 0], box[:, 1])


# ──────────────────── Deterministic designs ──────────────────── #

def uniform_grid(box, counts: Union[int, Sequence[int]]) -> SampleDesign:
    """Tensor product of equispaced grids; the first coordinate varies slowest."""
    box = _as_box(box)
    counts = np.broadcast_to(np.atleast_1d(np.asarray(counts, dtype=int)), (box.shape[0],))
    if np.any(counts < 2):
        raise ConfigError(f"Uniform grid needs at least 2 points per dimension, got {counts.tolist()}")

    axes = [np.linspace(lo, hi, int(c)) for (lo, hi), c in zip(box, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.column_stack([m.ravel() for m in mesh])
    logger.debug("Uniform grid %s: %d points", counts.tolist(), points.shape[0])
    return SampleDesign(points=points, kind="uniform_grid", box=box)


def explicit(points, box=None) -> SampleDesign:
    """Design from a literal list of points (rows)."""
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points.reshape(-1, 1)
    if points.size == 0:
        width = 1 if box is None else _as_box(box).shape[0]
        points = points.reshape(0, width)
    if not np.all(np.isfinite(points)):
        raise ConfigError("Design points must be finite")
    box = None if box is None else _as_box(box)
    if box is not None and points.shape[1] != box.shape[0]:
        raise ConfigError(f"Design points have {points.shape[1]} coordinates, box has {box.shape[0]}")
    return SampleDesign(points=points, kind="explicit", box=box)


# ──────────────────── Stochastic designs ──────────────────── #

def latin_hypercube(box, n_s: int, seed: int, jitter: float = LHS_JITTER) -> SampleDesign:
    """
    Centred-perturbed Latin hypercube design.

    Each axis is cut into n_s strata and every stratum holds one point, placed
    at the stratum centre plus a uniform perturbation of total width ``jitter``
    stratum widths. The default keeps points in the middle half of their
    stratum; 0 gives the centred design and 1 a uniform draw over the stratum.
    """
    box = _as_box(box)
    _check_size(n_s)
    if not 0.0 <= jitter <= 1.0:
        raise ConfigError(f"LHS jitter must lie in [0, 1], got {jitter}")

    rng = make_rng(seed)
    unit = np.empty((n_s, box.shape[0]))
    for axis in range(box.shape[0]):
        strata = rng.permutation(n_s)
        offsets = 0.5 + jitter * (rng.random(n_s) - 0.5)
        unit[:, axis] = (strata + offsets) / n_s

    return SampleDesign(points=_scale(unit, box), kind="latin_hypercube", seed=seed, box=box)


def random_uniform(box, n_s: int, seed: int) -> SampleDesign:
    """i.i.d. uniform points over the box."""
    box = _as_box(box)
    _check_size(n_s)
    rng = make_rng(seed)
    unit = rng.random((n_s, box.shape[0]))
    return SampleDesign(points=_scale(unit, box), kind="random", seed=seed, box=box)


def check_inside(design: SampleDesign, box, tol: float = 1e-12) -> bool:
    box = _as_box(box)
    span = box[:, 1] - box[:, 0]
    return bool(np.all(design.points >= box[:, 0] - tol * span)
                and np.all(design.points <= box[:, 1] + tol * span))
