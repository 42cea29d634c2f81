"""
Pydantic models for run configuration and the HTTP service.
Shared by the CLI, the FastAPI app and the tests.
"""

import json
import os
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, ValidationError, model_validator

from eigenrom.errors import ConfigError
from eigenrom.gpr import DEFAULT_STARTS
from eigenrom.pod import DEFAULT_EPSILON
from eigenrom.problems import ProblemId, get_problem
from eigenrom.sampling import (
    LHS_JITTER,
    SampleDesign,
    explicit,
    latin_hypercube,
    random_uniform,
    uniform_grid,
)


# ──────────────────── Run configuration ──────────────────── #

class MeshConfig(BaseModel):
    h: float = Field(..., gt=0, description="Mesh size")


class DesignConfig(BaseModel):
    """A parameter design; which fields matter depends on ``kind``."""
    kind: Literal["uniform_grid", "latin_hypercube", "random", "explicit"] = "uniform_grid"
    counts: Optional[List[int]] = Field(None, description="Points per dimension (uniform_grid)")
    n_s: Optional[int] = Field(None, ge=2, description="Number of points (latin_hypercube, random)")
    seed: int = Field(0, ge=0)
    jitter: float = Field(LHS_JITTER, ge=0, le=1, description="LHS perturbation about the stratum centre, in stratum widths")
    points: Optional[List[List[float]]] = Field(None, description="Literal points (explicit)")

    @model_validator(mode="after")
    def _fields_for_kind(self):
        if self.kind == "uniform_grid" and not self.counts:
            raise ValueError("uniform_grid needs 'counts'")
        if self.kind in ("latin_hypercube", "random") and self.n_s is None:
            raise ValueError(f"{self.kind} needs 'n_s'")
        if self.kind == "explicit" and self.points is None:
            raise ValueError("explicit design needs 'points'")
        return self

    def build(self, box: np.ndarray) -> SampleDesign:
        if self.kind == "uniform_grid":
            return uniform_grid(box, self.counts)
        if self.kind == "latin_hypercube":
            return latin_hypercube(box, self.n_s, self.seed, self.jitter)
        if self.kind == "random":
            return random_uniform(box, self.n_s, self.seed)
        points = np.asarray(self.points, dtype=float).reshape(len(self.points), box.shape[0]) \
            if self.points else np.empty((0, box.shape[0]))
        return explicit(points)


class GprConfig(BaseModel):
    n_starts: int = Field(DEFAULT_STARTS, ge=1)
    seed: int = Field(0, ge=0)


class Tolerances(BaseModel):
    """Limits checked by ``evaluate``; unset fields are not checked."""
    lambda_abs: Optional[float] = Field(None, gt=0)
    lambda_rel: Optional[float] = Field(None, gt=0)
    vec_inf: Optional[float] = Field(None, gt=0)
    coverage: Optional[float] = Field(None, ge=0, le=1)


class RunConfig(BaseModel):
    problem: ProblemId
    mesh: MeshConfig
    mode: Literal["single", "simultaneous"] = "single"
    k: int = Field(1, ge=1, description="Eigen number (1-based) in single mode")
    n_e: int = Field(3, ge=1, description="Eigenpairs stacked in simultaneous mode")
    epsilon: float = Field(DEFAULT_EPSILON, gt=0, lt=1, description="POD energy tolerance")
    train: Optional[DesignConfig] = None
    test: Optional[DesignConfig] = None
    gpr: GprConfig = Field(default_factory=GprConfig)
    tolerances: Tolerances = Field(default_factory=Tolerances)
    allow_out_of_box: bool = False
    fom_k: int = Field(1, ge=1, description="Sorted eigenvalues written by 'fom'")
    write_vectors: bool = False
    curve_points: int = Field(201, ge=2)
    curve_margin: float = Field(0.05, ge=0)
    model_file: Optional[str] = Field(None, description="Model to read in predict / evaluate")
    out: Optional[str] = None

    @model_validator(mode="after")
    def _check_against_problem(self):
        spec = get_problem(self.problem)
        box = spec.parameter_box
        dim = spec.n_params
        if spec.nonlinearity is not None and (self.mode != "single" or self.k != 1 or self.fom_k != 1):
            raise ValueError("the nonlinear problem only supports its first eigenpair")

        for name, design in (("train", self.train), ("test", self.test)):
            if design is None:
                continue
            if design.counts is not None and len(design.counts) not in (1, dim):
                raise ValueError(f"{name}.counts must have 1 or {dim} entries")
            if design.points:
                pts = np.asarray(design.points, dtype=float)
                if pts.ndim != 2 or pts.shape[1] != dim:
                    raise ValueError(f"{name}.points must be rows of {dim} coordinates")
                outside = np.any(pts < box[:, 0]) or np.any(pts > box[:, 1])
                if outside and (name == "train" or not self.allow_out_of_box):
                    raise ValueError(f"{name} points leave the parameter box {box.tolist()}")
        return self

    def parameter_box(self) -> np.ndarray:
        return get_problem(self.problem).parameter_box


def load_run_config(path: str, **overrides) -> RunConfig:
    """File values, then non-None ``overrides`` on top."""
    if not os.path.exists(path):
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must hold a JSON object")

    for key, value in overrides.items():
        if value is None:
            continue
        if key == "seed":
            for section in ("train", "test"):
                if isinstance(raw.get(section), dict):
                    raw[section]["seed"] = value
            raw.setdefault("gpr", {})["seed"] = value
        else:
            raw[key] = value
    return parse_run_config(raw)


def parse_run_config(raw: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


# ──────────────────── HTTP service ──────────────────── #

class PredictRequest(BaseModel):
    mu: List[float] = Field(..., min_length=1)
    include_vectors: bool = False


class BandValue(BaseModel):
    mean: float
    lo: float
    hi: float


class EigenvalueBand(BandValue):
    k: int


class CoefficientBand(BandValue):
    index: int


class PredictResponse(BaseModel):
    mu: List[float]
    out_of_box: bool
    eigenvalues: List[EigenvalueBand]
    coefficients: List[CoefficientBand]
    eigenvectors: Optional[List[List[float]]] = None


class ModelSummary(BaseModel):
    problem: str
    mode: str
    eigen_numbers: List[int]
    h: Optional[float] = None
    n_dofs: int
    n_modes: int
    pod_energy: float
    n_train: int
    regressors: int
    per_eigenpair_regressors: int
    parameter_box: List[List[float]]
