"""
Command-line surface.

  eigenrom fom       full-order eigenvalues (and optional eigenvector fields) on a design
  eigenrom train     offline stage -> rom_model.json + manifest.json
  eigenrom predict   online stage  -> dd_eigenvalues.csv, gpr_curves.csv, eigenvector CSVs
  eigenrom evaluate  DD vs FEM     -> error_report.csv + summary, exit 1 on tolerance failure

Precedence of settings: flags > config file > environment > defaults.
Exit codes: 0 success, 1 tolerance failure, 2 invalid config, 3 numerical failure.
"""

import argparse
import json
import logging
import os
import sys
import time
from typing import List, Optional

import numpy as np

from eigenrom import __version__, settings
from eigenrom.errors import (
    EXIT_NUMERICAL,
    EXIT_OK,
    ConfigError,
    EigenRomError,
    ToleranceError,
)
from eigenrom.gpr import band, predict
from eigenrom.problems import get_problem
from eigenrom.rom_pipeline import (
    FullOrderModel,
    RomModel,
    evaluate,
    offline_train,
    online_predict,
)
from eigenrom.schemas import RunConfig, load_run_config
from eigenrom.store import (
    MANIFEST_FILE,
    MODEL_FILE,
    load_model,
    save_model,
    write_csv,
    write_manifest,
)

logger = logging.getLogger(__name__)

DEFAULT_OUT = "out"


def _mu_columns(dim: int) -> List[str]:
    return [f"mu_{i + 1}" for i in range(dim)]


def _mu_fields(mu) -> dict:
    return {f"mu_{i + 1}": float(m) for i, m in enumerate(np.atleast_1d(mu))}


def _field_columns(dim: int) -> List[str]:
    return ["x", "y"][:dim] + ["value"]


def _field_rows(mesh, interior_values: np.ndarray):
    values = mesh.expand(interior_values)
    names = ["x", "y"][:mesh.dim]
    for coords, value in zip(mesh.vertices, values):
        row = {name: float(c) for name, c in zip(names, coords)}
        row["value"] = float(value)
        yield row


def _test_design(config: RunConfig, required: bool = True):
    design_cfg = config.test
    if design_cfg is None:
        if required:
            raise ConfigError("This command needs a 'test' design in the config")
        return None
    return design_cfg.build(config.parameter_box())


def _model_path(config: RunConfig, out_dir: str) -> str:
    return config.model_file or os.path.join(out_dir, MODEL_FILE)


# ──────────────────── Commands ──────────────────── #

def cmd_fom(config: RunConfig, out_dir: str, jobs: int = 1) -> List[str]:
    """First ``fom_k`` sorted FEM eigenvalues on the test design (train design if absent)."""
    spec = get_problem(config.problem)
    design_cfg = config.test or config.train
    if design_cfg is None:
        raise ConfigError("'fom' needs a 'test' or 'train' design")
    design = design_cfg.build(spec.parameter_box)
    mesh = spec.build_mesh(config.mesh.h)
    fom = FullOrderModel(spec, mesh)

    logger.info("FOM: %s h=%g N_h=%d on %d points, k=%d",
                spec.id.value, config.mesh.h, mesh.n_dofs, design.size, config.fom_k)
    solutions = fom.sweep(design.points, config.fom_k, jobs=jobs) if design.size else []

    rows = []
    written = []
    for i, (mu, pairs) in enumerate(zip(design.points, solutions)):
        exact = spec.analytic_spectrum(mu, config.fom_k) if spec.analytic_spectrum else None
        for pair in pairs:
            k = pair.index + 1
            row = {**_mu_fields(mu), "k": k, "lambda": pair.value}
            if exact is not None:
                row["lambda_exact"] = float(exact[pair.index])
            rows.append(row)
            if config.write_vectors:
                path = os.path.join(out_dir, f"fom_vector_{i + 1}_k{k}.csv")
                written.append(write_csv(path, _field_columns(mesh.dim), _field_rows(mesh, pair.vector)))

    columns = _mu_columns(spec.n_params) + ["k", "lambda"]
    if spec.analytic_spectrum:
        columns.append("lambda_exact")
    written.insert(0, write_csv(os.path.join(out_dir, "fom_eigenvalues.csv"), columns, rows))
    return written


def cmd_train(config: RunConfig, out_dir: str, jobs: int = 1) -> List[str]:
    """Offline stage; the model file is byte-identical for identical configs."""
    if config.train is None:
        raise ConfigError("'train' needs a 'train' design in the config")
    spec = get_problem(config.problem)
    design = config.train.build(spec.parameter_box)

    start = time.perf_counter()
    model = offline_train(spec, config.mesh.h, design, mode=config.mode, k=config.k, n_e=config.n_e,
                          epsilon=config.epsilon, n_starts=config.gpr.n_starts,
                          seed=config.gpr.seed, jobs=jobs)
    wall_time = time.perf_counter() - start

    model_path = save_model(model, os.path.join(out_dir, MODEL_FILE))
    manifest_path = write_manifest(os.path.join(out_dir, MANIFEST_FILE), model=model,
                                   config=config.model_dump(mode="json"), wall_time=wall_time,
                                   jobs=jobs)
    print(json.dumps(model.summary(), indent=2))
    return [model_path, manifest_path]


def _curve_grid(model: RomModel, points: int, margin: float) -> np.ndarray:
    """Tensor grid with ``points`` per axis over the box widened by ``margin`` of its span."""
    box = model.parameter_box
    span = box[:, 1] - box[:, 0]
    axes = [np.linspace(lo - margin * s, hi + margin * s, points)
            for (lo, hi), s in zip(box, span)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def _curve_rows(model: RomModel, grid: np.ndarray):
    named = [(f"lambda_{k}", gp) for k, gp in zip(model.eigen_numbers, model.eigenvalue_models)]
    named += [(f"coeff_{i + 1}", gp) for i, gp in enumerate(model.coefficient_models)]
    for name, gp in named:
        mean, _, variance = predict(gp, grid)
        lo, hi = band(mean, variance)
        for mu, m, a, b in zip(grid, mean, lo, hi):
            yield {"regressor": name, **_mu_fields(mu), "mean": m, "lo": a, "hi": b}


def cmd_predict(config: RunConfig, out_dir: str, jobs: int = 1) -> List[str]:
    """Online stage on the test design, plus dense regressor curves for band plots."""
    model = load_model(_model_path(config, out_dir))
    design = _test_design(config)
    dim = model.parameter_box.shape[0]

    mesh = None
    if config.write_vectors:
        spec = get_problem(model.problem)
        mesh = spec.build_mesh(float(model.provenance.get("h", model.mesh["h"])))

    rows = []
    written = []
    for i, mu in enumerate(design.points):
        pred = online_predict(model, mu)
        for b, k in enumerate(pred.eigen_numbers):
            rows.append({**_mu_fields(mu), "k": k, "lambda_dd": pred.eigenvalues[b],
                         "lambda_lo": pred.eigenvalue_lo[b], "lambda_hi": pred.eigenvalue_hi[b],
                         "out_of_box": pred.out_of_box})
            if mesh is not None:
                path = os.path.join(out_dir, f"dd_vector_{i + 1}_k{k}.csv")
                written.append(write_csv(path, _field_columns(mesh.dim),
                                         _field_rows(mesh, pred.eigenvectors[b])))

    columns = _mu_columns(dim) + ["k", "lambda_dd", "lambda_lo", "lambda_hi", "out_of_box"]
    written.insert(0, write_csv(os.path.join(out_dir, "dd_eigenvalues.csv"), columns, rows))

    grid = _curve_grid(model, config.curve_points, config.curve_margin)
    written.append(write_csv(os.path.join(out_dir, "gpr_curves.csv"),
                             ["regressor"] + _mu_columns(dim) + ["mean", "lo", "hi"],
                             _curve_rows(model, grid)))
    return written


def cmd_evaluate(config: RunConfig, out_dir: str, jobs: int = 1) -> List[str]:
    """Error report against the FEM; raises ToleranceError when a configured limit is broken."""
    model = load_model(_model_path(config, out_dir))
    if model.problem != config.problem.value:
        raise ConfigError(f"Config problem '{config.problem.value}' does not match the model's "
                          f"'{model.problem}'")
    design = _test_design(config)
    report = evaluate(model, design, h=config.mesh.h, jobs=jobs)

    dim = model.parameter_box.shape[0]
    columns = _mu_columns(dim) + ["k", "lambda_fem", "lambda_dd", "lambda_lo", "lambda_hi",
                                  "vec_inf_err", "vec_l2_rel_err"]
    rows = ({**_mu_fields(r.mu), "k": r.k, "lambda_fem": r.lambda_fem, "lambda_dd": r.lambda_dd,
             "lambda_lo": r.lambda_lo, "lambda_hi": r.lambda_hi, "vec_inf_err": r.vec_inf_err,
             "vec_l2_rel_err": r.vec_l2_rel_err} for r in report.rows)
    report_path = write_csv(os.path.join(out_dir, "error_report.csv"), columns, rows)

    summary = report.aggregate()
    tol = config.tolerances
    violations = report.violations(lambda_abs=tol.lambda_abs, lambda_rel=tol.lambda_rel,
                                   vec_inf=tol.vec_inf, coverage=tol.coverage)
    summary["violations"] = violations
    summary_path = os.path.join(out_dir, "evaluation_summary.json")
    with open(summary_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(summary, sort_keys=True, indent=2) + "\n")

    print(f"Evaluated {summary['n_rows']} rows ({summary['n_failed']} failed)")
    print(f"  max |lambda_DD - lambda_FEM| = {summary['max_lambda_err']:.6e}")
    print(f"  max relative eigenvalue error = {summary['max_lambda_rel_err']:.6e}")
    print(f"  max eigenvector sup error     = {summary['max_vec_inf_err']:.6e}")
    print(f"  95% band coverage             = {summary['coverage']:.3f}")

    if violations:
        raise ToleranceError("; ".join(violations))
    return [report_path, summary_path]


COMMANDS = {
    "fom": cmd_fom,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
}


# ──────────────────── Entry point ──────────────────── #

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eigenrom",
        description="Data-driven reduced basis for parametric eigenvalue problems",
    )
    parser.add_argument("--version", action="version", version=f"eigenrom {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in COMMANDS.items():
        cmd = sub.add_parser(name, help=(func.__doc__ or "").strip().splitlines()[0])
        cmd.add_argument("--config", required=True, help="Run configuration (JSON)")
        cmd.add_argument("--out", default=None, help=f"Output directory (default: config 'out' or {DEFAULT_OUT})")
        cmd.add_argument("--jobs", type=int, default=None, help="Worker cap (default: EIGENROM_JOBS or 1)")
        cmd.add_argument("--seed", type=int, default=None, help="Override every design and GPR seed")
        cmd.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings.configure_logging("DEBUG" if args.verbose else None)

    try:
        if args.jobs is not None and args.jobs < 1:
            raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
        config = load_run_config(args.config, seed=args.seed)
        out_dir = args.out or config.out or DEFAULT_OUT
        os.makedirs(out_dir, exist_ok=True)
        jobs = args.jobs or settings.default_jobs()

        written = COMMANDS[args.command](config, out_dir, jobs=jobs)
        for path in written:
            logger.debug("wrote %s", path)
        logger.info("%s finished: %d file(s) in %s", args.command, len(written), out_dir)
        return EXIT_OK
    except EigenRomError as e:
        logger.error("%s failed: %s", args.command, e)
        return e.exit_code
    except Exception:
        logger.exception("%s failed with an unexpected error", args.command)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
