"""
Pipeline stages. Each stage reads its upstream artifacts from the output directory,
writes its own and records both in the manifest.

    dataset   -> dataset.csv, dataset_valid.csv, dataset_dc.csv, dataset_dc_valid.csv
    train     -> model.json
    solve     -> solution.json (+ nlp_iterations.csv)
    validate  -> report.json, mc_outputs.csv
"""

from __future__ import annotations

import logging
from pathlib import Path

import msgspec
import numpy as np
import numpy.typing as npt

from gpccopf.ccopf import (
    Forecast,
    ModelKind,
    build_full_problem,
    build_hybrid_problem,
    fit_linear_surrogate,
    solve_cc_opf,
)
from gpccopf.constants import (
    DATASET_DC_BASENAME,
    DATASET_DC_VALID_BASENAME,
    DATASET_VALID_BASENAME,
    ITERLOG_BASENAME,
    MC_SAMPLES_BASENAME,
    REFERENCE_IEEE9,
    dataset_path,
    model_path,
    report_path,
    solution_path,
)
from gpccopf.dataset import (
    DatasetLayout,
    SampleSet,
    build_dataset,
    build_dc_dataset,
    injections_from_inputs,
    load_dataset,
    residual_dataset,
    sample_injections,
    save_dataset,
    standardize,
)
from gpccopf.errors import NlpFailure
from gpccopf.gp import GpModel, SparseGpModel, posterior_of, train, train_sparse
from gpccopf.grid import GridCase, load_case
from gpccopf.pipeline.artifacts import ModelFile, ReportFile, SolutionFile
from gpccopf.pipeline.config import RunConfig, fingerprint
from gpccopf.pipeline.manifest import check_upstream, record_stage, require
from gpccopf.utils.fs_utils import sha256_file
from gpccopf.validate import (
    AffinePolicy,
    baseline_base_case,
    baseline_full_recourse,
    monte_carlo_validate,
    regression_metrics,
)

__all__ = ["cmd_dataset", "cmd_train", "cmd_solve", "cmd_validate", "cmd_pipeline"]

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]


def _case(cfg: RunConfig) -> tuple[GridCase, str]:
    return load_case(cfg.case_path), sha256_file(cfg.case_file)


def _paths(out: Path) -> dict[str, Path]:
    return {
        "ac": dataset_path(out),
        "ac_valid": out / DATASET_VALID_BASENAME,
        "dc": out / DATASET_DC_BASENAME,
        "dc_valid": out / DATASET_DC_VALID_BASENAME,
    }


def _dc_twin(case: GridCase, ac: SampleSet) -> SampleSet:
    return build_dc_dataset(case, injections_from_inputs(case, ac.X))


# ─────────── dataset ───────────


def cmd_dataset(cfg: RunConfig, *, canonical: bool = False) -> list[Path]:
    case, case_digest = _case(cfg)
    s = cfg.sampling
    paths = _paths(cfg.out_dir)
    ac = build_dataset(case, sample_injections(case, s.params(), s.n_train), workers=s.workers)
    ac_valid = build_dataset(
        case, sample_injections(case, s.params(offset=1), s.n_valid), workers=s.workers
    )
    save_dataset(ac, paths["ac"])
    save_dataset(ac_valid, paths["ac_valid"])
    save_dataset(_dc_twin(case, ac), paths["dc"])
    save_dataset(_dc_twin(case, ac_valid), paths["dc_valid"])

    written = list(paths.values())
    record_stage(
        cfg.out_dir,
        "dataset",
        inputs={"case": case_digest, "sampling": fingerprint(s)},
        outputs=written,
        canonical=canonical,
    )
    return written


# ─────────── train ───────────


def cmd_train(cfg: RunConfig, *, canonical: bool = False) -> list[Path]:
    case, case_digest = _case(cfg)
    t = cfg.training
    lay = DatasetLayout(case)
    paths = _paths(cfg.out_dir)
    upstream = [require(paths["ac"], "training dataset")]
    if t.mode is ModelKind.HYBRID:
        upstream.append(require(paths["dc"], "DC training dataset"))
    digests = check_upstream(cfg.out_dir, upstream)

    ac = load_dataset(paths["ac"], n_x=lay.n_x)
    lay.check(ac.input_schema, ac.output_schema)
    linear = None
    data = ac
    if t.mode is ModelKind.HYBRID:
        linear = fit_linear_surrogate(load_dataset(paths["dc"], n_x=lay.n_x))
        data = residual_dataset(ac, linear)
    scaled, _ = standardize(data)
    tc = t.train_config(cfg.sampling.workers)
    model: GpModel | SparseGpModel
    if t.sparse_m is not None:
        model = train_sparse(scaled, t.sparse_m, tc)
    else:
        model = train(scaled, tc)

    out = model_path(cfg.out_dir)
    ModelFile.from_models(scaled, model, linear).save(out)
    record_stage(
        cfg.out_dir,
        "train",
        inputs={"case": case_digest, "training": fingerprint(t), **digests},
        outputs=[out],
        canonical=canonical,
    )
    return [out]


# ─────────── solve ───────────


def cmd_solve(cfg: RunConfig, *, canonical: bool = False) -> list[Path]:
    case, case_digest = _case(cfg)
    mpath = require(model_path(cfg.out_dir), "model file")
    digests = check_upstream(cfg.out_dir, [mpath])
    doc = ModelFile.load(mpath)
    model, linear = doc.to_models()

    forecast = Forecast.from_case(case)
    uspec = cfg.uncertainty.spec(forecast)
    if doc.mode is ModelKind.HYBRID and linear is not None:
        problem = build_hybrid_problem(case, linear, model, forecast, uspec)
    else:
        problem = build_full_problem(case, model, forecast, uspec, cfg.training.propagation)

    log_path = cfg.out_dir / ITERLOG_BASENAME
    sol = solve_cc_opf(problem, opts=cfg.solver.options(log_path))
    out = solution_path(cfg.out_dir)
    SolutionFile.from_solution(
        sol,
        mode=doc.mode,
        propagation=str(problem.propagation),
        gen_buses=[g.bus for g in case.gens],
        canonical=canonical,
    ).save(out)
    written = [out]
    if cfg.solver.log_iterations and log_path.exists():
        written.append(log_path)
    record_stage(
        cfg.out_dir,
        "solve",
        inputs={
            "case": case_digest,
            "uncertainty": fingerprint(cfg.uncertainty),
            "solver": fingerprint(cfg.solver),
            **digests,
        },
        outputs=written,
        canonical=canonical,
    )
    if not sol.ok:
        raise NlpFailure.make(
            "CC-OPF solve did not reach an optimal point",
            status=str(sol.status),
            iterations=sol.iterations,
            kkt_residual=sol.kkt_residual,
            hint="inspect solution.json; loosen eps or raise solver.max_iter",
        )
    return written


# ─────────── validate ───────────


def _surrogate_predictions(doc: ModelFile, X: FloatArray) -> FloatArray:
    model, linear = doc.to_models()
    mu, _ = posterior_of(model).predict(X)
    return mu if linear is None else mu + linear.predict(X)


def cmd_validate(cfg: RunConfig, *, canonical: bool = False) -> list[Path]:
    case, case_digest = _case(cfg)
    v = cfg.validation
    lay = DatasetLayout(case)
    paths = _paths(cfg.out_dir)
    spath = require(solution_path(cfg.out_dir), "solution file")
    mpath = require(model_path(cfg.out_dir), "model file")
    upstream = [spath, mpath, require(paths["ac_valid"], "validation dataset")]
    digests = check_upstream(cfg.out_dir, upstream)

    sol = SolutionFile.load(spath)
    forecast = Forecast.from_case(case)
    uspec = cfg.uncertainty.spec(forecast)
    policy = AffinePolicy(np.asarray(sol.p_g), np.asarray(sol.alpha))
    mc_path = cfg.out_dir / MC_SAMPLES_BASENAME
    report = monte_carlo_validate(
        case,
        policy,
        uspec,
        v.n_mc,
        v.seed,
        forecast=forecast,
        eps_margin=v.eps_margin,
        workers=cfg.sampling.workers,
        outputs_path=mc_path,
    )

    valid = load_dataset(paths["ac_valid"], n_x=lay.n_x)
    pred = _surrogate_predictions(ModelFile.load(mpath), valid.X)
    metrics = regression_metrics(valid.Y, pred, names=valid.output_schema)
    report = msgspec.structs.replace(report, metrics=metrics)

    dc_rmse = None
    if paths["dc"].exists():
        dc_lin = fit_linear_surrogate(load_dataset(paths["dc"], n_x=lay.n_x))
        dc_rmse = regression_metrics(valid.Y, dc_lin.predict(valid.X)).rmse_avg

    opts = cfg.solver.options()
    base_b = (
        baseline_base_case(
            case, uspec, forecast=forecast, n=v.n_mc, seed=v.seed, eps_margin=v.eps_margin,
            opts=opts, workers=cfg.sampling.workers,
        )
        if v.baseline_b
        else None
    )
    base_a = (
        baseline_full_recourse(
            case, uspec, forecast=forecast, n=v.baseline_a_samples, seed=v.seed,
            eps=uspec.eps_q, opts=opts, workers=cfg.sampling.workers,
        )
        if v.baseline_a_samples > 0
        else None
    )
    reference = dict(REFERENCE_IEEE9) if cfg.case_file.stem == "ieee9" else {}

    out = report_path(cfg.out_dir)
    ReportFile(
        solution_cost=sol.cost,
        validation=report,
        dc_rmse=dc_rmse,
        baseline_base_case=base_b,
        baseline_full_recourse=base_a,
        reference=reference,
    ).save(out)
    logger.info(
        "report: infeasibility %.4f, rmse %.3g (DC %s)",
        report.infeasibility,
        metrics.rmse_avg,
        "n/a" if dc_rmse is None else f"{dc_rmse:.3g}",
    )
    record_stage(
        cfg.out_dir,
        "validate",
        inputs={
            "case": case_digest,
            "uncertainty": fingerprint(cfg.uncertainty),
            "validation": fingerprint(v),
            **digests,
        },
        outputs=[out, mc_path],
        canonical=canonical,
    )
    return [out, mc_path]


def cmd_pipeline(cfg: RunConfig, *, canonical: bool = False) -> list[Path]:
    written: list[Path] = []
    for stage in (cmd_dataset, cmd_train, cmd_solve, cmd_validate):
        written += stage(cfg, canonical=canonical)
    return written
