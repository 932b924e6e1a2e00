"""
On-disk records handed between stages. Every record is a frozen msgspec Struct with a
``schema`` version and is written atomically.

Models are stored as their standardized training data plus hyperparameters (and inducing
inputs for sparse models); loading refactors the kernel matrices, which is cheap and
reproduces the trained model exactly.
"""

from __future__ import annotations

from pathlib import Path
from typing import Self, TypeVar

import msgspec
import msgspec.json
import numpy as np

from gpccopf.ccopf.problem import CcOpfSolution, ModelKind
from gpccopf.ccopf.surrogate import LinearSurrogate
from gpccopf.constants import (
    MANIFEST_SCHEMA,
    MODEL_FORMAT,
    MODEL_SCHEMA,
    REPORT_SCHEMA,
    SOLUTION_SCHEMA,
)
from gpccopf.dataset import SampleSet, Scaler
from gpccopf.errors import MissingArtifactError, SchemaMismatchError
from gpccopf.gp import GpModel, Hyperparams, OutputGp, SparseGpModel
from gpccopf.gp.sparse import SparseOutput, fit_sparse_output
from gpccopf.utils.fs_utils import write_bytes_atomic
from gpccopf.validate import BaselineReport, FullRecourseReport, ValidationReport

__all__ = ["ModelFile", "SolutionFile", "ReportFile", "StageRecord", "ManifestFile"]

Matrix = list[list[float]]
T = TypeVar("T")


def _read(path: Path, what: str) -> bytes:
    try:
        return path.read_bytes()
    except FileNotFoundError as e:
        raise MissingArtifactError.make(
            f"missing {what} file", path=str(path), hint="run the upstream stage first"
        ) from e


def _decode(raw: bytes, typ: type[T], path: Path) -> T:
    try:
        return msgspec.json.decode(raw, type=typ)
    except (msgspec.ValidationError, msgspec.DecodeError) as e:
        raise SchemaMismatchError.make(f"unreadable artifact: {e}", path=str(path)) from e


class _Record(msgspec.Struct, frozen=True):
    def save(self, path: Path) -> None:
        write_bytes_atomic(path, msgspec.json.format(msgspec.json.encode(self), indent=1) + b"\n")


# ─────────── model ───────────


def _output_weights(o: OutputGp | SparseOutput) -> np.ndarray:
    return o.beta if isinstance(o, OutputGp) else o.weights


def _check_refit(
    model: GpModel | SparseGpModel, output_schema: list[str], weights: Matrix
) -> None:
    if len(weights) != len(model.outputs):
        raise SchemaMismatchError.make(
            "stored weights do not match the outputs",
            stored=len(weights), outputs=len(model.outputs),
        )
    for name, stored, o in zip(output_schema, weights, model.outputs, strict=True):
        w = _output_weights(o)
        ref = np.asarray(stored, np.float64)
        if ref.shape != w.shape:
            raise SchemaMismatchError.make(
                "stored weights have the wrong length", output=name,
                stored=ref.size, refit=w.size,
            )
        scale = max(1.0, float(np.max(np.abs(ref), initial=0.0)))
        if not np.allclose(w, ref, rtol=1e-6, atol=1e-9 * scale):
            raise SchemaMismatchError.make(
                "refitted model does not reproduce the stored weights",
                output=name,
                max_diff=float(np.max(np.abs(w - ref))),
                hint="the training data or hyperparameters were edited after training",
            )


class ModelFile(_Record, frozen=True):
    mode: ModelKind
    input_schema: list[str]
    output_schema: list[str]
    x_mean: list[float]
    x_std: list[float]
    y_mean: list[float]
    y_std: list[float]
    X: Matrix  # standardized training inputs
    Y: Matrix  # standardized training targets
    log_hyperparams: Matrix  # one row per output: log [lambda, sigma_f^2, sigma_z^2]
    inducing: list[Matrix] | None = None  # sparse models: standardized Z per output
    linear_A: Matrix | None = None  # hybrid models
    linear_b: list[float] | None = None
    weights: Matrix | None = None  # per output: K^-1 y (full) or K_mm^-1 mu_m (sparse)
    format: str = MODEL_FORMAT
    schema: int = MODEL_SCHEMA

    @property
    def is_sparse(self) -> bool:
        return self.inducing is not None

    @classmethod
    def from_models(
        cls,
        data: SampleSet,
        model: GpModel | SparseGpModel,
        linear: LinearSurrogate | None = None,
    ) -> ModelFile:
        """``data`` is the standardized set the model was trained on."""
        sc = model.scaler
        hyp = [o.h for o in model.outputs]
        inducing: list[Matrix] | None = None
        if isinstance(model, SparseGpModel):
            inducing = [o.Z.tolist() for o in model.outputs]
        weights = [_output_weights(o).tolist() for o in model.outputs]
        return cls(
            mode=ModelKind.FULL if linear is None else ModelKind.HYBRID,
            input_schema=list(model.input_schema),
            output_schema=list(model.output_schema),
            x_mean=sc.x_mean.tolist(),
            x_std=sc.x_std.tolist(),
            y_mean=sc.y_mean.tolist(),
            y_std=sc.y_std.tolist(),
            X=data.X.tolist(),
            Y=data.Y.tolist(),
            log_hyperparams=[h.to_log().tolist() for h in hyp],
            inducing=inducing,
            linear_A=None if linear is None else linear.A.tolist(),
            linear_b=None if linear is None else linear.b.tolist(),
            weights=weights,
        )

    def to_models(self) -> tuple[GpModel | SparseGpModel, LinearSurrogate | None]:
        sc = Scaler(
            np.asarray(self.x_mean), np.asarray(self.x_std),
            np.asarray(self.y_mean), np.asarray(self.y_std),
        )
        ins, outs = tuple(self.input_schema), tuple(self.output_schema)
        X = np.asarray(self.X, np.float64).reshape(-1, len(ins))
        Y = np.asarray(self.Y, np.float64).reshape(-1, len(outs))
        hyp = [Hyperparams.from_log(np.asarray(t)) for t in self.log_hyperparams]
        data = SampleSet(ins, outs, X, Y, scaler=sc)
        model: GpModel | SparseGpModel
        if self.inducing is None:
            model = GpModel.from_hyperparams(data, hyp)
        else:
            fitted = tuple(
                fit_sparse_output(X, Y[:, j], h, np.asarray(Z, np.float64).reshape(-1, len(ins)))
                for j, (h, Z) in enumerate(zip(hyp, self.inducing, strict=True))
            )
            model = SparseGpModel(ins, outs, fitted, sc, data.m_s)
        if self.weights is not None:
            _check_refit(model, self.output_schema, self.weights)
        linear = None
        if self.linear_A is not None and self.linear_b is not None:
            linear = LinearSurrogate(
                ins, outs, np.asarray(self.linear_A, np.float64), np.asarray(self.linear_b)
            )
        return model, linear

    @classmethod
    def load(cls, path: Path) -> Self:
        doc = _decode(_read(path, "model"), cls, path)
        if doc.format != MODEL_FORMAT or doc.schema != MODEL_SCHEMA:
            raise SchemaMismatchError.make(
                "unsupported model format", path=str(path), format=doc.format, schema=doc.schema
            )
        return doc


# ─────────── solution ───────────


class SolutionFile(_Record, frozen=True):
    mode: ModelKind
    propagation: str
    status: str
    cost: float
    gen_buses: list[int]
    p_g: list[float]
    alpha: list[float]
    output_schema: list[str]
    mu: list[float]
    sigma2: list[float]
    lambda_out: list[float]
    lambda_pg: list[float]
    lambda_out_3std: list[float]
    lambda_pg_3std: list[float]
    iterations: int
    kkt_residual: float
    solve_time: float
    schema: int = SOLUTION_SCHEMA

    @classmethod
    def from_solution(
        cls,
        sol: CcOpfSolution,
        *,
        mode: ModelKind,
        propagation: str,
        gen_buses: list[int],
        canonical: bool = False,
    ) -> SolutionFile:
        return cls(
            mode=mode,
            propagation=propagation,
            status=str(sol.status),
            cost=sol.cost,
            gen_buses=gen_buses,
            p_g=sol.p_g.tolist(),
            alpha=sol.alpha.tolist(),
            output_schema=list(sol.output_schema),
            mu=sol.mu.tolist(),
            sigma2=sol.sigma2.tolist(),
            lambda_out=sol.lambda_out.tolist(),
            lambda_pg=sol.lambda_pg.tolist(),
            lambda_out_3std=sol.lambda_out_3std.tolist(),
            lambda_pg_3std=sol.lambda_pg_3std.tolist(),
            iterations=sol.iterations,
            kkt_residual=sol.kkt_residual,
            solve_time=0.0 if canonical else sol.solve_time,
        )

    @classmethod
    def load(cls, path: Path) -> Self:
        return _decode(_read(path, "solution"), cls, path)


# ─────────── report ───────────


class ReportFile(_Record, frozen=True):
    solution_cost: float
    validation: ValidationReport
    dc_rmse: float | None = None
    baseline_base_case: BaselineReport | None = None
    baseline_full_recourse: FullRecourseReport | None = None
    reference: dict[str, float] = msgspec.field(default_factory=dict)
    schema: int = REPORT_SCHEMA

    @classmethod
    def load(cls, path: Path) -> Self:
        return _decode(_read(path, "report"), cls, path)


# ─────────── manifest ───────────


class StageRecord(msgspec.Struct, frozen=True):
    inputs: dict[str, str]  # config fingerprints and upstream file digests
    outputs: dict[str, str]  # file name -> sha256
    timestamp: str | None = None


class ManifestFile(_Record, frozen=True):
    stages: dict[str, StageRecord] = msgspec.field(default_factory=dict)
    schema: int = MANIFEST_SCHEMA

    @classmethod
    def load(cls, path: Path) -> Self:
        if not path.exists():
            return cls()
        return _decode(path.read_bytes(), cls, path)

    def with_stage(self, name: str, record: StageRecord) -> ManifestFile:
        return msgspec.structs.replace(self, stages={**self.stages, name: record})

    def digest_of(self, filename: str) -> str | None:
        """Most recent recorded digest of an output file, if any stage wrote it."""
        for rec in self.stages.values():
            if filename in rec.outputs:
                return rec.outputs[filename]
        return None
