"""
Run configuration: one JSON file decoded into a frozen msgspec tree.

Relative paths resolve against the directory holding the config file; a ``case_path`` of
the form ``builtin:<name>`` names a bundled case.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal

import msgspec
import msgspec.json

from gpccopf.ccopf.margins import Forecast, UncertaintySpec
from gpccopf.ccopf.problem import ModelKind
from gpccopf.constants import BUILTIN_PREFIX, EPS_THREE_STD, NLP_TOL, builtin_case_path
from gpccopf.dataset import SamplingParams
from gpccopf.errors import ConfigError
from gpccopf.gp import TrainConfig
from gpccopf.nlp import SolverOptions
from gpccopf.propagate import Propagation
from gpccopf.utils.json_utils import stable_hash

__all__ = [
    "SamplingConfig",
    "TrainingConfig",
    "UncertaintyConfig",
    "SolverConfig",
    "ValidationConfig",
    "RunConfig",
    "load_config",
    "fingerprint",
]

Workers = int | Literal["auto"]


class SamplingConfig(SamplingParams, frozen=True, forbid_unknown_fields=True):
    n_train: int = 75
    n_valid: int = 25
    workers: Workers = 1

    def params(self, *, offset: int = 0) -> SamplingParams:
        """The plain sampling parameters, with the seed shifted by ``offset``."""
        names = [f.name for f in msgspec.structs.fields(SamplingParams)]
        kw = {n: getattr(self, n) for n in names}
        kw["seed"] = self.seed + offset
        return SamplingParams(**kw)


class TrainingConfig(msgspec.Struct, frozen=True, forbid_unknown_fields=True):
    mode: ModelKind = ModelKind.FULL
    propagation: Propagation = Propagation.TA1
    restarts: int = 5
    init_log_range: float = 2.0
    max_iters: int = 200
    seed: int = 0
    sparse_m: int | None = None
    pin_inducing: bool = False

    def train_config(self, workers: Workers = 1) -> TrainConfig:
        return TrainConfig(
            restarts=self.restarts,
            init_log_range=self.init_log_range,
            max_iters=self.max_iters,
            seed=self.seed,
            workers=workers,
            pin_inducing=self.pin_inducing,
        )


class UncertaintyConfig(msgspec.Struct, frozen=True, forbid_unknown_fields=True):
    sigma_load_frac: float = 0.15
    sigma_res_frac: float = 0.30
    eps_pg: float = 0.001
    eps_q: float = 0.025
    eps_v: float = 0.025
    eps_s: float = 0.025

    def spec(self, forecast: Forecast) -> UncertaintySpec:
        return UncertaintySpec.from_fractions(
            forecast,
            sigma_load_frac=self.sigma_load_frac,
            sigma_res_frac=self.sigma_res_frac,
            eps_pg=self.eps_pg,
            eps_q=self.eps_q,
            eps_v=self.eps_v,
            eps_s=self.eps_s,
        )


class SolverConfig(msgspec.Struct, frozen=True, forbid_unknown_fields=True):
    tol: float = NLP_TOL
    max_iter: int = 200
    psi0: float = 0.1
    psi_shrink: float = 0.2
    log_iterations: bool = False

    def options(self, log_path: Path | None = None) -> SolverOptions:
        return SolverOptions(
            tol=self.tol,
            max_iter=self.max_iter,
            psi0=self.psi0,
            psi_shrink=self.psi_shrink,
            log_path=log_path if self.log_iterations else None,
        )


class ValidationConfig(msgspec.Struct, frozen=True, forbid_unknown_fields=True):
    n_mc: int = 1000
    seed: int = 0
    eps_margin: float = EPS_THREE_STD
    baseline_b: bool = True
    baseline_a_samples: int = 0  # 0 disables the per-sample AC-OPF baseline


class RunConfig(msgspec.Struct, frozen=True, forbid_unknown_fields=True):
    case_path: str
    output_dir: str = "out"
    sampling: SamplingConfig = msgspec.field(default_factory=SamplingConfig)
    training: TrainingConfig = msgspec.field(default_factory=TrainingConfig)
    uncertainty: UncertaintyConfig = msgspec.field(default_factory=UncertaintyConfig)
    solver: SolverConfig = msgspec.field(default_factory=SolverConfig)
    validation: ValidationConfig = msgspec.field(default_factory=ValidationConfig)

    @property
    def case_file(self) -> Path:
        if self.case_path.startswith(BUILTIN_PREFIX):
            return builtin_case_path(self.case_path[len(BUILTIN_PREFIX) :])
        return Path(self.case_path)

    @property
    def out_dir(self) -> Path:
        return Path(self.output_dir)

    def with_seed(self, seed: int) -> RunConfig:
        """Override every seed in the tree."""
        rep = msgspec.structs.replace
        return rep(
            self,
            sampling=rep(self.sampling, seed=seed),
            training=rep(self.training, seed=seed),
            validation=rep(self.validation, seed=seed),
        )


def _check(cfg: RunConfig) -> None:
    t = cfg.training
    if t.sparse_m is not None and t.propagation is Propagation.EM:
        raise ConfigError.make(
            "moment matching is not available for sparse models",
            propagation=str(t.propagation),
            sparse_m=t.sparse_m,
            hint="use propagation 'ta1' or drop sparse_m",
        )
    if t.sparse_m is not None and t.sparse_m < 1:
        raise ConfigError.make("sparse_m must be >= 1", sparse_m=t.sparse_m)
    if cfg.sampling.n_train < 2 or cfg.sampling.n_valid < 1:
        raise ConfigError.make(
            "need n_train >= 2 and n_valid >= 1",
            n_train=cfg.sampling.n_train,
            n_valid=cfg.sampling.n_valid,
        )
    if cfg.validation.n_mc < 1:
        raise ConfigError.make("validation.n_mc must be >= 1", n_mc=cfg.validation.n_mc)
    if not cfg.case_file.is_file():
        raise ConfigError.make("case file not found", path=str(cfg.case_file))


def load_config(
    path: Path | str,
    *,
    out: Path | str | None = None,
    seed: int | None = None,
) -> RunConfig:
    """Decode, resolve relative paths, apply CLI overrides and check invariants."""
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as e:
        raise ConfigError.make("cannot read config file", path=str(p)) from e
    try:
        cfg = msgspec.json.decode(raw, type=RunConfig)
    except (msgspec.ValidationError, msgspec.DecodeError) as e:
        raise ConfigError.make(f"invalid config: {e}", path=str(p)) from e

    base = p.resolve().parent
    case_path = cfg.case_path
    if not case_path.startswith(BUILTIN_PREFIX) and not Path(case_path).is_absolute():
        case_path = str(base / case_path)
    out_dir = Path(out) if out is not None else Path(cfg.output_dir)
    if out is None and not out_dir.is_absolute():
        out_dir = base / out_dir
    cfg = msgspec.structs.replace(cfg, case_path=case_path, output_dir=str(out_dir))
    if seed is not None:
        cfg = cfg.with_seed(seed)
    _check(cfg)
    return cfg


def fingerprint(section: msgspec.Struct) -> str:
    """12-hex digest of a config section, stable across key order."""
    return stable_hash(msgspec.to_builtins(section))
