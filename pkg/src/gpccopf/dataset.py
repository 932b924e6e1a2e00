"""
gpccopf.dataset
===============

Synthetic training data: sample injections, evaluate the AC (or DC) power flow per sample
and assemble tabular input/output sets with a stable column schema.

Sampling model
--------------
* load multiplier   eta = exp(N(mu_corr, s_corr) + N(mu_unc, s_unc)), the correlated
  draw shared by every load of a sample;
* RES multiplier    nu, the same construction with its own parameters;
* generation        p_g ~ psi * p_g_ref with psi ~ U[psi_lo, psi_hi], then rescaled so
  that sum(p_g) + sum(p_rs) = rho * sum(p_l).

Every row draws from its own counter-based substream keyed by ``(seed, row)``, so the
dataset does not depend on how rows are scheduled across workers.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Protocol

import msgspec
import msgspec.json
import numpy as np
import numpy.typing as npt
import pandas as pd

from gpccopf.constants import SCALER_SCHEMA, scaler_path
from gpccopf.errors import (
    ConstantColumnError,
    GpccopfError,
    InfeasibleSampleError,
    MissingArtifactError,
    SchemaMismatchError,
    UnstableDatasetError,
)
from gpccopf.grid import GridCase
from gpccopf.powerflow import (
    InjectionSet,
    PfSolution,
    dc_branch_flows,
    dc_bus_injections,
    gen_dispatch,
    solve_ac_pf,
    solve_dc_pf,
)
from gpccopf.reporting.warnings_bridge import DatasetWarning, warn_diagnostic
from gpccopf.utils.fs_utils import write_bytes_atomic, write_text_atomic
from gpccopf.utils.misc_utils import Workers, ordered_map

__all__ = [
    "SamplingParams",
    "Scaler",
    "SampleSet",
    "DatasetLayout",
    "LinearMap",
    "sample_injections",
    "sample_generation",
    "generation_factors",
    "input_vector",
    "output_vector",
    "build_dataset",
    "build_dc_dataset",
    "injections_from_inputs",
    "residual_dataset",
    "standardize",
    "destandardize",
    "save_dataset",
    "load_dataset",
]

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

MAX_DIVERGENT_FRACTION = 0.10
_STD_FLOOR = 1e-12


class SamplingParams(msgspec.Struct, frozen=True, forbid_unknown_fields=True):
    """Log-space (mu, sigma) pairs for the injection multipliers plus generation spread."""

    mu_eta_corr: float = -1.0
    sigma_eta_corr: float = 0.1
    mu_eta_unc: float = 1.0
    sigma_eta_unc: float = 0.05
    mu_nu_corr: float = 0.2
    sigma_nu_corr: float = 0.4
    mu_nu_unc: float = 1.0
    sigma_nu_unc: float = 0.3
    psi_lo: float = 0.8
    psi_hi: float = 1.2
    rho: float = 1.0139
    seed: int = 0

    def __post_init__(self) -> None:
        sigmas = (self.sigma_eta_corr, self.sigma_eta_unc, self.sigma_nu_corr, self.sigma_nu_unc)
        if min(sigmas) < 0:
            raise ValueError("sampling sigmas must be >= 0")
        if not self.psi_lo < self.psi_hi:
            raise ValueError("psi_lo must be < psi_hi")
        if self.rho < 1:
            raise ValueError("rho must be >= 1")


@dataclass(frozen=True, slots=True)
class Scaler:
    """Per-column (mean, std) for inputs and outputs."""

    x_mean: FloatArray
    x_std: FloatArray
    y_mean: FloatArray
    y_std: FloatArray


@dataclass(frozen=True, slots=True)
class SampleSet:
    input_schema: tuple[str, ...]
    output_schema: tuple[str, ...]
    X: FloatArray
    Y: FloatArray
    scaler: Scaler | None = None
    dropped: int = 0

    def __post_init__(self) -> None:
        if self.X.ndim != 2 or self.Y.ndim != 2 or self.X.shape[0] != self.Y.shape[0]:
            raise SchemaMismatchError.make(
                "X and Y must be 2-D with the same row count",
                x_shape=str(self.X.shape),
                y_shape=str(self.Y.shape),
            )
        if self.X.shape[1] != len(self.input_schema) or self.Y.shape[1] != len(
            self.output_schema
        ):
            raise SchemaMismatchError.make(
                "schema length does not match matrix width",
                n_x=len(self.input_schema),
                n_y=len(self.output_schema),
            )

    @property
    def m_s(self) -> int:
        return int(self.X.shape[0])

    def rows(self, idx: npt.ArrayLike) -> SampleSet:
        i = np.asarray(idx)
        return replace(self, X=self.X[i], Y=self.Y[i], dropped=0)


class LinearMap(Protocol):
    """Anything that maps inputs to outputs affinely over a fixed schema."""

    @property
    def input_schema(self) -> tuple[str, ...]: ...

    @property
    def output_schema(self) -> tuple[str, ...]: ...

    def predict(self, X: FloatArray) -> FloatArray: ...


# ─────────── schema ───────────


def _unique(names: Sequence[str]) -> tuple[str, ...]:
    seen: dict[str, int] = {}
    out: list[str] = []
    for nm in names:
        k = seen.get(nm, 0)
        seen[nm] = k + 1
        out.append(nm if k == 0 else f"{nm}_{k + 1}")
    return tuple(out)


@dataclass(frozen=True)
class DatasetLayout:
    """
    Column roster for a case.

    inputs  = [pg_<bus> (non-slack gens), pl_<bus>, prs_<bus>]
    outputs = [v_<bus> (PQ buses), qg_<bus> (all gens), s_<from>_<to> (all branches)]
    """

    case: GridCase

    @cached_property
    def input_schema(self) -> tuple[str, ...]:
        c = self.case
        return _unique(
            [f"pg_{c.gens[k].bus}" for k in c.non_slack_gens]
            + [f"pl_{ld.bus}" for ld in c.loads]
            + [f"prs_{r.bus}" for r in c.res_units]
        )

    @cached_property
    def output_schema(self) -> tuple[str, ...]:
        c = self.case
        return _unique(
            [f"v_{c.bus_id(int(i))}" for i in c.pq]
            + [f"qg_{g.bus}" for g in c.gens]
            + [f"s_{br.from_bus}_{br.to_bus}" for br in c.branches]
        )

    @property
    def n_x(self) -> int:
        return len(self.input_schema)

    @property
    def n_y(self) -> int:
        return len(self.output_schema)

    # input blocks
    @property
    def pg(self) -> slice:
        return slice(0, len(self.case.non_slack_gens))

    @property
    def pl(self) -> slice:
        s = self.pg.stop
        return slice(s, s + len(self.case.loads))

    @property
    def prs(self) -> slice:
        s = self.pl.stop
        return slice(s, s + len(self.case.res_units))

    # output blocks
    @property
    def v(self) -> slice:
        return slice(0, self.case.pq.size)

    @property
    def qg(self) -> slice:
        s = self.v.stop
        return slice(s, s + len(self.case.gens))

    @property
    def s(self) -> slice:
        s = self.qg.stop
        return slice(s, s + self.case.n)

    def output_bounds(self) -> tuple[FloatArray, FloatArray]:
        """Physical limits per output column; flow limits are read as [-s_max, s_max]."""
        c = self.case
        lo = np.empty(self.n_y)
        hi = np.empty(self.n_y)
        lo[self.v] = [c.buses[int(i)].v_min for i in c.pq]
        hi[self.v] = [c.buses[int(i)].v_max for i in c.pq]
        lo[self.qg] = [g.q_min for g in c.gens]
        hi[self.qg] = [g.q_max for g in c.gens]
        s_max = np.array([br.s_max for br in c.branches])
        lo[self.s] = -s_max
        hi[self.s] = s_max
        return lo, hi

    def check(self, input_schema: Sequence[str], output_schema: Sequence[str]) -> None:
        if tuple(input_schema) != self.input_schema or tuple(output_schema) != self.output_schema:
            raise SchemaMismatchError.make(
                "schema does not match the case",
                expected_inputs=self.n_x,
                got_inputs=len(input_schema),
                expected_outputs=self.n_y,
                got_outputs=len(output_schema),
            )


# ─────────── sampling ───────────


def _row_rng(seed: int, row: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, row, stream])))


def _multipliers(
    rng: np.random.Generator, n: int, mu_c: float, s_c: float, mu_u: float, s_u: float
) -> FloatArray:
    log_corr = rng.normal(mu_c, s_c)
    log_unc = rng.normal(mu_u, s_u, size=n)
    return np.exp(log_corr + log_unc)


def _reference_generation(case: GridCase) -> FloatArray:
    lo, hi = case.p_gen_bounds
    return 0.5 * (lo + hi)


def generation_factors(params: SamplingParams, row: int, n_gen: int) -> FloatArray:
    """Pre-normalisation spread psi ~ U[psi_lo, psi_hi] for one sample row."""
    return _row_rng(params.seed, row, 1).uniform(params.psi_lo, params.psi_hi, size=n_gen)


def sample_generation(
    p_l: FloatArray, p_rs: FloatArray, case: GridCase, params: SamplingParams
) -> FloatArray:
    """
    Generator set-points per sample (rows of ``p_l`` / ``p_rs``). Each generator draws
    psi ~ U[psi_lo, psi_hi] around its reference, then all are rescaled to close the
    balance rho * sum(p_l) exactly.
    """
    p_l = np.atleast_2d(np.asarray(p_l, np.float64))
    p_rs = np.asarray(p_rs, np.float64)
    p_rs = p_rs.reshape(p_l.shape[0], p_rs.size // max(p_l.shape[0], 1))
    ref = _reference_generation(case)
    if not ref.sum() > 0:
        raise InfeasibleSampleError.make("reference generation must be positive")

    out = np.empty((p_l.shape[0], ref.size))
    for i in range(p_l.shape[0]):
        total = params.rho * p_l[i].sum() - p_rs[i].sum()
        if total < 0:
            raise InfeasibleSampleError.make(
                "infeasible sample",
                row=i,
                required_generation=float(total),
                hint="renewable output exceeds the loss-adjusted demand",
            )
        shaped = generation_factors(params, i, ref.size) * ref
        out[i] = shaped * (total / shaped.sum())
    return out


def sample_injections(case: GridCase, params: SamplingParams, m_s: int) -> list[InjectionSet]:
    if m_s < 1:
        raise ValueError("m_s must be >= 1")
    n_l, n_r = len(case.loads), len(case.res_units)
    p_l = np.empty((m_s, n_l))
    p_rs = np.empty((m_s, n_r))
    for i in range(m_s):
        rng = _row_rng(params.seed, i, 0)
        eta = _multipliers(
            rng, n_l, params.mu_eta_corr, params.sigma_eta_corr, params.mu_eta_unc,
            params.sigma_eta_unc,
        )
        nu = _multipliers(
            rng, n_r, params.mu_nu_corr, params.sigma_nu_corr, params.mu_nu_unc,
            params.sigma_nu_unc,
        )
        p_l[i] = eta * case.p_load_ref
        p_rs[i] = nu * case.p_res_ref
    p_g = sample_generation(p_l, p_rs, case, params)
    return [InjectionSet.from_active(case, p_g[i], p_l[i], p_rs[i]) for i in range(m_s)]


# ─────────── evaluation ───────────


def input_vector(case: GridCase, inj: InjectionSet) -> FloatArray:
    return np.concatenate([inj.p_g[case.non_slack_gens], inj.p_l, inj.p_rs])


def output_vector(case: GridCase, sol: PfSolution, inj: InjectionSet) -> FloatArray:
    _, q_g = gen_dispatch(case, sol, inj)
    return np.concatenate([sol.v[case.pq], q_g, sol.flows.s])


def _dc_output_vector(case: GridCase, inj: InjectionSet) -> FloatArray:
    theta = solve_dc_pf(case, dc_bus_injections(case, inj))
    flows = np.abs(dc_branch_flows(case, theta))
    return np.concatenate([np.ones(case.pq.size), np.zeros(len(case.gens)), flows])


def build_dataset(
    case: GridCase,
    samples: Sequence[InjectionSet],
    *,
    tol: float = 1e-8,
    workers: Workers = 1,
) -> SampleSet:
    """Run the AC power flow per sample; divergent rows are dropped and counted."""
    layout = DatasetLayout(case)

    def one(inj: InjectionSet) -> FloatArray | None:
        try:
            sol = solve_ac_pf(case, inj, tol=tol)
        except GpccopfError as e:
            logger.debug("dropping sample: %s", e)
            return None
        return output_vector(case, sol, inj)

    outs = ordered_map(one, samples, workers=workers)
    keep = [i for i, y in enumerate(outs) if y is not None]
    dropped = len(samples) - len(keep)
    if samples and dropped > MAX_DIVERGENT_FRACTION * len(samples):
        raise UnstableDatasetError.make(
            "dataset generation unstable",
            divergent=dropped,
            total=len(samples),
            hint="narrow the sampling spread or check the case limits",
        )
    if dropped:
        warn_diagnostic(
            DatasetWarning,
            "dropped divergent power-flow samples",
            code="dataset.dropped",
            dropped=dropped,
            total=len(samples),
        )
    X = np.array([input_vector(case, samples[i]) for i in keep]).reshape(len(keep), layout.n_x)
    Y = np.array([outs[i] for i in keep]).reshape(len(keep), layout.n_y)
    logger.info("AC dataset: %d samples kept, %d dropped", len(keep), dropped)
    return SampleSet(layout.input_schema, layout.output_schema, X, Y, dropped=dropped)


def injections_from_inputs(case: GridCase, X: FloatArray) -> list[InjectionSet]:
    """
    Rebuild injection sets from input rows. The slack set-point is not an input and comes
    back as 0; the DC model balances it and the AC model solves for it.
    """
    lay = DatasetLayout(case)
    rows = np.atleast_2d(np.asarray(X, np.float64))
    out = []
    for x in rows:
        p_g = np.zeros(len(case.gens))
        p_g[case.non_slack_gens] = x[lay.pg]
        out.append(InjectionSet.from_active(case, p_g, x[lay.pl], x[lay.prs]))
    return out


def build_dc_dataset(case: GridCase, samples: Sequence[InjectionSet]) -> SampleSet:
    """Same schema as :func:`build_dataset`, evaluated with the lossless DC model."""
    layout = DatasetLayout(case)
    X = np.array([input_vector(case, inj) for inj in samples]).reshape(len(samples), layout.n_x)
    Y = np.array([_dc_output_vector(case, inj) for inj in samples]).reshape(
        len(samples), layout.n_y
    )
    return SampleSet(layout.input_schema, layout.output_schema, X, Y)


def residual_dataset(ac_set: SampleSet, linear: LinearMap) -> SampleSet:
    """AC outputs minus the linear part; adding ``linear.predict(X)`` back restores them."""
    if ac_set.scaler is not None:
        raise SchemaMismatchError.make("residuals are formed on unscaled data")
    if (
        tuple(linear.input_schema) != ac_set.input_schema
        or tuple(linear.output_schema) != ac_set.output_schema
    ):
        raise SchemaMismatchError.make(
            "linear surrogate schema does not match the dataset",
            n_x=len(ac_set.input_schema),
            n_y=len(ac_set.output_schema),
        )
    return replace(ac_set, Y=ac_set.Y - linear.predict(ac_set.X))


# ─────────── standardization ───────────


def _moments(M: FloatArray, names: Sequence[str]) -> tuple[FloatArray, FloatArray]:
    mean = M.mean(axis=0)
    std = M.std(axis=0)
    bad = np.flatnonzero(std <= _STD_FLOOR)
    if bad.size:
        col = names[int(bad[0])]
        raise ConstantColumnError.make(f"constant column {col}", column=col)
    return mean, std


def standardize(s: SampleSet) -> tuple[SampleSet, Scaler]:
    if s.scaler is not None:
        raise SchemaMismatchError.make("dataset is already standardized")
    x_mean, x_std = _moments(s.X, s.input_schema)
    y_mean, y_std = _moments(s.Y, s.output_schema)
    sc = Scaler(x_mean, x_std, y_mean, y_std)
    return replace(s, X=(s.X - x_mean) / x_std, Y=(s.Y - y_mean) / y_std, scaler=sc), sc


def destandardize(s: SampleSet) -> SampleSet:
    sc = s.scaler
    if sc is None:
        return s
    return replace(s, X=s.X * sc.x_std + sc.x_mean, Y=s.Y * sc.y_std + sc.y_mean, scaler=None)


# ─────────── CSV + scaler sidecar ───────────


class ScalerFile(msgspec.Struct, frozen=True):
    input_schema: list[str]
    output_schema: list[str]
    x_mean: list[float]
    x_std: list[float]
    y_mean: list[float]
    y_std: list[float]
    schema: int = SCALER_SCHEMA


def save_dataset(s: SampleSet, path: Path) -> None:
    """
    One CSV row per sample with the schema names as header (17 significant digits).
    A standardized set is written in physical units with its scaler as a sidecar.
    """
    raw = destandardize(s)
    frame = pd.DataFrame(
        np.hstack([raw.X, raw.Y]), columns=[*raw.input_schema, *raw.output_schema]
    )
    write_text_atomic(path, frame.to_csv(index=False, float_format="%.17g", lineterminator="\n"))
    side = scaler_path(path)
    if s.scaler is not None:
        sc = s.scaler
        doc = ScalerFile(
            list(s.input_schema),
            list(s.output_schema),
            sc.x_mean.tolist(),
            sc.x_std.tolist(),
            sc.y_mean.tolist(),
            sc.y_std.tolist(),
        )
        write_bytes_atomic(side, msgspec.json.encode(doc) + b"\n")
    elif side.exists():
        side.unlink()


def load_dataset(path: Path, *, n_x: int) -> SampleSet:
    """Read a CSV written by :func:`save_dataset`; the first ``n_x`` columns are inputs."""
    if not path.exists():
        raise MissingArtifactError.make("missing dataset file", path=str(path))
    frame = pd.read_csv(path, float_precision="round_trip")
    names = [str(c) for c in frame.columns]
    data = frame.to_numpy(dtype=np.float64)
    s = SampleSet(tuple(names[:n_x]), tuple(names[n_x:]), data[:, :n_x], data[:, n_x:])
    side = scaler_path(path)
    if not side.exists():
        return s
    doc = msgspec.json.decode(side.read_bytes(), type=ScalerFile)
    sc = Scaler(
        np.asarray(doc.x_mean), np.asarray(doc.x_std), np.asarray(doc.y_mean), np.asarray(doc.y_std)
    )
    return replace(
        s, X=(s.X - sc.x_mean) / sc.x_std, Y=(s.Y - sc.y_mean) / sc.y_std, scaler=sc
    )
