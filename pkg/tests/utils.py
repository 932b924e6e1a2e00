from __future__ import annotations

from collections.abc import Callable
from typing import Any

import msgspec
import numpy as np
import numpy.typing as npt

from gpccopf.dataset import SampleSet
from gpccopf.gp import GpModel, Hyperparams
from gpccopf.grid import Branch, Bus, BusKind, Gen, GridCase, Load, Res

FloatArray = npt.NDArray[np.float64]


def two_bus(*, p_load: float = 0.1, gamma: float = 0.3, x: float = 0.1) -> GridCase:
    """Slack generator at bus 1 feeding a PQ load at bus 2 over one lossless line."""
    return GridCase(
        base_mva=100.0,
        buses=(Bus(1, BusKind.SLACK, 0.9, 1.1), Bus(2, BusKind.PQ, 0.9, 1.1)),
        branches=(Branch(1, 2, 0.0, x, 2.0),),
        gens=(Gen(1, 0.0, 2.0, -1.0, 1.0, 1.0, 1.0, 0.0, 0.0),),
        loads=(Load(2, p_load, gamma),),
    )


def three_bus(*, r: float = 0.01, res: float = 0.02) -> GridCase:
    """
    Ring of three buses: slack at 1, PV at 2, PQ at 3 carrying a load and a renewable.
    Inputs are [pg_2, pl_3, prs_3]; outputs [v_3, qg_1, qg_2, s_1_2, s_2_3, s_1_3].
    """
    return GridCase(
        base_mva=100.0,
        buses=(
            Bus(1, BusKind.SLACK, 0.9, 1.1),
            Bus(2, BusKind.PV, 0.9, 1.1),
            Bus(3, BusKind.PQ, 0.9, 1.1),
        ),
        branches=(
            Branch(1, 2, r, 0.1, 2.0),
            Branch(2, 3, r, 0.1, 2.0),
            Branch(1, 3, r, 0.1, 2.0),
        ),
        gens=(
            Gen(1, 0.0, 2.0, -1.0, 1.0, 1.0, 1.0, 1.0, 0.0),
            Gen(2, 0.0, 2.0, -1.0, 1.0, 1.0, 2.0, 0.5, 0.0),
        ),
        loads=(Load(3, 0.6, 0.2),),
        res_units=(Res(3, res, 0.0),) if res > 0 else (),
    )


def two_bus_doc() -> dict[str, Any]:
    """The two-bus case in case-file form (MW units)."""
    return {
        "base_mva": 100.0,
        "buses": [
            {"id": 1, "kind": "slack", "v_min": 0.9, "v_max": 1.1, "g_shunt": 0.0, "b_shunt": 0.0},
            {"id": 2, "kind": "pq", "v_min": 0.9, "v_max": 1.1, "g_shunt": 0.0, "b_shunt": 0.0},
        ],
        "branches": [{"from": 1, "to": 2, "r": 0.0, "x": 0.1, "s_max_mva": 200.0}],
        "gens": [
            {
                "bus": 1,
                "p_min_mw": 0.0,
                "p_max_mw": 200.0,
                "q_min_mvar": -100.0,
                "q_max_mvar": 100.0,
                "v_set": 1.0,
                "c2": 0.0001,
                "c1": 0.0,
                "c0": 0.0,
            }
        ],
        "loads": [{"bus": 2, "p_ref_mw": 10.0, "gamma": 0.3}],
        "res": [],
    }


def case_text(doc: dict[str, Any]) -> bytes:
    return msgspec.json.encode(doc)


def smooth(X: FloatArray) -> FloatArray:
    return np.column_stack([np.sin(X[:, 0]) + 0.5 * X[:, -1], np.cos(X.sum(axis=1))])


def toy_set(
    m_s: int = 20,
    n_x: int = 2,
    *,
    seed: int = 0,
    fn: Callable[[FloatArray], FloatArray] = smooth,
    low: float = -2.0,
    high: float = 2.0,
) -> SampleSet:
    rng = np.random.default_rng(seed)
    X = rng.uniform(low, high, size=(m_s, n_x))
    Y = np.atleast_2d(fn(X).T).T.reshape(m_s, -1)
    return SampleSet(
        tuple(f"x{i}" for i in range(n_x)),
        tuple(f"y{j}" for j in range(Y.shape[1])),
        X,
        Y,
    )


def toy_hyperparams(
    n_x: int, *, ell2: float = 1.0, sf2: float = 1.0, sz2: float = 1e-4
) -> Hyperparams:
    return Hyperparams(np.full(n_x, ell2), sf2, sz2)


def toy_model(data: SampleSet | None = None, **kw: float) -> GpModel:
    """GP with fixed hyperparameters on ``data`` (no optimisation)."""
    data = data or toy_set()
    h = toy_hyperparams(data.X.shape[1], **kw)
    return GpModel.from_hyperparams(data, [h] * data.Y.shape[1])
