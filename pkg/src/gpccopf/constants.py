"""
gpccopf.constants
=================

Single place for artifact names, schema versions, numerical defaults and the reference
numbers echoed into reports. Stages, the CLI and the tests import from here so we never
duplicate strings like "model.json".
"""

from __future__ import annotations

from pathlib import Path

# ---- artifact filenames ------------------------------------------------------------

DATASET_BASENAME = "dataset.csv"
DATASET_VALID_BASENAME = "dataset_valid.csv"
DATASET_DC_BASENAME = "dataset_dc.csv"
DATASET_DC_VALID_BASENAME = "dataset_dc_valid.csv"
SCALER_SUFFIX = ".scaler.json"
MODEL_BASENAME = "model.json"
SOLUTION_BASENAME = "solution.json"
REPORT_BASENAME = "report.json"
MANIFEST_BASENAME = "manifest.json"
ITERLOG_BASENAME = "nlp_iterations.csv"
MC_SAMPLES_BASENAME = "mc_outputs.csv"

# ---- schema versions ---------------------------------------------------------

MODEL_FORMAT = "gpccopf-model-v1"
MODEL_SCHEMA = 1
SOLUTION_SCHEMA = 1
REPORT_SCHEMA = 1
MANIFEST_SCHEMA = 1
SCALER_SCHEMA = 1

# ---- numerical defaults ------------------------------------------------------

PF_TOL = 1e-8
PF_MAX_ITER = 30
NLP_TOL = 1e-5
VAR_CLAMP = 1e-10  # negative variances above -VAR_CLAMP are rounded to 0
# looser bound for the explicit-inverse and sparse paths, which cancel more digits
VAR_CLAMP_LOOSE = 1e-6
JITTER_START = 1e-10  # relative to mean(diag K)
JITTER_MAX = 1e-4
THREE_STD = 3.0
EPS_THREE_STD = 0.0027  # two-sided 99.73 % / 0.27 % quantiles

# ---- reference numbers (IEEE-9, echoed next to measured values) --------------

REFERENCE_IEEE9: dict[str, float] = {
    "cost_full_recourse": 4.056e3,
    "cost_base_case": 3.467e3,
    "cost_full_gp": 4.039e3,
    "cost_hybrid_gp": 4.024e3,
    "infeas_base_case": 0.0976,
    "infeas_full_gp": 0.0044,
    "infeas_hybrid_gp": 0.0080,
    "rmse_full_deterministic": 7.72e-5,
    "rmse_full_ta1": 0.63e-2,
    "rmse_hybrid_ta1": 0.30e-2,
    "rmse_dc": 6.65e-2,
    "n_inputs": 8,
    "n_outputs": 15,
}

# ---- helpers ----------------------------------------------------------------

_DATA_DIR = Path(__file__).resolve().parent / "data"
BUILTIN_PREFIX = "builtin:"


def data_dir() -> Path:
    """Directory with the bundled case files and example configs."""
    return _DATA_DIR


def builtin_case_path(name: str) -> Path:
    """`ieee9` → <pkg>/data/ieee9.json"""
    return _DATA_DIR / f"{name}.json"


def scaler_path(dataset_path: Path) -> Path:
    """Sidecar scaler file for a dataset CSV."""
    return dataset_path.with_name(dataset_path.stem + SCALER_SUFFIX)


def dataset_path(out_dir: Path) -> Path:
    return out_dir / DATASET_BASENAME


def model_path(out_dir: Path) -> Path:
    return out_dir / MODEL_BASENAME


def solution_path(out_dir: Path) -> Path:
    return out_dir / SOLUTION_BASENAME


def report_path(out_dir: Path) -> Path:
    return out_dir / REPORT_BASENAME


def manifest_path(out_dir: Path) -> Path:
    return out_dir / MANIFEST_BASENAME
