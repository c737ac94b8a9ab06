# engines/config_engine.py

import hashlib
import json
import logging
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from engines.errors import ConfigError
from engines.geometry_engine import make_norm
from engines.process_engine import make_params, r_for_p_target
from engines.settings import OUTPUT_DIR
from engines.sgraded_engine import build_grid, expected_sgraded_edges
from engines.stats_engine import derive_scales

logger = logging.getLogger(__name__)

CONFIG_SCHEMA = "runconfig.v1"
MANIFEST_NAME = "manifest.json"
ARTIFACT_VERSION = "1.0"


# =========================================================
# Run Configuration (runconfig.v1)
# =========================================================
class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Section):
    n: float = Field(gt=0)
    r: Optional[float] = None
    p_target: Optional[float] = None
    delta_star: float = 0.5
    d: int = 2
    norm: Literal["L1", "L2", "Linf"] = "L2"

    @model_validator(mode="after")
    def _one_radius(self):
        if (self.r is None) == (self.p_target is None):
            raise ValueError("give exactly one of model.r and model.p_target")
        return self


class GridSection(_Section):
    s: int = 5
    node_cap: Optional[int] = None


class ConditioningSection(_Section):
    delta: float = 1.0
    delta_tilde: float = 1.0
    eps: float = 0.25
    eps_tilde: float = 0.2


class SamplerSection(_Section):
    method: Literal["importance", "rejection", "planted"] = "importance"
    replicas: int = 1000
    budget: int = 1000
    t: float = 1.0
    n_sweep: List[float] = Field(default_factory=list)
    slack: bool = True
    ldp_eps: float = 0.1


class VerifySection(_Section):
    edge_seeds: int = 2000
    oracle_instances: int = 100
    metric_pairs: int = 500
    planted_replicas: int = 500
    thm1_replicas: int = 200
    is_runs: int = 20
    is_replicas: int = 2000
    ldp_replicas: int = 400


class RunConfig(_Section):
    schema_version: str = Field(default=CONFIG_SCHEMA, alias="schema")
    model: ModelSection
    grid: GridSection = Field(default_factory=GridSection)
    conditioning: ConditioningSection = Field(default_factory=ConditioningSection)
    sampler: SamplerSection = Field(default_factory=SamplerSection)
    verify: VerifySection = Field(default_factory=VerifySection)
    seed: int = Field(default=0, ge=0)
    output_dir: str = OUTPUT_DIR

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    def snapshot(self):
        return self.model_dump(by_alias=True)


def parse_run_config(document):
    """dict → RunConfig; any validation failure is a ConfigError."""
    if not isinstance(document, dict):
        raise ConfigError("run configuration must be a JSON object")
    try:
        return RunConfig.model_validate(document)
    except ValidationError as exc:
        raise ConfigError(f"invalid run configuration: {exc}") from exc


def load_run_config(path):
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8") or "null")
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read run configuration {path}: {exc}") from exc
    return parse_run_config(document)


def resolve_params(config, n=None):
    """ModelParams for the config, optionally at another intensity n."""
    section = config.model
    n = section.n if n is None else n
    norm = make_norm(section.norm, section.d)
    r = section.r if section.r is not None else r_for_p_target(n, section.p_target, norm)
    return make_params(n, r, norm, section.delta_star)


def derived_quantities(config):
    """Every formula-level quantity of the configured model and grid."""
    params = resolve_params(config)
    grid = build_grid(params, config.grid.s, node_cap=config.grid.node_cap)
    scales = derive_scales(
        grid,
        params.delta_star,
        delta_tilde=config.conditioning.delta_tilde,
        eps_tilde=config.conditioning.eps_tilde,
    )
    return {
        "n": params.n,
        "r": params.r,
        "d": params.norm.dim,
        "norm": params.norm.kind.value,
        "mu": params.mu,
        "tau": params.tau,
        "p_hat": params.p_hat,
        "s": grid.s,
        "m": grid.m,
        "D": grid.D,
        "nbhd_size": grid.nbhd_size,
        "tau_s": grid.tau_s,
        "tau_s_exact": grid.tau_exact,
        "mu_s": expected_sgraded_edges(grid),
        "q": scales.q,
        "w": scales.w,
        "M": scales.M,
        "xi": scales.xi,
        "n_z": scales.n_z,
        "n_alpha": scales.n_alpha,
        "n_beta": scales.n_beta,
        "n_gamma": scales.n_gamma,
        "regime_warnings": list(params.warnings),
    }


# =========================================================
# JSON Sanitizer
# Handles NumPy, NaN, Inf, tuples and dataclass records
# =========================================================
def to_native(obj):
    """
    Recursively convert NumPy scalars/arrays and non-finite floats into
    JSON-safe Python values; NaN and ±Inf become None.
    """
    if hasattr(obj, "to_dict"):
        return to_native(obj.to_dict())

    if isinstance(obj, dict):
        return {str(k): to_native(v) for k, v in obj.items()}

    if isinstance(obj, (list, tuple)):
        return [to_native(v) for v in obj]

    if isinstance(obj, np.ndarray):
        return to_native(obj.tolist())

    if isinstance(obj, np.generic):
        obj = obj.item()

    if isinstance(obj, float) and (math.isnan(obj) or math.isinf(obj)):
        return None

    return obj


# =========================================================
# Result Files
# =========================================================
def write_json(path, record):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(to_native(record), indent=2) + "\n", encoding="utf-8")
    return path


def write_csv(path, rows, columns=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(rows, columns=columns)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def build_manifest(config, command, outputs, derived):
    """Config snapshot, derived quantities and a checksum per output file."""
    return {
        "artifact_version": ARTIFACT_VERSION,
        "command": command,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "seed": config.seed,
        "config": config.snapshot(),
        "derived": derived,
        "files": {Path(p).name: file_sha256(p) for p in sorted(outputs, key=lambda p: Path(p).name)},
    }


def write_manifest(config, command, outputs, derived, out_dir):
    manifest = build_manifest(config, command, outputs, derived)
    path = write_json(Path(out_dir) / MANIFEST_NAME, manifest)
    logger.info("✅ manifest written: %s (%d files)", path, len(manifest["files"]))
    return manifest


def check_manifest(manifest, config, tolerance=1e-12):
    """
    Recompute derived quantities and checksums; returns a list of mismatch
    messages (empty when the manifest is consistent).
    """
    problems = []
    fresh = to_native(derived_quantities(config))
    for key, value in manifest.get("derived", {}).items():
        other = fresh.get(key)
        if isinstance(value, float) and isinstance(other, float):
            if abs(value - other) > tolerance * max(1.0, abs(other)):
                problems.append(f"derived {key}: {value} != {other}")
        elif value != other:
            problems.append(f"derived {key}: {value!r} != {other!r}")
    out_dir = Path(config.output_dir)
    for name, digest in manifest.get("files", {}).items():
        path = out_dir / name
        if not path.exists():
            problems.append(f"missing file {name}")
        elif file_sha256(path) != digest:
            problems.append(f"checksum mismatch for {name}")
    return problems
