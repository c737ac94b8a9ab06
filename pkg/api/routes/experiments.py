import io
import json
import logging
import traceback

from fastapi import APIRouter, Body, File, Form, HTTPException, UploadFile

from engines.config_engine import derived_quantities, parse_run_config, resolve_params, to_native
from engines.errors import ConfigError, DimensionMismatchError, RGGLocError
from engines.extract_engine import certify_thm2
from engines.ldp_engine import normalized_log_tail, sandwich_bounds
from engines.sampler_engine import importance_estimate_tail
from engines.sgraded_engine import build_grid, expected_sgraded_edges, load_cell_config
from engines.stats_engine import derive_scales, event_profile

logger = logging.getLogger(__name__)

router = APIRouter()

MAX_API_REPLICAS = 5000


def _fail(route, exc):
    if isinstance(exc, (ConfigError, DimensionMismatchError)):
        logger.warning("⚠️ rejected request to %s: %s", route, exc)
        raise HTTPException(status_code=400, detail=str(exc))
    logger.error("❌ FATAL ERROR IN %s\n%s", route, traceback.format_exc())
    raise HTTPException(status_code=500, detail=str(exc))


# =====================================================
# Derived quantities for a run configuration
# =====================================================
@router.post("/grid-info")
async def grid_info(document: dict = Body(...)):
    try:
        config = parse_run_config(document)
        derived = derived_quantities(config)
        logger.info("✅ grid-info m=%d τ̃_s=%d", derived["m"], derived["tau_s"])
        return to_native(derived)
    except Exception as e:
        _fail("/experiments/grid-info", e)


# =====================================================
# Clique-set certificate on an uploaded CellConfig
# =====================================================
@router.post("/extract")
async def extract(
    file: UploadFile = File(...),
    sidecar: str = Form(...),
    delta_tilde: float = Form(1.0),
    eps_tilde: float = Form(0.2),
):
    try:
        content = await file.read()
        cfg = load_cell_config(io.BytesIO(content), json.loads(sidecar))
        scales = derive_scales(cfg.grid, delta_tilde=delta_tilde, eps_tilde=eps_tilde)
        report = certify_thm2(cfg, cfg.grid, scales, eps_tilde)
        logger.info("✅ extract: %s", report.failure_mode or "localized")

        response = report.to_dict()
        response["events"] = event_profile(cfg, scales)
        return to_native(response)
    except (ValueError, KeyError, TypeError) as e:
        if not isinstance(e, RGGLocError):
            e = ConfigError(f"unreadable cell config: {e}")
        _fail("/experiments/extract", e)
    except Exception as e:
        _fail("/experiments/extract", e)


# =====================================================
# Tail estimate and sandwich bound at model.n
# =====================================================
@router.post("/tail")
async def tail(document: dict = Body(...)):
    try:
        config = parse_run_config(document)
        sampler = config.sampler
        replicas = min(sampler.replicas, MAX_API_REPLICAS)
        if replicas < sampler.replicas:
            logger.warning("⚠️ replicas capped at %d (requested %d)", replicas, sampler.replicas)

        params = resolve_params(config)
        grid = build_grid(params, config.grid.s, node_cap=config.grid.node_cap)
        estimate = importance_estimate_tail(grid, sampler.t, replicas, config.seed, slack=sampler.slack)
        bound = sandwich_bounds(params, grid, sampler.t, sampler.ldp_eps)
        value, err = normalized_log_tail(estimate, expected_sgraded_edges(grid), params.n)

        return to_native(
            {
                "estimate": estimate,
                "sandwich": bound,
                "normalized_estimate": value,
                "normalized_err": err,
                "replicas": replicas,
            }
        )
    except Exception as e:
        _fail("/experiments/tail", e)
