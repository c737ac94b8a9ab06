import logging

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from api.routes import experiments
from engines.settings import LOG_FORMAT, LOG_LEVEL, clique_node_cap, replica_threads

logging.basicConfig(level=LOG_LEVEL, format=LOG_FORMAT)
logger = logging.getLogger(__name__)

app = FastAPI(
    title="rggloc API",
    description="RGG localization diagnostics and upper-tail estimates",
    version="1.0",
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(experiments.router, prefix="/experiments", tags=["Experiments"])


# Health check endpoint (root)
@app.get("/")
async def root():
    return {
        "status": "healthy",
        "service": "rggloc API",
        "version": "1.0",
        "endpoints": {
            "grid_info": "/experiments/grid-info",
            "extract": "/experiments/extract",
            "tail": "/experiments/tail",
            "docs": "/docs",
        },
    }


@app.on_event("startup")
async def startup_event():
    logger.info("🚀 rggloc API started (%d replica threads, clique node cap %d)", replica_threads(), clique_node_cap())


@app.on_event("shutdown")
async def shutdown_event():
    logger.info("👋 rggloc API shutting down")
