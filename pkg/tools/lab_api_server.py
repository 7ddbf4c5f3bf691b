#!/usr/bin/env python3
"""
lab_api_server.py
-----------------
FastAPI HTTP surface over the stability lab: contraction constants, path and
measure distances, Moore-Osgood checks and small experiments.

USAGE:
    bsde-lab-api
    bsde-lab-api --config config/api_server_config.yaml

    Or directly:
    python -m tools.lab_api_server --port 8000

REQUIREMENTS:
    pip install fastapi uvicorn pydantic
"""

import argparse
import logging
from datetime import datetime
from typing import Any, Dict, List, Literal, Optional

import numpy as np
import uvicorn
from fastapi import FastAPI, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__
from .config import ExperimentConfig, load_server_config, parse_config
from .constants import certify, select_k_star
from .harness import stability_experiment
from .limits import DoubleTable, moore_osgood_a, moore_osgood_b
from .measures import FiniteMeasure, interval_sup_distance, ks_distance
from .paths import StepPath, j1_distance

logger = logging.getLogger(__name__)


# Pydantic models for request/response validation
class MStarResponse(BaseModel):
    beta: float
    phi: float
    m_star: float
    gamma: float
    passes_quarter: bool
    delta_cross_check: float
    grid_m_star: float
    delta_confirmed: bool


class KStarRequest(BaseModel):
    phi_seq: List[float] = Field(..., min_length=1, description="Phi^k for k = 1, 2, ...")
    beta_hat: float = Field(..., gt=0)
    labels: Optional[List[Any]] = None


class PathPairRequest(BaseModel):
    """Two step paths in the text format of ``StepPath.to_text``."""

    a: str = Field(..., min_length=1)
    b: str = Field(..., min_length=1)
    window: float = Field(..., gt=0)


class MeasurePairRequest(BaseModel):
    """Two measures in the text format of ``FiniteMeasure.to_text``."""

    mu: str = Field(..., min_length=1)
    nu: str = Field(..., min_length=1)
    window: Optional[float] = Field(default=None, gt=0)
    interval: bool = False


class DistanceResponse(BaseModel):
    metric: str
    value: float
    window: Optional[float] = None


class MooreOsgoodRequest(BaseModel):
    entries: List[List[float]]
    ks: Optional[List[float]] = None
    ps: Optional[List[float]] = None
    row_limits: Optional[List[float]] = None
    variant: Literal["A", "B"] = "A"
    tol: float = Field(default=0.05, gt=0)


class HealthResponse(BaseModel):
    """Health check response."""
    status: str
    timestamp: str
    version: str


class ErrorResponse(BaseModel):
    """Error response model."""
    error: str
    detail: str
    timestamp: str


app = FastAPI(
    title="BSDE Stability Lab API",
    description="Contraction constants, Skorokhod and weak-convergence distances, Moore-Osgood checks",
    version=__version__,
    docs_url="/docs",
    redoc_url="/redoc",
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["GET", "POST"],
    allow_headers=["*"],
)

limits = {"max_experiment_paths": 20000, "max_experiment_k": 256}


def _bad_request(e: Exception) -> HTTPException:
    logger.error(f"Request error: {str(e)}")
    return HTTPException(status_code=400, detail=str(e))


def _server_error(e: Exception) -> HTTPException:
    logger.error(f"Unexpected error: {str(e)}")
    return HTTPException(status_code=500, detail="Internal server error")


@app.get("/", response_model=Dict[str, str])
async def root():
    """Root endpoint with basic API information."""
    return {
        "name": "BSDE Stability Lab API",
        "version": __version__,
        "documentation": "/docs",
        "health": "/health",
    }


@app.get("/health", response_model=HealthResponse)
async def health_check():
    return HealthResponse(status="healthy", timestamp=datetime.now().isoformat(), version=__version__)


@app.get("/constants/m-star", response_model=MStarResponse)
async def constants_m_star(
    beta: float = Query(..., gt=0, description="beta_hat"),
    phi: float = Query(0.0, ge=0, description="bound on the increments of A"),
):
    try:
        cert = certify(beta, phi)
        return MStarResponse(
            beta=beta,
            phi=phi,
            m_star=cert.m_star,
            gamma=cert.gamma,
            passes_quarter=cert.passes_quarter,
            delta_cross_check=cert.delta_cross_check,
            grid_m_star=cert.grid_m_star,
            delta_confirmed=cert.delta_confirmed,
        )
    except ValueError as e:
        raise _bad_request(e)
    except Exception as e:
        raise _server_error(e)


@app.post("/constants/k-star")
async def constants_k_star(request: KStarRequest):
    try:
        return select_k_star(request.phi_seq, request.beta_hat, request.labels).to_dict()
    except ValueError as e:
        raise _bad_request(e)
    except Exception as e:
        raise _server_error(e)


@app.post("/metrics/j1", response_model=DistanceResponse)
async def metrics_j1(request: PathPairRequest):
    try:
        a = StepPath.from_text(request.a)
        b = StepPath.from_text(request.b)
        return DistanceResponse(metric="j1", value=j1_distance(a, b, request.window), window=request.window)
    except ValueError as e:
        raise _bad_request(e)
    except Exception as e:
        raise _server_error(e)


@app.post("/metrics/ks", response_model=DistanceResponse)
async def metrics_ks(request: MeasurePairRequest):
    try:
        mu = FiniteMeasure.from_text(request.mu)
        nu = FiniteMeasure.from_text(request.nu)
        if request.interval:
            if request.window is None:
                raise ValueError("The interval distance needs a window")
            return DistanceResponse(metric="interval", value=interval_sup_distance(mu, nu, request.window), window=request.window)
        return DistanceResponse(metric="ks", value=ks_distance(mu, nu, request.window), window=request.window)
    except ValueError as e:
        raise _bad_request(e)
    except Exception as e:
        raise _server_error(e)


@app.post("/limits/mo-check")
async def limits_mo_check(request: MooreOsgoodRequest):
    try:
        entries = np.asarray(request.entries, dtype=float)
        table = DoubleTable(
            entries,
            request.ks or (),
            request.ps or (),
            row_limits=None if request.row_limits is None else np.asarray(request.row_limits),
        )
        verdict = moore_osgood_a(table, request.tol) if request.variant == "A" else moore_osgood_b(table, request.tol)
        return verdict.to_dict()
    except ValueError as e:
        raise _bad_request(e)
    except Exception as e:
        raise _server_error(e)


@app.post("/experiment")
async def run_experiment(config: Dict[str, Any]):
    """Small experiments only; the server's path and k limits apply."""
    try:
        experiment: ExperimentConfig = parse_config(config).experiment
        if experiment.n_paths > limits["max_experiment_paths"] or max(experiment.k_list) > limits["max_experiment_k"]:
            raise ValueError(
                f"Experiment too large for the server: n_paths <= {limits['max_experiment_paths']}, "
                f"k <= {limits['max_experiment_k']}"
            )
        table = stability_experiment(experiment.model_copy(update={"workers": 1}))
        return table.to_dict()
    except ValueError as e:
        raise _bad_request(e)
    except Exception as e:
        raise _server_error(e)


@app.exception_handler(HTTPException)
async def http_exception_handler(request, exc: HTTPException):
    return JSONResponse(
        status_code=exc.status_code,
        content=ErrorResponse(error="HTTP Error", detail=str(exc.detail), timestamp=datetime.now().isoformat()).model_dump(),
    )


def main():
    """Main server entry point."""
    parser = argparse.ArgumentParser(description="FastAPI server for the BSDE stability lab")
    parser.add_argument("--config", type=str, help="Path to configuration file (optional)")
    parser.add_argument("--host", type=str, default=None, help="Host to bind to")
    parser.add_argument("--port", type=int, default=None, help="Port to bind to")
    parser.add_argument("--reload", action="store_true", help="Enable auto-reload for development")
    args = parser.parse_args()

    config = load_server_config(args.config)
    host = args.host or config["server"]["host"]
    port = args.port or config["server"]["port"]
    reload = args.reload or config["server"].get("reload", False)
    limits["max_experiment_paths"] = config["server"].get("max_experiment_paths", 20000)
    limits["max_experiment_k"] = config["server"].get("max_experiment_k", 256)

    log_level = config["logging"].get("level", "INFO")
    logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    logging.getLogger().setLevel(getattr(logging, log_level.upper()))

    logger.info("Starting BSDE Stability Lab API Server")
    logger.info(f"Server will be available at: http://{host}:{port}")
    logger.info(f"API documentation: http://{host}:{port}/docs")

    uvicorn.run("tools.lab_api_server:app", host=host, port=port, reload=reload, log_level=log_level.lower())


if __name__ == "__main__":
    main()
