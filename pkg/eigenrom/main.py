"""
FastAPI service - online queries against a trained reduced model.

Endpoints:
  GET  /         - banner
  GET  /health   - health check, reports whether a model is loaded
  GET  /model    - summary of the loaded model
  POST /predict  - eigenvalues, coefficients and 95% bands at a parameter

The model is read at startup from EIGENROM_MODEL_PATH.
Run with: uvicorn eigenrom.main:app
"""

import logging
import traceback
from typing import Optional

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from eigenrom import SCHEMA_VERSION, __version__, settings
from eigenrom.errors import ConfigError, EigenRomError
from eigenrom.rom_pipeline import RomModel, online_predict
from eigenrom.schemas import ModelSummary, PredictRequest, PredictResponse
from eigenrom.store import load_model

settings.configure_logging()
logger = logging.getLogger(__name__)

# ──────────────────── App setup ──────────────────── #

app = FastAPI(
    title="eigenrom online query API",
    version=__version__,
    description="Data-driven reduced-basis predictions for parametric eigenvalue problems",
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

_state = {"model": None, "path": None}


def set_model(model: Optional[RomModel], path: Optional[str] = None):
    """Swap the served model (None unloads it)."""
    _state["model"] = model
    _state["path"] = path


def get_model() -> Optional[RomModel]:
    return _state["model"]


@app.on_event("startup")
def startup():
    path = settings.MODEL_PATH
    if not path:
        logger.warning("EIGENROM_MODEL_PATH is not set; /predict will answer with an error")
        return
    try:
        set_model(load_model(path), path)
        logger.info("Serving model %s", path)
    except EigenRomError as e:
        logger.error("Could not load model %s: %s", path, e)


# ──────────────────── Basic endpoints ──────────────────── #

@app.get("/")
def home():
    return {"message": "eigenrom API is running", "version": __version__, "schema": SCHEMA_VERSION}


@app.get("/health")
def health():
    return {"status": "ok", "model_loaded": get_model() is not None}


# ──────────────────── Model ──────────────────── #

@app.get("/model")
def model_summary():
    model = get_model()
    if model is None:
        return {"error": "No model loaded"}
    return ModelSummary(**model.summary()).model_dump()


@app.post("/predict")
def predict_api(req: PredictRequest):
    """
    Evaluate the reduced model at ``mu``.

    Returns eigenvalues and reduced coefficients with 95% bands, the
    out-of-box flag and, on request, the reconstructed eigenvectors.
    """
    model = get_model()
    if model is None:
        return {"error": "No model loaded"}
    try:
        prediction = online_predict(model, req.mu)
        return PredictResponse(**prediction.to_dict(include_vectors=req.include_vectors)).model_dump(
            exclude_none=True)
    except ConfigError as e:
        return {"error": str(e)}
    except Exception:
        traceback.print_exc()
        return {"error": "Prediction failed"}
