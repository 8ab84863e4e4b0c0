import logging
from typing import Optional

from dotenv import load_dotenv
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict

from stochstab.errors import ValidationError
from stochstab.experiment_config import BUILTIN_NAMES, builtin_config
from stochstab.experiments import ExperimentRunner
from stochstab.operators import build_spectrum
from stochstab.settings import configure_logging, load_settings
from stochstab.stability import ModelParams, classify, region_boundary, symmetric_samples

# Load environment variables
load_dotenv()
settings = load_settings()
configure_logging(settings.log_level)
logger = logging.getLogger(__name__)

# Initialize FastAPI app
app = FastAPI(title="stochstab", description="Stability lab for linear evolution equations with multiplicative noise")


class ClassifyRequest(BaseModel):
    beta0: float
    beta1: float
    p: float = 2.0
    lambda1: float


class RegionRequest(BaseModel):
    kind: str = "moment"
    lambda1: float
    p: float = 2.0
    beta1_max: float = 10.0
    samples: int = 21


class EigenRequest(BaseModel):
    kind: str = "heat"
    n_modes: int = 1
    s: Optional[float] = None
    alpha: Optional[float] = None
    grid_points: int = 4096


class ExperimentRequest(BaseModel):
    # outputs always land under settings.out_dir
    model_config = ConfigDict(extra="forbid")

    name: str
    seed: Optional[int] = None
    paper_scale: bool = False
    format: Optional[str] = None


def _error(e: Exception) -> JSONResponse:
    if isinstance(e, ValueError):
        logger.warning(f"Rejected request: {e}")
        return JSONResponse(content={"error": str(e)}, status_code=400)
    logger.error(f"Error processing request: {e}")
    return JSONResponse(content={"error": str(e)}, status_code=500)


@app.exception_handler(RequestValidationError)
async def request_validation_handler(request: Request, exc: RequestValidationError):
    problems = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors())
    logger.warning(f"Rejected request body: {problems}")
    return JSONResponse(content={"error": problems}, status_code=400)


@app.get("/")
async def root():
    return {
        "service": "stochstab",
        "endpoints": ["/classify", "/region", "/eigen", "/experiment"],
        "experiments": list(BUILTIN_NAMES),
    }


@app.post("/classify")
def classify_point(body: ClassifyRequest):
    try:
        params = ModelParams(beta0=body.beta0, beta1=body.beta1, p=body.p)
        verdict = classify(params, body.lambda1)
        return {"lambda1": body.lambda1, **verdict.model_dump()}
    except Exception as e:
        return _error(e)


@app.post("/region")
def region(body: RegionRequest):
    try:
        samples = symmetric_samples(body.beta1_max, body.samples)
        points = region_boundary(body.kind, body.lambda1, body.p, samples)
        return {"kind": body.kind, "lambda1": body.lambda1, "p": body.p, "points": [list(point) for point in points]}
    except Exception as e:
        return _error(e)


@app.post("/eigen")
def eigen(body: EigenRequest):
    try:
        spectrum = build_spectrum(body.kind, n_modes=body.n_modes, s=body.s, alpha=body.alpha, grid_points=body.grid_points)
        return {"kind": spectrum.kind.value, "eigenvalues": list(spectrum.eigenvalues)}
    except Exception as e:
        return _error(e)


@app.post("/experiment")
def experiment(body: ExperimentRequest):
    try:
        if body.name not in BUILTIN_NAMES:
            raise ValidationError(f"unknown experiment {body.name!r}; expected one of {', '.join(BUILTIN_NAMES)}")
        config = builtin_config(body.name, paper_scale=body.paper_scale)
        runner = ExperimentRunner(out_root=settings.out_dir, workers=settings.workers)
        seed = settings.seed if body.seed is None else body.seed
        result = runner.run(config, seed=seed, output_format=body.format)
        return {
            "name": result.name,
            "out_dir": str(result.out_dir),
            "files": result.files,
            "manifest": result.manifest,
        }
    except Exception as e:
        return _error(e)
