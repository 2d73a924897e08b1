"""HTTP surface: one POST route per command plus a health probe.

Handlers run synchronously (FastAPI moves them to a worker thread);
the service is meant for one user at a desk, not a farm. Error bodies
always carry a machine-readable kind: config, numeric or io.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import ConfigError, NumericError
from . import ops
from . import schemas as sc


def create_app() -> FastAPI:
    app = FastAPI(title="strandsim", version=__version__)

    @app.exception_handler(ConfigError)
    def _config_error(request: Request, exc: ConfigError):
        return JSONResponse(status_code=400, content={"kind": "config", "message": str(exc)})

    @app.exception_handler(RequestValidationError)
    def _validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"kind": "config", "message": str(exc.errors())})

    @app.exception_handler(NumericError)
    def _numeric_error(request: Request, exc: NumericError):
        return JSONResponse(status_code=500, content={"kind": "numeric", "message": str(exc)})

    @app.exception_handler(OSError)
    def _io_error(request: Request, exc: OSError):
        return JSONResponse(status_code=500, content={"kind": "io", "message": str(exc)})

    @app.get("/healthz", response_model=sc.HealthResponse)
    def healthz():
        return sc.HealthResponse(status="ok", version=__version__)

    @app.post("/grooms/generate", response_model=sc.GenGroomResponse)
    def gen_groom(req: sc.GenGroomRequest):
        return ops.gen_groom(req)

    @app.post("/motions/generate", response_model=sc.GenMotionResponse)
    def gen_motion(req: sc.GenMotionRequest):
        return ops.gen_motion(req)

    @app.post("/train/encoder", response_model=sc.TrainEncoderResponse)
    def train_encoder(req: sc.TrainEncoderRequest):
        return ops.train_encoder(req)

    @app.post("/train/simulator", response_model=sc.TrainSimulatorResponse)
    def train_simulator(req: sc.TrainSimulatorRequest):
        return ops.train_simulator(req)

    @app.post("/infer", response_model=sc.InferResponse)
    def infer(req: sc.InferRequest):
        return ops.infer(req)

    @app.post("/xpbd/simulate", response_model=sc.XpbdSimulateResponse)
    def xpbd_simulate(req: sc.XpbdSimulateRequest):
        return ops.xpbd_simulate(req)

    @app.post("/eval", response_model=sc.EvalResponse)
    def evaluate(req: sc.EvalRequest):
        return ops.evaluate(req)

    @app.post("/bench", response_model=sc.BenchResponse)
    def bench(req: sc.BenchRequest):
        return ops.bench(req)

    return app
