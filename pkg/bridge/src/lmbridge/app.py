"""HTTP surface: /capabilities, /logits, /vocab, /health.

Error contract: schema violations are FastAPI's 422; anything naming a
layer or head the model lacks is a 400 with {"error", "retryable"}.
Inference holds the runner's lock, so one request is in flight at a
time regardless of how many clients connect.
"""

from __future__ import annotations

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .config import BridgeConfig
from .model import ModelRunner, RequestRangeError


class LogitsBody(BaseModel):
    context: str
    want_layers: list[int] = Field(default_factory=list)
    masked_heads: list[tuple[int, int]] = Field(default_factory=list)


def create_app(config: BridgeConfig) -> FastAPI:
    runner = ModelRunner(config)
    app = FastAPI(title="lmbridge")
    app.state.runner = runner

    @app.exception_handler(RequestRangeError)
    async def range_error(request, exc):
        return JSONResponse(status_code=400,
                            content={"error": str(exc), "retryable": False})

    @app.get("/capabilities")
    def capabilities():
        return runner.capabilities()

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.get("/vocab")
    def vocab():
        return runner.vocab()

    @app.post("/logits")
    def logits(body: LogitsBody):
        with runner.lock:
            final, per_layer = runner.logits(
                body.context, body.want_layers, body.masked_heads
            )
        return {
            "final": final,
            "per_layer": {str(layer): values for layer, values in per_layer.items()},
        }

    return app
