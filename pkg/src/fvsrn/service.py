"""HTTP service exposing a checkpointed model for interactive rendering.

Stateless request model: every /render call carries the full camera and
optional transfer function, so concurrent requests share the immutable
model without any session protocol.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel, Field

from .imaging import Camera, png_bytes
from .model import FvsrnModel, memory_footprint
from .render import ModelSource, RenderSettings, render_image
from .transfer import TF_PRESETS, TransferFunction, tf_from_json


@dataclass
class SessionState:
    """Immutable per-process state: the loaded model and rendering defaults."""

    model: FvsrnModel
    default_tf: TransferFunction
    native_resolution: int = 64   # voxel unit for stepsize_voxels
    use_fused: bool = True


class CameraSpec(BaseModel):
    eye: list[float] = Field(min_length=3, max_length=3)
    target: list[float] = Field(min_length=3, max_length=3)
    up: list[float] = Field(default=[0.0, 1.0, 0.0], min_length=3, max_length=3)
    fov_y_deg: float = Field(default=45.0, gt=0.0, lt=180.0)


class TfPoint(BaseModel):
    x: float
    rgb: list[float] = Field(min_length=3, max_length=3)
    sigma: float


class RenderRequest(BaseModel):
    camera: CameraSpec
    width: int = Field(ge=1, le=4096)
    height: int = Field(ge=1, le=4096)
    stepsize_voxels: float = Field(default=1.0, gt=0.0)
    tf: list[TfPoint] | None = None
    t: float | None = None


def _tf_presets_json() -> dict:
    out = {}
    for name, tf in TF_PRESETS.items():
        out[name] = [
            {"x": float(x), "rgb": [float(c) for c in rgb], "sigma": float(s)}
            for x, rgb, s in zip(tf.xs, tf.rgbs, tf.sigmas)
        ]
    return out


def create_app(state: SessionState | None, ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="fvsrn render service")

    def session() -> SessionState:
        if state is None:
            raise HTTPException(status_code=503, detail="no model loaded")
        return state

    @app.get("/model/info")
    def model_info():
        s = session()
        cfg = s.model.config
        span = list(s.model.keyframes.span) if s.model.is_temporal else None
        return {
            "config": dataclasses.asdict(cfg),
            "memory": memory_footprint(s.model, "f32", "f32"),
            "temporal_span": span,
            "native_resolution": s.native_resolution,
            "tf_presets": _tf_presets_json(),
        }

    @app.post("/render")
    def render(req: RenderRequest):
        s = session()
        model = s.model
        if req.tf is not None and model.config.head == "color":
            raise HTTPException(status_code=409,
                                detail="color-head models bake their transfer function")
        if req.t is not None and not model.is_temporal:
            raise HTTPException(status_code=422,
                                detail="timestep supplied to a non-temporal model")
        if model.is_temporal:
            if req.t is None:
                raise HTTPException(status_code=422, detail="temporal model requires t")
            lo, hi = model.keyframes.span
            if not (lo <= req.t <= hi):
                raise HTTPException(status_code=422,
                                    detail=f"t must lie in [{lo}, {hi}]")
        try:
            cam = Camera(
                eye=np.array(req.camera.eye),
                target=np.array(req.camera.target),
                up=np.array(req.camera.up),
                fov_y=np.deg2rad(req.camera.fov_y_deg),
                width=req.width,
                height=req.height,
            )
        except ValueError as e:
            raise HTTPException(status_code=422, detail=str(e)) from e
        tf = s.default_tf
        if req.tf is not None:
            try:
                tf = tf_from_json([p.model_dump() for p in req.tf])
            except ValueError as e:
                raise HTTPException(status_code=422, detail=f"bad transfer function: {e}") from e
        settings = RenderSettings.for_voxels(s.native_resolution, req.stepsize_voxels)
        source = ModelSource(model, tf=tf if model.config.head == "density" else None,
                             t=req.t, use_fused=s.use_fused)
        t0 = time.perf_counter()
        img = render_image(source, cam, settings)
        millis = (time.perf_counter() - t0) * 1000.0
        return Response(content=png_bytes(img), media_type="image/png",
                        headers={"X-Render-Millis": f"{millis:.2f}"})

    if ui_dir and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app


def serve(state: SessionState, host: str = "127.0.0.1", port: int = 8077,
          ui_dir: str | None = None) -> None:
    import uvicorn

    uvicorn.run(create_app(state, ui_dir=ui_dir), host=host, port=port,
                log_level="warning")
