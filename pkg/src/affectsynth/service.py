"""HTTP synthesis service consumed by the browser explorer.

All state (gallery cache, identity model, uploaded sessions) is read-only
after startup except the session store, which only grows; synthesis runs
against immutable data and is safe under concurrent requests.
"""

from __future__ import annotations

import base64
import hashlib
import io
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, File, Request, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .config import AppConfig
from .gallery import GalleryCache
from .images import Image, load_png, png_bytes
from .mesh import LandmarkSet, load_landmarks, parse_landmarks
from .morphable import MorphableModel
from .pipeline import PipelineStageError, SynthRequest, process_image, render_preview
from .vagrid import GRID_SIZE

logger = logging.getLogger(__name__)


class SynthesizeBody(BaseModel):
    valence: float = Field(ge=-1.0, le=1.0)
    arousal: float = Field(ge=-1.0, le=1.0)
    intensity: float = Field(default=1.0, ge=0.0, le=1.5)
    session: str | None = None


@dataclass
class Session:
    image: Image
    landmarks: LandmarkSet


def _session_id(image_bytes: bytes, landmark_bytes: bytes) -> str:
    hasher = hashlib.sha256()
    hasher.update(image_bytes)
    hasher.update(b"\x00")
    hasher.update(landmark_bytes)
    return hasher.hexdigest()[:16]


def create_app(
    cache: GalleryCache,
    model: MorphableModel | None,
    cfg: AppConfig,
    preload_image: str | Path | None = None,
    preload_landmarks: str | Path | None = None,
) -> FastAPI:
    from fastapi.middleware.cors import CORSMiddleware

    app = FastAPI(title="affectsynth", docs_url=None, redoc_url=None)
    # the browser explorer is served from a different origin
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    sessions: dict[str, Session] = {}

    preloaded_session: str | None = None
    if preload_image is not None and preload_landmarks is not None:
        image_bytes = Path(preload_image).read_bytes()
        landmark_bytes = Path(preload_landmarks).read_bytes()
        preloaded_session = _session_id(image_bytes, landmark_bytes)
        sessions[preloaded_session] = Session(
            image=load_png(preload_image),
            landmarks=load_landmarks(preload_landmarks),
        )
        logger.info("preloaded session %s", preloaded_session)

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        field_name = ".".join(str(part) for part in first.get("loc", []) if part != "body")
        return JSONResponse(
            status_code=422,
            content={
                "error": first.get("msg", "invalid request"),
                "field": field_name or None,
            },
        )

    @app.exception_handler(PipelineStageError)
    async def stage_handler(request: Request, exc: PipelineStageError):
        return JSONResponse(status_code=400, content={"error": str(exc), "stage": exc.stage})

    @app.exception_handler(ValueError)
    async def value_handler(request: Request, exc: ValueError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.get("/health")
    async def health():
        payload = {"status": "ok"}
        if preloaded_session is not None:
            payload["preloaded_session"] = preloaded_session
        return payload

    @app.get("/grid")
    async def grid():
        counts = cache.histogram.tolist()
        medians = [[None] * GRID_SIZE for _ in range(GRID_SIZE)]
        for cell, median in cache.medians.items():
            medians[cell.row][cell.col] = [median[0], median[1]]
        return {"counts": counts, "medians": medians}

    @app.post("/session")
    async def create_session(
        image: UploadFile = File(...), landmarks: UploadFile = File(...)
    ):
        image_bytes = await image.read()
        landmark_bytes = await landmarks.read()
        session_id = _session_id(image_bytes, landmark_bytes)
        if session_id not in sessions:
            from PIL import Image as PILImage

            with PILImage.open(io.BytesIO(image_bytes)) as img:
                arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
            lms = parse_landmarks(landmark_bytes.decode("utf-8"), origin="upload")
            sessions[session_id] = Session(image=Image(arr), landmarks=lms)
        return {"session": session_id}

    @app.post("/synthesize")
    async def synthesize(body: SynthesizeBody):
        if body.session is not None:
            if body.session not in sessions:
                return JSONResponse(
                    status_code=404,
                    content={"error": f"unknown session {body.session!r}", "field": "session"},
                )
            if model is None:
                return JSONResponse(
                    status_code=400,
                    content={
                        "error": "service started without a morphable model; "
                        "session synthesis unavailable",
                        "stage": "fit",
                    },
                )
            session = sessions[body.session]
            result = process_image(
                SynthRequest(
                    valence=body.valence,
                    arousal=body.arousal,
                    intensity=body.intensity,
                ),
                cache,
                model,
                cfg,
                image=session.image,
                landmarks=session.landmarks,
            )
            out_image = result.image
            cell = result.cell
            median = result.median_va
        else:
            mesh, cell, median = cache.synthesize_mesh(
                body.valence, body.arousal, body.intensity
            )
            out_image = render_preview(mesh, cfg.pipeline.preview_size)
        return {
            "image_png_base64": base64.b64encode(png_bytes(out_image)).decode("ascii"),
            "cell": {"row": cell.row, "col": cell.col},
            "median_va": [median[0], median[1]],
        }

    return app
