"""FastAPI application implementing the scorer wire protocol.

Three POST routes: ``/session`` registers a label set and caches its text
embeddings once; ``/score`` returns cosine similarities between the image
embedding and the session's cached text embeddings; ``/features`` returns
multi-level perceptual features with layer names in the metadata. A ``/health``
GET reports readiness. Sessions live behind a lock; model access is
serialized so concurrent requests are safe with non-thread-safe backends.
"""

from __future__ import annotations

import base64
import threading
import uuid
from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .backends import Backend, BackendLoadError, ImageDecodeError, build_backend, decode_image


class SessionRequest(BaseModel):
    labels: list[str]
    prompt_template: str = "a photo of a {}"


class ScoreRequest(BaseModel):
    session: str
    image_png_b64: str


class FeaturesRequest(BaseModel):
    image_png_b64: str


@dataclass
class Session:
    session_id: str
    labels: list[str]
    prompts: list[str]
    text_embeddings: np.ndarray  # unit rows, cached once per session


def create_app(model_name: str = "stub", device: str = "cpu") -> FastAPI:
    app = FastAPI(title="scorer-service")
    state = {"backend": None}
    load_lock = threading.Lock()
    model_lock = threading.Lock()
    sessions: dict[str, Session] = {}
    sessions_lock = threading.Lock()

    def backend() -> Backend:
        with load_lock:
            if state["backend"] is None:
                try:
                    state["backend"] = build_backend(model_name, device)
                except BackendLoadError as exc:
                    raise HTTPException(status_code=503, detail=str(exc)) from exc
            return state["backend"]

    def decode_request_image(image_png_b64: str) -> np.ndarray:
        try:
            raw = base64.b64decode(image_png_b64, validate=True)
        except Exception as exc:
            raise HTTPException(status_code=400, detail=f"invalid base64: {exc}") from exc
        try:
            return decode_image(raw)
        except ImageDecodeError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.get("/health")
    def health():
        return {"status": "ok", "model": model_name}

    @app.post("/session")
    def create_session(request: SessionRequest):
        if not request.labels:
            raise HTTPException(status_code=400, detail="labels must be nonempty")
        prompts = [request.prompt_template.format(label) for label in request.labels]
        be = backend()
        with model_lock:
            embeddings = be.embed_texts(prompts)
        session = Session(
            session_id=uuid.uuid4().hex,
            labels=list(request.labels),
            prompts=prompts,
            text_embeddings=embeddings,
        )
        with sessions_lock:
            sessions[session.session_id] = session
        return JSONResponse({"session": session.session_id,
                             "metadata": {"model": model_name,
                                          "n_labels": len(session.labels)}})

    @app.post("/score")
    def score(request: ScoreRequest):
        with sessions_lock:
            session = sessions.get(request.session)
        if session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {request.session!r}")
        img = decode_request_image(request.image_png_b64)
        be = backend()
        with model_lock:
            embedding = be.embed_image(img)
        scores = session.text_embeddings @ embedding
        return JSONResponse({"scores": [float(v) for v in scores]})

    @app.post("/features")
    def features(request: FeaturesRequest):
        img = decode_request_image(request.image_png_b64)
        be = backend()
        with model_lock:
            levels = be.features(img)
        return JSONResponse({
            "levels": [[float(v) for v in level] for level in levels],
            "metadata": {"layers": list(be.feature_layers), "model": model_name},
        })

    return app
