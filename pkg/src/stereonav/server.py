"""HTTP inference endpoint: one observation window in, waypoints out.

The server is stateless: the client owns its window history and ships the
full context with every request, either as inline feature tensors
(base64-encoded feature containers) or as provider seeds resolved by a
server-side scene provider. Parameters are loaded once and treated as
read-only, so identical requests always produce identical answers.

Endpoints
    POST /predict   -> waypoints + arrival probability
    GET  /health    -> checkpoint id, uptime, config hash
"""

from __future__ import annotations

import base64
import hashlib
import os
import time

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import io as sw_io
from .errors import FormatError, StereonavError, ValidationError
from .perception import FrameFeatures, TrackSet, track_query_grid
from .policy import ObservationWindow, PolicyModel

PROTOCOL_VERSION = 1
BIND_ENV_VAR = "STEREONAV_BIND"


class TracksPayload(BaseModel):
    points: list  # (m_trk, n_frames, 2) nested lists
    visible: list  # (m_trk, n_frames) nested lists


class FramesPayload(BaseModel):
    kind: str = Field(pattern="^(features|seeds)$")
    appearance_b64: str | None = None
    depth_b64: str | None = None
    seeds: list | None = None
    tracks: TracksPayload | None = None


class PredictRequest(BaseModel):
    protocol_version: int = PROTOCOL_VERSION
    positions: list  # (context_n, 2)
    subgoal: list  # (2,)
    mode: str = Field(default="monocular", pattern="^(monocular|stereo)$")
    frames: FramesPayload


class PredictResponse(BaseModel):
    waypoints: list
    arrival_prob: float
    model_id: str
    latency_ms: float


class HealthResponse(BaseModel):
    status: str
    checkpoint_id: str | None
    config_hash: str | None
    uptime_s: float


def _bad_request(field, message):
    raise HTTPException(status_code=422, detail={"field": field, "message": message})


class InferenceService:
    """Holds the loaded model and turns request payloads into windows."""

    def __init__(self, model=None, extractor=None, checkpoint_id=None, config_hash=None):
        self.model = model
        self.extractor = extractor
        self.checkpoint_id = checkpoint_id
        self.config_hash = config_hash
        self.started_at = time.monotonic()

    @staticmethod
    def from_checkpoint(path, extractor=None):
        model = PolicyModel.load(path)
        blob = open(path, "rb").read()
        digest = hashlib.sha256(blob).hexdigest()
        return InferenceService(
            model=model,
            extractor=extractor,
            checkpoint_id=os.path.basename(str(path)),
            config_hash=digest[:16],
        )

    def _decode_features(self, payload, cfg):
        if payload.appearance_b64 is None or payload.depth_b64 is None:
            _bad_request("frames", "features mode needs appearance_b64 and depth_b64")
        try:
            app = sw_io.decode_features(base64.b64decode(payload.appearance_b64))
            depth = sw_io.decode_features(base64.b64decode(payload.depth_b64))
        except (FormatError, ValueError) as e:
            _bad_request("frames", f"invalid feature payload: {e}")
        if app.shape != (cfg.context_n, cfg.grid_h, cfg.grid_w, cfg.appearance_dim):
            _bad_request(
                "frames",
                f"appearance shape {app.shape} != "
                f"{(cfg.context_n, cfg.grid_h, cfg.grid_w, cfg.appearance_dim)}",
            )
        if depth.shape != (cfg.context_n, cfg.grid_h, cfg.grid_w, 1):
            _bad_request("frames", f"depth shape {depth.shape} has dim != 1")
        if np.any(depth <= 0):
            _bad_request("frames", "depth values must be positive")
        return [
            FrameFeatures(appearance=app[i], depth=depth[i, ..., 0])
            for i in range(cfg.context_n)
        ]

    def _decode_seeds(self, payload, mode, cfg):
        if self.extractor is None:
            _bad_request("frames", "seeds mode requires a server-side scene provider")
        if payload.seeds is None or len(payload.seeds) != cfg.context_n:
            _bad_request("frames", f"seeds mode needs exactly {cfg.context_n} pose seeds")
        from .perception import FrameObservation

        frames = []
        for i, seed in enumerate(payload.seeds):
            if len(seed) != 3:
                _bad_request("frames", f"seed {i} must be (x, y, heading)")
            pose = tuple(float(v) for v in seed)
            frames.append(
                FrameObservation(
                    frame_id=i,
                    left=pose,
                    right=pose if mode == "stereo" else None,
                    focal_px=100.0,
                    baseline_m=0.12 if mode == "stereo" else 0.0,
                )
            )
        prev_mode = self.extractor.mode
        self.extractor.mode = mode
        try:
            feats, tracks = self.extractor.window_features(frames)
        finally:
            self.extractor.mode = prev_mode
        return feats, tracks

    def _decode_tracks(self, payload, cfg):
        if payload.tracks is not None:
            pts = np.asarray(payload.tracks.points, dtype=np.float64)
            vis = np.asarray(payload.tracks.visible, dtype=bool)
            if pts.ndim != 3 or pts.shape[1] != cfg.context_n or pts.shape[2] != 2:
                _bad_request("frames.tracks", f"points shape {pts.shape} invalid")
            return TrackSet(points=pts, visible=vis)
        base = track_query_grid(cfg.grid_h, cfg.grid_w, cfg.m_trk)
        pts = np.repeat(base[:, None, :], cfg.context_n, axis=1)
        return TrackSet(points=pts, visible=np.ones(pts.shape[:2], dtype=bool))

    def predict(self, request):
        if self.model is None:
            raise HTTPException(status_code=503, detail="no checkpoint loaded")
        if request.protocol_version != PROTOCOL_VERSION:
            _bad_request("protocol_version", f"expected {PROTOCOL_VERSION}")
        cfg = self.model.config
        positions = np.asarray(request.positions, dtype=np.float64)
        if positions.shape != (cfg.context_n, 2):
            _bad_request("positions", f"expected ({cfg.context_n}, 2), got {positions.shape}")
        subgoal = np.asarray(request.subgoal, dtype=np.float64)
        if subgoal.shape != (2,):
            _bad_request("subgoal", f"expected (2,), got {subgoal.shape}")

        if request.frames.kind == "features":
            features = self._decode_features(request.frames, cfg)
            tracks = self._decode_tracks(request.frames, cfg)
        else:
            features, tracks = self._decode_seeds(request.frames, request.mode, cfg)
            if request.frames.tracks is not None:
                tracks = self._decode_tracks(request.frames, cfg)

        window = ObservationWindow(
            positions=positions, subgoal=subgoal, features=features, tracks=tracks
        )
        start = time.perf_counter()
        try:
            out = self.model.predict(window)
        except ValidationError as e:
            raise HTTPException(status_code=422, detail={"field": e.field, "message": str(e)})
        except StereonavError as e:
            raise HTTPException(status_code=500, detail=str(e))
        latency_ms = 1000.0 * (time.perf_counter() - start)
        return PredictResponse(
            waypoints=[[float(x), float(y)] for x, y in out.waypoints],
            arrival_prob=float(out.arrival_prob),
            model_id=self.checkpoint_id or "unsaved",
            latency_ms=latency_ms,
        )

    def health(self):
        ready = self.model is not None
        return HealthResponse(
            status="ready" if ready else "not ready",
            checkpoint_id=self.checkpoint_id,
            config_hash=self.config_hash,
            uptime_s=time.monotonic() - self.started_at,
        )


def create_app(service):
    app = FastAPI(title="stereonav waypoint service")

    @app.post("/predict", response_model=PredictResponse)
    def predict(request: PredictRequest):
        return service.predict(request)

    @app.get("/health", response_model=HealthResponse)
    def health():
        return service.health()

    return app


def encode_feature_window(features):
    """Client-side helper: FrameFeatures list -> base64 payload fields."""
    app_blob = sw_io.encode_features([f.appearance for f in features])
    depth_blob = sw_io.encode_features([f.depth[..., None] for f in features])
    return {
        "appearance_b64": base64.b64encode(app_blob).decode("ascii"),
        "depth_b64": base64.b64encode(depth_blob).decode("ascii"),
    }
