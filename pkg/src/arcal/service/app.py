"""HTTP service around the detection and annotation core.

Workflow mirrors the deployment model: clouds are uploaded from the capture
device, the annotation UI queries box geometry and persists confirmed labels,
and a calibration client asks for the robot pose to close the AR-to-map chain.

Inference runs through a single-depth queue per model (weights are immutable
during inference, training is single-writer elsewhere); requests beyond the
pending limit are rejected with 429. A websocket channel at /ws pushes
detection-complete events to connected UIs.
"""

from __future__ import annotations

import asyncio
import json
import threading
from pathlib import Path

import anyio
from fastapi import FastAPI, HTTPException, Request, Response, WebSocket, WebSocketDisconnect
from fastapi.staticfiles import StaticFiles
from pydantic import ValidationError

from ..boxes import (DegenerateCornersError, EmptyObjectError, OrthogonalityError,
                     CornerTriple, box_from_corners, box_to_transform)
from ..clouds import PlyParseError, calibrate_ar_to_map
from ..network import load_checkpoint, timed_detect
from .schemas import (AnnotateRequest, AnnotateResponse, CalibrateRequest,
                      CalibrateResponse, CloudPointsResponse, CloudRecordSchema,
                      DetectRequest, DetectResponse, LabelSchema, TransformSchema,
                      UploadResponse)
from .storage import CloudStore

DEFAULT_MAX_UPLOAD = 64 * 1024 * 1024
DEFAULT_SCORE_THRESHOLD = 0.5
DEFAULT_QUEUE_LIMIT = 16


class InferenceQueue:
    """Serializes model access; rejects work beyond `limit` pending requests."""

    def __init__(self, limit=DEFAULT_QUEUE_LIMIT):
        self.limit = limit
        self._pending = 0
        self._count_lock = threading.Lock()
        self._run_lock = threading.Lock()

    def run(self, fn):
        with self._count_lock:
            if self._pending >= self.limit:
                raise HTTPException(429, "inference queue is full")
            self._pending += 1
        try:
            with self._run_lock:
                return fn()
        finally:
            with self._count_lock:
                self._pending -= 1


class EventHub:
    """Fan-out of service events to connected websocket clients."""

    def __init__(self):
        self._clients = set()
        self._lock = threading.Lock()
        self._loop = None

    async def register(self, ws):
        await ws.accept()
        with self._lock:
            self._clients.add(ws)
            self._loop = asyncio.get_running_loop()

    def unregister(self, ws):
        with self._lock:
            self._clients.discard(ws)

    def publish(self, event):
        """Thread-safe broadcast; drops clients that are gone."""
        with self._lock:
            clients = list(self._clients)
            loop = self._loop
        if not clients or loop is None:
            return
        payload = json.dumps(event)
        for ws in clients:
            asyncio.run_coroutine_threadsafe(ws.send_text(payload), loop)


def create_app(data_dir, model_path=None, ui_dir=None,
               max_upload_bytes=DEFAULT_MAX_UPLOAD,
               score_threshold=DEFAULT_SCORE_THRESHOLD,
               queue_limit=DEFAULT_QUEUE_LIMIT):
    app = FastAPI(title="arcal calibration service")
    store = CloudStore(data_dir)
    model = None
    if model_path is not None:
        model, _ = load_checkpoint(model_path)
        model.eval()
    app.state.store = store
    app.state.model = model
    app.state.queue = InferenceQueue(queue_limit)
    app.state.hub = EventHub()
    app.state.score_threshold = score_threshold

    def get_record_or_404(cloud_id):
        try:
            return store.get_record(cloud_id)
        except KeyError:
            raise HTTPException(404, f"unknown cloud_id {cloud_id!r}") from None

    def require_model():
        if app.state.model is None:
            raise HTTPException(503, "no model loaded")
        return app.state.model

    def run_detection(cloud_id):
        record = get_record_or_404(cloud_id)
        model = require_model()
        cloud = store.load_cloud(cloud_id)
        if len(cloud) == 0:
            raise HTTPException(422, "cloud has no points")
        box, score, ms = app.state.queue.run(lambda: timed_detect(cloud, model))
        response = DetectResponse(box=LabelSchema.from_box(box, cloud_id),
                                  score=score, inference_ms=ms)
        app.state.hub.publish({"event": "detection_complete",
                               "cloud_id": cloud_id, "score": score})
        return response

    # -- clouds -------------------------------------------------------------

    @app.post("/clouds", response_model=UploadResponse)
    async def upload_cloud(request: Request):
        body = await request.body()
        if len(body) > max_upload_bytes:
            raise HTTPException(413, "upload exceeds size limit")
        try:
            record = await anyio.to_thread.run_sync(store.add_cloud, body)
        except PlyParseError as e:
            raise HTTPException(
                400, {"message": str(e), "byte_offset": e.offset}) from None
        return UploadResponse(cloud_id=record.cloud_id,
                              point_count=record.point_count)

    @app.get("/clouds", response_model=list[CloudRecordSchema])
    def list_clouds():
        return [CloudRecordSchema(cloud_id=r.cloud_id, point_count=r.point_count,
                                  uploaded_at=r.uploaded_at,
                                  labeled=r.label_path is not None)
                for r in store.list_records()]

    @app.get("/clouds/{cloud_id}", response_model=CloudPointsResponse)
    def get_cloud(cloud_id: str):
        record = get_record_or_404(cloud_id)
        cloud = store.load_cloud(cloud_id)
        return CloudPointsResponse(cloud_id=cloud_id, point_count=len(cloud),
                                   points=cloud.points.tolist())

    # -- detection ----------------------------------------------------------

    @app.post("/detect", response_model=DetectResponse)
    def detect_endpoint(req: DetectRequest):
        return run_detection(req.cloud_id)

    # -- annotation geometry -------------------------------------------------

    @app.post("/annotate/box", response_model=AnnotateResponse)
    def annotate_box(req: AnnotateRequest):
        get_record_or_404(req.cloud_id)
        cloud = store.load_cloud(req.cloud_id)
        try:
            triple = CornerTriple(*[list(map(float, c)) for c in req.corners])
            box = box_from_corners(cloud, triple,
                                   height_threshold=req.height_threshold)
        except DegenerateCornersError:
            raise HTTPException(422, "degenerate corners") from None
        except OrthogonalityError as e:
            raise HTTPException(422, str(e)) from None
        except EmptyObjectError as e:
            raise HTTPException(422, str(e)) from None
        return AnnotateResponse(box=LabelSchema.from_box(box, req.cloud_id))

    # -- labels ---------------------------------------------------------------

    @app.put("/labels/{cloud_id}", status_code=204)
    async def put_label(cloud_id: str, request: Request):
        get_record_or_404(cloud_id)
        raw = await request.body()
        try:
            label = LabelSchema.model_validate_json(raw)
        except ValidationError as e:
            failing = [{"loc": list(err["loc"]), "msg": str(err["msg"]),
                        "type": err["type"]} for err in e.errors()]
            raise HTTPException(422, failing) from None
        if label.cloud_id != cloud_id:
            raise HTTPException(
                422, [{"loc": ["body", "cloud_id"],
                       "msg": "cloud_id does not match the path"}])
        # persist the raw bytes so GET round-trips exactly
        store.put_label(cloud_id, raw)
        return Response(status_code=204)

    @app.get("/labels/{cloud_id}")
    def get_label(cloud_id: str):
        get_record_or_404(cloud_id)
        try:
            raw = store.get_label_bytes(cloud_id)
        except KeyError:
            raise HTTPException(404, f"no label for {cloud_id!r}") from None
        return Response(content=raw, media_type="application/json")

    @app.delete("/labels/{cloud_id}", status_code=204)
    def delete_label(cloud_id: str):
        get_record_or_404(cloud_id)
        try:
            store.delete_label(cloud_id)
        except KeyError:
            raise HTTPException(404, f"no label for {cloud_id!r}") from None
        return Response(status_code=204)

    # -- calibration -----------------------------------------------------------

    @app.post("/calibrate", response_model=CalibrateResponse)
    def calibrate(req: CalibrateRequest):
        detection = run_detection(req.cloud_id)
        if detection.score < app.state.score_threshold:
            raise HTTPException(
                409, f"robot not found (score {detection.score:.3f} below "
                     f"threshold {app.state.score_threshold})")
        robot_in_ar = box_to_transform(detection.box.to_box())
        ar_to_map = calibrate_ar_to_map(req.robot_in_map.to_transform(),
                                        robot_in_ar)
        return CalibrateResponse(ar_to_map=TransformSchema.from_transform(ar_to_map),
                                 detection=detection)

    # -- events and UI -----------------------------------------------------------

    @app.websocket("/ws")
    async def websocket_events(ws: WebSocket):
        await app.state.hub.register(ws)
        try:
            while True:
                await ws.receive_text()
        except WebSocketDisconnect:
            app.state.hub.unregister(ws)

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    else:
        @app.get("/")
        def index():
            return Response(
                content="<html><body><h1>arcal calibration service</h1>"
                        "<p>No annotation UI bundle found. API docs at "
                        "<a href='/docs'>/docs</a>.</p></body></html>",
                media_type="text/html")

    return app
