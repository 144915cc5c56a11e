"""HTTP surface over a deployment.

Endpoints (all JSON unless noted):

* ``GET  /health``                          service status + offline flag
* ``POST /projects``                        ingest a project from file paths
* ``GET  /projects`` / ``GET /projects/{id}``
* ``GET  /projects/{id}/image``             the raster (PNG)
* ``POST /projects/{id}/detections``        manual boxes or service run
* ``GET  /projects/{id}/detections``
* ``POST /projects/{id}/segment``           run the full segmentation chain
* ``GET  /projects/{id}/trees?q=...``       structured query (JSON document)
* ``POST /kb/documents``                    ingest knowledge text
* ``POST /chat/sessions``                   open a session
* ``POST /chat/sessions/{id}/messages``     run one instruction, get the trace
* ``GET  /chat/sessions/{id}/messages``     session history
* ``GET  /artifacts/{id}``                  SVG artifact
"""

from __future__ import annotations

import json

from fastapi import FastAPI, Request, Response
from fastapi.responses import FileResponse, JSONResponse
from pydantic import BaseModel, Field

from ..errors import (
    AgentParseError,
    ConfigurationError,
    IngestError,
    NotFoundError,
    QueryError,
    ServiceError,
    TreelabError,
)
from ..geometry import Bbox
from ..store import StructuredQuery, ValidationError
from .service import Deployment


class ProjectCreate(BaseModel):
    image_path: str
    geo_path: str
    cloud_path: str
    project_id: str | None = None


class GeoTransformDoc(BaseModel):
    origin_x: float
    origin_y: float
    pixel_size: float


class ProjectDoc(BaseModel):
    project_id: str
    image_path: str
    width: int
    height: int
    geotransform: GeoTransformDoc
    cloud_path: str
    status: str


class ProjectList(BaseModel):
    projects: list[ProjectDoc]


class DetectionsPost(BaseModel):
    mode: str = Field(pattern="^(manual|service)$")
    boxes: list[list[float]] | None = None


class DetectionsDoc(BaseModel):
    stored: int
    total: int
    detections: list[list[float]]


class DetectionsList(BaseModel):
    detections: list[list[float]]


class SegmentDoc(BaseModel):
    trees: int
    fallbacks: int


class QueryResultDoc(BaseModel):
    columns: list[str]
    rows: list[list]


class KbDocument(BaseModel):
    text: str
    doc_id: str = "doc"
    max_tokens: int | None = None


class KbIngestDoc(BaseModel):
    chunks: int


class SessionCreate(BaseModel):
    project_id: str


class SessionDoc(BaseModel):
    session_id: int
    project_id: str


class MessagePost(BaseModel):
    text: str


class StepDoc(BaseModel):
    thought: str
    action: str
    action_input: dict
    observation: str


class TraceDoc(BaseModel):
    instruction: str
    steps: list[StepDoc]
    final: str | None
    artifacts: list[str]
    status: str
    error: str | None


class MessageDoc(BaseModel):
    seq: int
    instruction: str
    trace: TraceDoc


class MessageList(BaseModel):
    messages: list[MessageDoc]


class HealthDoc(BaseModel):
    status: str
    offline: bool


_ERROR_CODES = [
    (NotFoundError, 404),
    (QueryError, 400),
    (ValidationError, 400),
    (IngestError, 400),
    (AgentParseError, 422),
    (ConfigurationError, 409),
    (ServiceError, 502),
    (TreelabError, 400),
]


def create_app(deployment: Deployment) -> FastAPI:
    app = FastAPI(title="treelab", version="0.1.0")

    for exc_type, code in _ERROR_CODES:
        def handler(request: Request, exc: Exception, _code=code) -> JSONResponse:
            return JSONResponse(status_code=_code, content={"detail": str(exc)})
        app.add_exception_handler(exc_type, handler)

    @app.exception_handler(ValueError)
    def value_error_handler(request: Request, exc: ValueError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.get("/health", response_model=HealthDoc)
    def health():
        return HealthDoc(status="ok", offline=deployment.config.offline)

    @app.post("/projects", response_model=ProjectDoc)
    def create_project(body: ProjectCreate):
        return deployment.ingest_project(
            body.image_path, body.geo_path, body.cloud_path, body.project_id)

    @app.get("/projects", response_model=ProjectList)
    def list_projects():
        return ProjectList(projects=deployment.store.list_projects())

    @app.get("/projects/{project_id}", response_model=ProjectDoc)
    def get_project(project_id: str):
        return deployment.store.get_project(project_id)

    @app.get("/projects/{project_id}/image")
    def get_project_image(project_id: str):
        project = deployment.store.get_project(project_id)
        return FileResponse(project["image_path"], media_type="image/png")

    @app.post("/projects/{project_id}/detections", response_model=DetectionsDoc)
    def post_detections(project_id: str, body: DetectionsPost):
        boxes = [Bbox.from_list(b) for b in body.boxes] if body.boxes else None
        return deployment.detect_trees(project_id, body.mode, boxes)

    @app.get("/projects/{project_id}/detections", response_model=DetectionsList)
    def get_detections(project_id: str):
        deployment.store.get_project(project_id)
        boxes = deployment.store.get_detections(project_id)
        return DetectionsList(detections=[b.as_list() for b in boxes])

    @app.post("/projects/{project_id}/segment", response_model=SegmentDoc)
    def post_segment(project_id: str):
        result = deployment.run_segmentation(project_id)
        return SegmentDoc(trees=result["trees"], fallbacks=result["fallbacks"])

    @app.get("/projects/{project_id}/trees", response_model=QueryResultDoc)
    def get_trees(project_id: str, q: str | None = None):
        deployment.store.get_project(project_id)
        try:
            doc = json.loads(q) if q else {}
        except json.JSONDecodeError as exc:
            raise QueryError(f"query parameter is not valid JSON: {exc}")
        query = StructuredQuery.from_json(doc)
        result = deployment.store.query(project_id, query)
        return result.to_json()

    @app.post("/kb/documents", response_model=KbIngestDoc)
    def post_kb_document(body: KbDocument):
        n = deployment.kb_ingest(body.text, body.doc_id, body.max_tokens)
        return KbIngestDoc(chunks=n)

    @app.post("/chat/sessions", response_model=SessionDoc)
    def create_session(body: SessionCreate):
        sid = deployment.create_session(body.project_id)
        return SessionDoc(session_id=sid, project_id=body.project_id)

    @app.post("/chat/sessions/{session_id}/messages", response_model=TraceDoc)
    def post_message(session_id: int, body: MessagePost):
        project_id = deployment.store.session_project(session_id)
        trace = deployment.chat(project_id, body.text, session_id=session_id)
        return trace.to_json()

    @app.get("/chat/sessions/{session_id}/messages", response_model=MessageList)
    def get_messages(session_id: int):
        deployment.store.session_project(session_id)
        return MessageList(messages=deployment.store.session_messages(session_id))

    @app.get("/artifacts/{artifact_id}")
    def get_artifact(artifact_id: str):
        svg = deployment.artifacts.read(artifact_id)
        return Response(content=svg, media_type="image/svg+xml")

    return app
