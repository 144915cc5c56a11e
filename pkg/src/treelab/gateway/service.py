"""Deployment state and the end-to-end pipeline.

A :class:`Deployment` owns one workspace (database file, artifact
directory), the four service clients, and the knowledge base, and runs
the pipeline stages: ingest a project (raster + geotransform + point
cloud), collect detections (service and/or manual), run the
segmentation-selection-labeling-factors chain, and answer chat
instructions through knowledge routing plus the agent loop.

Pipeline stages for one project are serialized by a per-project lock;
chat sessions and reads are unrestricted.
"""

from __future__ import annotations

import threading
from collections import defaultdict
from pathlib import Path

from PIL import Image, UnidentifiedImageError

from ..agent import AgentTrace, ArtifactStore, ToolContext, run_session
from ..errors import ConfigurationError, IngestError, InsufficientPointsError, TreelabError
from ..factors import GeoTransform, TreeFactors, compute_factors, label_points, load_xyz
from ..geometry import Bbox, mask_area
from ..knowledge import KnowledgeBase
from ..selection import generate_grid_prompts, merge_candidates, select_masks
from ..store import TreeRecord, TreeStore
from .clients import build_clients
from .config import ServiceConfig

GRID_DIM = 48


def read_geo_file(path: str | Path) -> GeoTransform:
    import json

    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise IngestError(f"geotransform file not found: {path}")
    except json.JSONDecodeError as exc:
        raise IngestError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}")
    try:
        gt = GeoTransform.from_json(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise IngestError(f"{path}: bad geotransform: {exc}")
    return gt


def read_image_dims(path: str | Path) -> tuple[int, int]:
    """(width, height) of the raster; single-band or RGB PNG."""
    try:
        with Image.open(path) as img:
            return img.width, img.height
    except FileNotFoundError:
        raise IngestError(f"image file not found: {path}")
    except UnidentifiedImageError:
        raise IngestError(f"{path}: not a readable raster image")


class Deployment:
    def __init__(self, config: ServiceConfig):
        self.config = config
        config.workspace_path().mkdir(parents=True, exist_ok=True)
        self.store = TreeStore(config.db_path())
        self.artifacts = ArtifactStore(config.artifacts_dir())
        self.clients = build_clients(config)
        self.kb = KnowledgeBase.from_rows(
            self.store.kb_rows(),
            embedder=self.clients.embedder,
            threshold=config.retrieval_threshold,
        )
        self._locks: dict[str, threading.Lock] = defaultdict(threading.Lock)

    def close(self) -> None:
        self.store.close()

    # -- stage 1: ingest ---------------------------------------------------

    def ingest_project(self, image_path: str, geo_path: str, cloud_path: str,
                       project_id: str | None = None) -> dict:
        width, height = read_image_dims(image_path)
        gt = read_geo_file(geo_path)
        load_xyz(cloud_path)  # validate the text format line by line
        project_id = project_id or Path(image_path).resolve().parent.name
        self.store.put_project(project_id, str(image_path), width, height, gt,
                               str(cloud_path), status="ingested")
        return self.store.get_project(project_id)

    # -- stage 2: detections -------------------------------------------------

    def detect_trees(self, project_id: str, mode: str = "manual",
                     boxes: list[Bbox] | None = None) -> dict:
        """Store detections. Modes are additive: service detections and
        manual annotations accumulate (idempotent per exact box)."""
        project = self.store.get_project(project_id)
        if mode == "manual":
            if not boxes:
                raise ValueError("manual detection mode requires boxes")
            added = self.store.add_detections(project_id, boxes, source="manual")
        elif mode == "service":
            if self.clients.detector is None:
                raise ConfigurationError(
                    "no detector available: offline deployment has no "
                    "detector_fixture configured")
            det_boxes, scores = self.clients.detector.detect(project["image_path"])
            threshold = self.config.detector_score_threshold
            kept = [(b, s) for b, s in zip(det_boxes, scores) if s >= threshold]
            added = self.store.add_detections(
                project_id, [b for b, _ in kept], [s for _, s in kept],
                source="service")
        else:
            raise ValueError(f"unknown detection mode {mode!r}")
        if project["status"] == "ingested":
            self.store.set_project_status(project_id, "detected")
        return {
            "stored": added,
            "total": len(self.store.get_detections(project_id)),
            "detections": [b.as_list() for b in self.store.get_detections(project_id)],
        }

    # -- stage 3: segmentation + factors -----------------------------------------

    def run_segmentation(self, project_id: str) -> dict:
        """The full image-understanding chain: grid + box prompts to the
        segmenter, candidate merge, best-mask assignment, point labeling,
        factor estimation, tree-table replace. Idempotent; on failure the
        project keeps its previous stage and records."""
        project = self.store.get_project(project_id)
        detections = self.store.get_detections(project_id)
        if not detections:
            raise TreelabError(f"no detections stored for project {project_id!r}")
        if self.clients.segmenter is None:
            raise ConfigurationError(
                "no segmenter available: offline deployment has no "
                "segmenter_fixture configured")

        with self._locks[project_id]:
            width, height = project["width"], project["height"]
            gt = GeoTransform.from_json(project["geotransform"])
            image_ref = project["image_path"]

            prompts = generate_grid_prompts(width, height, GRID_DIM)
            point_masks = self.clients.segmenter.segment_points(image_ref, prompts.points)
            box_masks = self.clients.segmenter.segment_boxes(image_ref, detections)
            candidates = merge_candidates(point_masks, box_masks,
                                          height=height, width=width)
            selection = select_masks(detections, candidates)

            cloud = load_xyz(project["cloud_path"])
            labeled = label_points(cloud, selection, detections, gt)

            records = []
            for entry, det in zip(selection.entries, detections):
                tree_id = entry.detection_index + 1
                pts = labeled.points_of(tree_id)
                try:
                    factors = compute_factors(pts, entry.mask, gt)
                except InsufficientPointsError:
                    factors = TreeFactors(0.0, 0.0, 0.0,
                                          mask_area(entry.mask) * gt.pixel_size ** 2,
                                          len(pts))
                cx, cy = det.centroid()
                records.append(TreeRecord(
                    tree_id=tree_id,
                    project_id=project_id,
                    pos_col=cx,
                    pos_row=cy,
                    bbox=det,
                    contour=entry.mask,
                    factors=factors,
                    fallback=entry.fallback,
                ))
            self.store.delete_trees(project_id)
            self.store.upsert_trees(project_id, records)
            self.store.set_project_status(project_id, "factored")

        return {
            "trees": len(records),
            "fallbacks": sum(1 for e in selection.entries if e.fallback),
            "selection": selection,
        }

    # -- knowledge -----------------------------------------------------------

    def kb_ingest(self, text: str, doc_id: str = "doc",
                  max_tokens: int | None = None) -> int:
        chunks = self.kb.ingest(text, doc_id, max_tokens or 4000)
        if chunks:
            rows = self.kb.to_rows()[-len(chunks):]
            self.store.add_kb_chunks(rows)
        return len(chunks)

    # -- chat ------------------------------------------------------------------

    def create_session(self, project_id: str) -> int:
        self.store.get_project(project_id)  # existence check
        return self.store.create_session(project_id)

    def chat(self, project_id: str, instruction: str,
             session_id: int | None = None) -> AgentTrace:
        project = self.store.get_project(project_id)
        ctx = ToolContext(
            store=self.store,
            project_id=project_id,
            artifacts=self.artifacts,
            kb=self.kb if len(self.kb) else None,
            llm=self.clients.llm,
            pixel_size=project["geotransform"]["pixel_size"],
        )
        trace = run_session(instruction, self.clients.llm, ctx,
                            max_steps=self.config.max_agent_steps)
        if session_id is not None:
            self.store.append_message(session_id, instruction, trace.to_json())
        return trace
