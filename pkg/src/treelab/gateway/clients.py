"""External model services behind one client interface, with offline mocks.

Four services sit behind pluggable clients: the LLM (chat completion),
the text embedder, the segmenter (point/box prompts to candidate masks)
and the tree detector (image to scored boxes). Remote clients share one
retry policy (``retries`` attempts after the first, exponential backoff)
and raise :class:`ServiceError` with the cause attached when the service
stays unavailable. Mock clients are first-class: deterministic, fixture-
driven, and selected automatically when the deployment is offline —
constructing a remote client offline is a configuration error.

Wire formats:

* LLM:       POST {"messages": [{"role": .., "content": ..}, ..]} -> {"content": ..}
* embedder:  POST {"texts": [..]} -> {"vectors": [[..], ..]}
* segmenter: POST {"image": ref, "points": [[x, y], ..]} -> {"masks": [RLE, ..]}
             POST {"image": ref, "boxes": [[x0, y0, x1, y1], ..]} -> {"masks": [..]}
* detector:  POST {"image": ref} -> {"boxes": [[x0, y0, x1, y1], ..], "scores": [..]}
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import httpx
import numpy as np

from ..errors import ConfigurationError, ServiceError
from ..geometry import Bbox, RleMask
from ..knowledge import HashedEmbedder
from .config import ServiceConfig, ServiceEndpoint


def _post_with_retries(endpoint: ServiceEndpoint, payload: dict) -> dict:
    last_exc: Exception | None = None
    for attempt in range(endpoint.retries + 1):
        try:
            response = httpx.post(endpoint.url, json=payload, timeout=endpoint.timeout_s)
            response.raise_for_status()
            return response.json()
        except (httpx.HTTPError, json.JSONDecodeError) as exc:
            last_exc = exc
            if attempt < endpoint.retries:
                time.sleep(0.1 * 2 ** attempt)
    raise ServiceError(f"service call to {endpoint.url} failed: {last_exc}") from last_exc


def _require_online(config: ServiceConfig, what: str) -> None:
    if config.offline:
        raise ConfigurationError(
            f"{what} requires a network service but the deployment is offline")


class ScriptedLlm:
    """Replays a fixed sequence of completions; the fixture file is a JSON
    list of strings (or {"completions": [..]})."""

    def __init__(self, completions: list[str]):
        self._completions = list(completions)
        self._cursor = 0

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedLlm":
        data = json.loads(Path(path).read_text())
        if isinstance(data, dict):
            data = data["completions"]
        return cls(data)

    def complete(self, messages: list[dict]) -> str:
        if self._cursor >= len(self._completions):
            raise ServiceError("scripted LLM exhausted its completions")
        out = self._completions[self._cursor]
        self._cursor += 1
        return out


class RemoteLlm:
    def __init__(self, config: ServiceConfig):
        _require_online(config, "the LLM client")
        self.endpoint = config.llm

    def complete(self, messages: list[dict]) -> str:
        data = _post_with_retries(self.endpoint, {"messages": messages})
        try:
            return data["content"]
        except (KeyError, TypeError) as exc:
            raise ServiceError(f"malformed LLM response: {data!r}") from exc


class RemoteEmbedder:
    def __init__(self, config: ServiceConfig):
        _require_online(config, "the embedding client")
        self.endpoint = config.embedder

    def embed(self, texts: list[str]) -> np.ndarray:
        data = _post_with_retries(self.endpoint, {"texts": texts})
        try:
            return np.asarray(data["vectors"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ServiceError(f"malformed embedder response: {data!r}") from exc


class MockSegmenter:
    """Returns fixture masks: point prompts get the point pool, box prompts
    the box pool. Fixture JSON: {"point_masks": [RLE, ..], "box_masks": [..]}."""

    def __init__(self, point_masks: list[RleMask], box_masks: list[RleMask]):
        self.point_masks = list(point_masks)
        self.box_masks = list(box_masks)

    @classmethod
    def from_file(cls, path: str | Path) -> "MockSegmenter":
        data = json.loads(Path(path).read_text())
        return cls(
            point_masks=[RleMask.from_json(m) for m in data.get("point_masks", [])],
            box_masks=[RleMask.from_json(m) for m in data.get("box_masks", [])],
        )

    def segment_points(self, image_ref: str, points) -> list[RleMask]:
        return list(self.point_masks)

    def segment_boxes(self, image_ref: str, boxes) -> list[RleMask]:
        return list(self.box_masks)


class RemoteSegmenter:
    def __init__(self, config: ServiceConfig):
        _require_online(config, "the segmenter client")
        self.endpoint = config.segmenter

    def _masks(self, payload: dict) -> list[RleMask]:
        data = _post_with_retries(self.endpoint, payload)
        try:
            return [RleMask.from_json(m) for m in data["masks"]]
        except (KeyError, TypeError) as exc:
            raise ServiceError(f"malformed segmenter response: {data!r}") from exc

    def segment_points(self, image_ref: str, points) -> list[RleMask]:
        return self._masks({"image": image_ref,
                            "points": [[float(x), float(y)] for x, y in points]})

    def segment_boxes(self, image_ref: str, boxes) -> list[RleMask]:
        return self._masks({"image": image_ref,
                            "boxes": [b.as_list() for b in boxes]})


class MockDetector:
    """Returns fixture boxes with scores. Fixture JSON:
    {"boxes": [[x0, y0, x1, y1], ..], "scores": [..]} (scores optional)."""

    def __init__(self, boxes: list[Bbox], scores: list[float] | None = None):
        self.boxes = list(boxes)
        self.scores = list(scores) if scores is not None else [1.0] * len(boxes)

    @classmethod
    def from_file(cls, path: str | Path) -> "MockDetector":
        data = json.loads(Path(path).read_text())
        boxes = [Bbox.from_list(b) for b in data["boxes"]]
        return cls(boxes, data.get("scores"))

    def detect(self, image_ref: str) -> tuple[list[Bbox], list[float]]:
        return list(self.boxes), list(self.scores)


class RemoteDetector:
    def __init__(self, config: ServiceConfig):
        _require_online(config, "the detector client")
        self.endpoint = config.detector

    def detect(self, image_ref: str) -> tuple[list[Bbox], list[float]]:
        data = _post_with_retries(self.endpoint, {"image": image_ref})
        try:
            boxes = [Bbox.from_list(b) for b in data["boxes"]]
            scores = [float(s) for s in data.get("scores", [1.0] * len(boxes))]
            return boxes, scores
        except (KeyError, TypeError) as exc:
            raise ServiceError(f"malformed detector response: {data!r}") from exc


@dataclass
class Clients:
    llm: object
    embedder: object
    segmenter: object | None
    detector: object | None


def build_clients(config: ServiceConfig) -> Clients:
    """Instantiate the four service clients per the configuration. Offline
    deployments get mocks; fixture-less mocks are created empty and the
    pipeline stages that need them fail with a clear configuration error."""
    if not config.offline:
        return Clients(
            llm=RemoteLlm(config),
            embedder=RemoteEmbedder(config),
            segmenter=RemoteSegmenter(config),
            detector=RemoteDetector(config),
        )
    llm = (ScriptedLlm.from_file(config.llm_script)
           if config.llm_script else ScriptedLlm([]))
    segmenter = (MockSegmenter.from_file(config.segmenter_fixture)
                 if config.segmenter_fixture else None)
    detector = (MockDetector.from_file(config.detector_fixture)
                if config.detector_fixture else None)
    return Clients(
        llm=llm,
        embedder=HashedEmbedder(dim=config.embedding_dim),
        segmenter=segmenter,
        detector=detector,
    )
