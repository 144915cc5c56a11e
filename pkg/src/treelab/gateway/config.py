"""Deployment configuration and the offline guarantee.

One JSON config file plus environment-variable overrides (``TREELAB_*``).
``offline`` defaults to true: all four external model services (LLM,
embedder, segmenter, detector) are then served by deterministic local
mocks and any attempt to construct a remote client is a configuration
error. :func:`network_guard` additionally fails the process-wide socket
``connect`` while active, which is how the test suite asserts that the
offline pipeline opens zero network connections.
"""

from __future__ import annotations

import json
import os
import socket
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigurationError, IngestError


@dataclass
class ServiceEndpoint:
    url: str = ""
    timeout_s: float = 10.0
    retries: int = 2  # attempts after the first, exponential backoff


@dataclass
class ServiceConfig:
    offline: bool = True
    workspace: str = "treelab-data"

    llm: ServiceEndpoint = field(default_factory=ServiceEndpoint)
    embedder: ServiceEndpoint = field(default_factory=ServiceEndpoint)
    segmenter: ServiceEndpoint = field(default_factory=ServiceEndpoint)
    detector: ServiceEndpoint = field(default_factory=ServiceEndpoint)

    # offline fixtures
    llm_script: str | None = None
    segmenter_fixture: str | None = None
    detector_fixture: str | None = None

    detector_score_threshold: float = 0.3
    embedding_dim: int = 256
    retrieval_threshold: float = 0.6
    max_agent_steps: int = 8

    def workspace_path(self) -> Path:
        return Path(self.workspace)

    def db_path(self) -> Path:
        return self.workspace_path() / "treelab.db"

    def artifacts_dir(self) -> Path:
        return self.workspace_path() / "artifacts"

    def to_json(self) -> dict:
        return {
            "offline": self.offline,
            "workspace": self.workspace,
            "llm": vars(self.llm),
            "embedder": vars(self.embedder),
            "segmenter": vars(self.segmenter),
            "detector": vars(self.detector),
            "llm_script": self.llm_script,
            "segmenter_fixture": self.segmenter_fixture,
            "detector_fixture": self.detector_fixture,
            "detector_score_threshold": self.detector_score_threshold,
            "embedding_dim": self.embedding_dim,
            "retrieval_threshold": self.retrieval_threshold,
            "max_agent_steps": self.max_agent_steps,
        }


def _endpoint_from(obj: dict | None) -> ServiceEndpoint:
    obj = obj or {}
    return ServiceEndpoint(
        url=obj.get("url", ""),
        timeout_s=float(obj.get("timeout_s", 10.0)),
        retries=int(obj.get("retries", 2)),
    )


_ENV_PREFIX = "TREELAB_"
_TRUTHY = {"1", "true", "yes", "on"}


def load_config(path: str | Path | None = None,
                env: dict[str, str] | None = None) -> ServiceConfig:
    """Read the JSON config file (when given) and apply environment
    overrides: TREELAB_OFFLINE, TREELAB_WORKSPACE, TREELAB_LLM_URL,
    TREELAB_EMBEDDER_URL, TREELAB_SEGMENTER_URL, TREELAB_DETECTOR_URL,
    TREELAB_LLM_SCRIPT, TREELAB_SEGMENTER_FIXTURE, TREELAB_DETECTOR_FIXTURE."""
    env = env if env is not None else dict(os.environ)
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise IngestError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}")

    cfg = ServiceConfig(
        offline=bool(data.get("offline", True)),
        workspace=data.get("workspace", "treelab-data"),
        llm=_endpoint_from(data.get("llm")),
        embedder=_endpoint_from(data.get("embedder")),
        segmenter=_endpoint_from(data.get("segmenter")),
        detector=_endpoint_from(data.get("detector")),
        llm_script=data.get("llm_script"),
        segmenter_fixture=data.get("segmenter_fixture"),
        detector_fixture=data.get("detector_fixture"),
        detector_score_threshold=float(data.get("detector_score_threshold", 0.3)),
        embedding_dim=int(data.get("embedding_dim", 256)),
        retrieval_threshold=float(data.get("retrieval_threshold", 0.6)),
        max_agent_steps=int(data.get("max_agent_steps", 8)),
    )

    if _ENV_PREFIX + "OFFLINE" in env:
        cfg.offline = env[_ENV_PREFIX + "OFFLINE"].strip().lower() in _TRUTHY
    if _ENV_PREFIX + "WORKSPACE" in env:
        cfg.workspace = env[_ENV_PREFIX + "WORKSPACE"]
    for name, endpoint in (("LLM", cfg.llm), ("EMBEDDER", cfg.embedder),
                           ("SEGMENTER", cfg.segmenter), ("DETECTOR", cfg.detector)):
        key = f"{_ENV_PREFIX}{name}_URL"
        if key in env:
            endpoint.url = env[key]
    if _ENV_PREFIX + "LLM_SCRIPT" in env:
        cfg.llm_script = env[_ENV_PREFIX + "LLM_SCRIPT"]
    if _ENV_PREFIX + "SEGMENTER_FIXTURE" in env:
        cfg.segmenter_fixture = env[_ENV_PREFIX + "SEGMENTER_FIXTURE"]
    if _ENV_PREFIX + "DETECTOR_FIXTURE" in env:
        cfg.detector_fixture = env[_ENV_PREFIX + "DETECTOR_FIXTURE"]
    return cfg


@contextmanager
def network_guard():
    """Raise on any socket connection attempt while active. The offline
    test suite runs under this guard end to end."""
    original = socket.socket.connect

    def blocked_connect(self, address, *args, **kwargs):
        raise ConfigurationError(
            f"network access attempted while offline: connect to {address!r}")

    socket.socket.connect = blocked_connect
    try:
        yield
    finally:
        socket.socket.connect = original
