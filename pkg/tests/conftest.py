import json

import pytest

from treelab.gateway.config import ServiceConfig, ServiceEndpoint, network_guard
from treelab.gateway.service import Deployment
from treelab.synthetic import generate_scene, make_decoys, write_service_fixtures


@pytest.fixture(autouse=True)
def no_network():
    """The whole suite must run offline: any socket connect fails loudly."""
    with network_guard():
        yield


@pytest.fixture(scope="session")
def pipeline_scene(tmp_path_factory):
    """A small synthetic scene saved to disk with mock-service fixtures:
    detector returns truth boxes, segmenter returns truth masks (box
    prompts) and decoys + blobs (point prompts)."""
    directory = tmp_path_factory.mktemp("scene")
    scene = generate_scene(seed=5, n_trees=4, extent_px=400)
    paths = scene.save(directory)
    decoys = make_decoys(scene, band=(0.3, 0.7), per_tree=2, n_random=6)
    paths.update(write_service_fixtures(scene, decoys, directory))
    return scene, paths


def make_deployment(tmp_path, paths=None, llm_script=None, **overrides) -> Deployment:
    cfg = ServiceConfig(offline=True, workspace=str(tmp_path / "workspace"))
    if paths is not None:
        cfg.detector_fixture = str(paths["detector"])
        cfg.segmenter_fixture = str(paths["segmenter"])
    for key, value in overrides.items():
        setattr(cfg, key, value)
    dep = Deployment(cfg)
    if llm_script is not None:
        from treelab.gateway.clients import ScriptedLlm

        dep.clients.llm = ScriptedLlm(llm_script)
    return dep


@pytest.fixture
def scripted_deployment(tmp_path, pipeline_scene):
    """Deployment with the scene ingested; swap in scripted completions via
    ``dep.clients.llm``."""
    scene, paths = pipeline_scene
    dep = make_deployment(tmp_path, paths)
    dep.ingest_project(str(paths["raster"]), str(paths["geo"]),
                       str(paths["cloud"]), project_id="scene")
    return scene, dep
