import json

import numpy as np
import pytest
from PIL import Image

from treelab.errors import ConfigurationError, IngestError, ServiceError, TreelabError
from treelab.gateway.clients import (
    MockDetector,
    MockSegmenter,
    RemoteDetector,
    RemoteEmbedder,
    RemoteLlm,
    RemoteSegmenter,
    ScriptedLlm,
    build_clients,
)
from treelab.gateway.config import ServiceConfig, load_config, network_guard
from treelab.geometry import Bbox, RleMask, box_to_mask, mask_iou
from treelab.store import StructuredQuery

from conftest import make_deployment


class TestConfig:
    def test_defaults_are_offline(self):
        cfg = load_config(env={})
        assert cfg.offline is True
        assert cfg.detector_score_threshold == 0.3
        assert cfg.retrieval_threshold == 0.6

    def test_file_plus_env_overrides(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({
            "offline": False,
            "workspace": "ws",
            "llm": {"url": "http://llm.example/api", "retries": 5},
        }))
        cfg = load_config(path, env={"TREELAB_OFFLINE": "1",
                                     "TREELAB_DETECTOR_URL": "http://det.example"})
        assert cfg.offline is True  # env wins
        assert cfg.workspace == "ws"
        assert cfg.llm.url == "http://llm.example/api"
        assert cfg.llm.retries == 5
        assert cfg.detector.url == "http://det.example"

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_config(tmp_path / "nope.json")

    def test_bad_json_names_line(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{\n  broken\n}")
        with pytest.raises(IngestError, match="line 2"):
            load_config(path)


class TestOfflineEnforcement:
    def test_remote_clients_refuse_offline_config(self):
        cfg = ServiceConfig(offline=True)
        for cls in (RemoteLlm, RemoteEmbedder, RemoteSegmenter, RemoteDetector):
            with pytest.raises(ConfigurationError):
                cls(cfg)

    def test_build_clients_offline_yields_mocks(self):
        cfg = ServiceConfig(offline=True)
        clients = build_clients(cfg)
        assert isinstance(clients.llm, ScriptedLlm)
        assert clients.segmenter is None and clients.detector is None

    def test_network_guard_blocks_connect(self):
        import socket

        with network_guard():
            s = socket.socket()
            with pytest.raises(ConfigurationError, match="offline"):
                s.connect(("127.0.0.1", 9))
            s.close()

    def test_scripted_llm_exhaustion_is_service_error(self):
        llm = ScriptedLlm(["one"])
        llm.complete([])
        with pytest.raises(ServiceError):
            llm.complete([])


class TestIngest:
    def test_synthetic_scene_ingests_with_dimensions(self, tmp_path, pipeline_scene):
        scene, paths = pipeline_scene
        dep = make_deployment(tmp_path, paths)
        project = dep.ingest_project(str(paths["raster"]), str(paths["geo"]),
                                     str(paths["cloud"]), project_id="p")
        assert (project["width"], project["height"]) == (400, 400)
        assert project["status"] == "ingested"
        assert project["geotransform"]["pixel_size"] == 0.025

    def test_missing_geo_file(self, tmp_path, pipeline_scene):
        scene, paths = pipeline_scene
        dep = make_deployment(tmp_path, paths)
        with pytest.raises(IngestError, match="geotransform"):
            dep.ingest_project(str(paths["raster"]), str(tmp_path / "no.json"),
                               str(paths["cloud"]))

    def test_malformed_cloud_names_line(self, tmp_path, pipeline_scene):
        scene, paths = pipeline_scene
        bad = tmp_path / "bad.xyz"
        bad.write_text("0 0 0\n1 2\n")
        dep = make_deployment(tmp_path, paths)
        with pytest.raises(IngestError, match="bad.xyz:2"):
            dep.ingest_project(str(paths["raster"]), str(paths["geo"]), str(bad))

    def test_3000px_raster_accepted(self, tmp_path, pipeline_scene):
        scene, paths = pipeline_scene
        big = tmp_path / "big.png"
        Image.new("RGB", (3000, 3000), (40, 90, 40)).save(big)
        dep = make_deployment(tmp_path, paths)
        project = dep.ingest_project(str(big), str(paths["geo"]),
                                     str(paths["cloud"]), project_id="big")
        assert project["width"] == project["height"] == 3000


class TestDetect:
    def test_manual_single_box(self, scripted_deployment):
        scene, dep = scripted_deployment
        result = dep.detect_trees("scene", "manual", [Bbox(0, 0, 10, 10)])
        assert result["stored"] == 1
        assert result["total"] == 1

    def test_manual_resubmission_idempotent(self, scripted_deployment):
        scene, dep = scripted_deployment
        boxes = [Bbox(0, 0, 10, 10), Bbox(20, 20, 30, 30)]
        dep.detect_trees("scene", "manual", boxes)
        result = dep.detect_trees("scene", "manual", boxes)
        assert result["stored"] == 0
        assert result["total"] == 2

    def test_service_mode_uses_fixture(self, scripted_deployment):
        scene, dep = scripted_deployment
        result = dep.detect_trees("scene", "service")
        assert result["total"] == len(scene.truth_boxes)

    def test_service_mode_filters_by_score(self, tmp_path, pipeline_scene):
        scene, paths = pipeline_scene
        dep = make_deployment(tmp_path, paths)
        dep.ingest_project(str(paths["raster"]), str(paths["geo"]),
                           str(paths["cloud"]), project_id="scene")
        dep.clients.detector = MockDetector(
            [Bbox(0, 0, 5, 5), Bbox(10, 10, 20, 20)], [0.9, 0.1])
        result = dep.detect_trees("scene", "service")
        assert result["total"] == 1  # 0.1 < 0.3 threshold

    def test_modes_are_additive(self, scripted_deployment):
        scene, dep = scripted_deployment
        dep.detect_trees("scene", "service")
        result = dep.detect_trees("scene", "manual", [Bbox(1, 1, 3, 3)])
        assert result["total"] == len(scene.truth_boxes) + 1

    def test_service_without_fixture_is_config_error(self, tmp_path, pipeline_scene):
        scene, paths = pipeline_scene
        dep = make_deployment(tmp_path, paths=None)
        dep.ingest_project(str(paths["raster"]), str(paths["geo"]),
                           str(paths["cloud"]), project_id="p")
        with pytest.raises(ConfigurationError, match="detector"):
            dep.detect_trees("p", "service")

    def test_manual_requires_boxes(self, scripted_deployment):
        scene, dep = scripted_deployment
        with pytest.raises(ValueError):
            dep.detect_trees("scene", "manual")


class TestSegmentation:
    def test_full_chain_recovers_truth(self, scripted_deployment):
        scene, dep = scripted_deployment
        dep.detect_trees("scene", "service")
        result = dep.run_segmentation("scene")
        assert result["trees"] == len(scene.trees)
        assert result["fallbacks"] == 0
        records = dep.store.get_records("scene")
        for rec, truth_mask, truth_f in zip(records, scene.truth_masks,
                                            scene.truth_factors):
            assert mask_iou(rec.contour, truth_mask) > 0.9
            assert rec.factors.height_m == pytest.approx(truth_f.height_m, abs=0.15)
            assert rec.factors.crown_area_m2 == pytest.approx(
                truth_f.crown_area_m2, rel=0.05)
        assert dep.store.get_project("scene")["status"] == "factored"

    def test_rerun_is_idempotent(self, scripted_deployment):
        scene, dep = scripted_deployment
        dep.detect_trees("scene", "service")
        dep.run_segmentation("scene")
        count1 = dep.store.tree_count("scene")
        dep.run_segmentation("scene")
        assert dep.store.tree_count("scene") == count1

    def test_no_detections_is_an_error(self, scripted_deployment):
        scene, dep = scripted_deployment
        with pytest.raises(TreelabError, match="no detections"):
            dep.run_segmentation("scene")

    def test_disjoint_segmenter_gives_flagged_fallbacks(self, scripted_deployment):
        scene, dep = scripted_deployment
        dep.detect_trees("scene", "service")
        far = box_to_mask(Bbox(0, 0, 4, 4), scene.extent_px, scene.extent_px)
        dep.clients.segmenter = MockSegmenter(point_masks=[far], box_masks=[])
        result = dep.run_segmentation("scene")
        records = dep.store.get_records("scene")
        assert sum(r.fallback for r in records) == result["fallbacks"]
        assert result["fallbacks"] >= len(scene.trees) - 1

    def test_segmenter_missing_is_config_error(self, tmp_path, pipeline_scene):
        scene, paths = pipeline_scene
        dep = make_deployment(tmp_path, paths=None)
        dep.ingest_project(str(paths["raster"]), str(paths["geo"]),
                           str(paths["cloud"]), project_id="p")
        dep.detect_trees("p", "manual", [Bbox(0, 0, 10, 10)])
        with pytest.raises(ConfigurationError, match="segmenter"):
            dep.run_segmentation("p")


class TestChat:
    def test_tallest_tree_through_deployment(self, scripted_deployment):
        scene, dep = scripted_deployment
        dep.detect_trees("scene", "service")
        dep.run_segmentation("scene")
        heights = [t.apex_m for t in scene.trees]
        tallest_id = int(np.argmax(heights)) + 1
        dep.clients.llm = ScriptedLlm([
            "Thought: query the tallest tree\n"
            "Action: db_query\n"
            'Action Input: {"columns": ["tree_id", "height_m"], '
            '"order_by": ["height_m", "desc"], "limit": 1}',
            f"Final Result: the tallest tree is {tallest_id}",
        ])
        trace = dep.chat("scene", "find the tallest tree")
        assert trace.status == "final"
        assert str(tallest_id) in trace.final
        assert trace.steps[0].observation.splitlines()[1].startswith(str(tallest_id))

    def test_knowledge_routing_in_chat(self, scripted_deployment):
        scene, dep = scripted_deployment
        dep.kb_ingest("Crown width is the horizontal extent of a tree crown.",
                      doc_id="glossary")
        dep.clients.llm = ScriptedLlm(["Crown width means the horizontal extent."])
        trace = dep.chat("scene",
                         "Crown width is the horizontal extent of a tree crown.")
        assert trace.status == "final"
        assert trace.steps == []
        assert "horizontal extent" in trace.final

    def test_session_persistence(self, scripted_deployment):
        scene, dep = scripted_deployment
        sid = dep.create_session("scene")
        dep.clients.llm = ScriptedLlm(["Final Result: hello"])
        dep.chat("scene", "say hello", session_id=sid)
        messages = dep.store.session_messages(sid)
        assert len(messages) == 1
        assert messages[0]["trace"]["final"] == "hello"


class TestKbPersistence:
    def test_chunks_survive_restart(self, tmp_path, pipeline_scene):
        scene, paths = pipeline_scene
        dep = make_deployment(tmp_path, paths)
        n = dep.kb_ingest("Support height marks the crown base of a tree.", "g")
        assert n == 1
        dep.close()
        dep2 = make_deployment(tmp_path, paths)
        assert len(dep2.kb) == 1
        res = dep2.kb.retrieve("Support height marks the crown base of a tree.", k=1)
        assert res.hits and res.hits[0][1] == pytest.approx(1.0, abs=1e-6)
