import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from treelab.gateway.cli import main
from treelab.geometry import RleMask, mask_iou
from treelab.selection import Selection


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    result = CliRunner().invoke(main, [
        "synth", "--seed", "9", "--trees", "3", "--out", str(out),
        "--extent-px", "400", "--blobs", "4",
    ])
    assert result.exit_code == 0, result.output
    return out, json.loads(result.output)


def write_config(tmp_path, synth_out) -> str:
    cfg = {
        "offline": True,
        "workspace": str(tmp_path / "ws"),
        "detector_fixture": str(synth_out / "detector_fixture.json"),
        "segmenter_fixture": str(synth_out / "segmenter_fixture.json"),
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return str(path)


class TestSynthCommand:
    def test_writes_expected_files(self, synth_dir):
        out, summary = synth_dir
        for name in ("raster.png", "geo.json", "cloud.xyz", "boxes.json",
                     "truth_masks.json", "truth_factors.json",
                     "detector_fixture.json", "segmenter_fixture.json"):
            assert (out / name).exists(), name
        assert summary["trees"] == 3
        assert summary["candidates"] == 3 + 6 + 4  # truth + 2/tree + blobs


class TestSelectCommand:
    def test_select_recovers_truth(self, runner, synth_dir, tmp_path):
        out, _ = synth_dir
        sel_path = tmp_path / "selection.json"
        result = runner.invoke(main, [
            "select",
            "--boxes", str(out / "boxes.json"),
            "--masks", str(out / "segmenter_fixture.json"),
            "--out", str(sel_path),
        ])
        assert result.exit_code == 0, result.output
        assert json.loads(result.output)["fallbacks"] == 0
        selection = Selection.from_json(json.loads(sel_path.read_text()))
        truth = [RleMask.from_json(m)
                 for m in json.loads((out / "truth_masks.json").read_text())]
        for entry, t in zip(selection.entries, truth):
            assert mask_iou(entry.mask, t) > 0.9

    def test_plain_mask_list_accepted(self, runner, synth_dir, tmp_path):
        out, _ = synth_dir
        masks = json.loads((out / "truth_masks.json").read_text())
        masks_path = tmp_path / "masks.json"
        masks_path.write_text(json.dumps(masks))
        sel_path = tmp_path / "sel.json"
        result = runner.invoke(main, [
            "select", "--boxes", str(out / "boxes.json"),
            "--masks", str(masks_path), "--out", str(sel_path),
        ])
        assert result.exit_code == 0, result.output

    def test_empty_masks_rejected(self, runner, synth_dir, tmp_path):
        out, _ = synth_dir
        empty = tmp_path / "empty.json"
        empty.write_text("[]")
        result = runner.invoke(main, [
            "select", "--boxes", str(out / "boxes.json"),
            "--masks", str(empty), "--out", str(tmp_path / "x.json"),
        ])
        assert result.exit_code != 0
        assert "no masks" in result.output


class TestFactorsCommand:
    def test_factors_from_files(self, runner, synth_dir, tmp_path):
        out, _ = synth_dir
        sel_path = tmp_path / "selection.json"
        runner.invoke(main, [
            "select", "--boxes", str(out / "boxes.json"),
            "--masks", str(out / "segmenter_fixture.json"), "--out", str(sel_path),
        ])
        trees_path = tmp_path / "trees.json"
        result = runner.invoke(main, [
            "factors",
            "--cloud", str(out / "cloud.xyz"),
            "--selection", str(sel_path),
            "--boxes", str(out / "boxes.json"),
            "--geo", str(out / "geo.json"),
            "--out", str(trees_path),
        ])
        assert result.exit_code == 0, result.output
        records = json.loads(trees_path.read_text())
        truth = json.loads((out / "truth_factors.json").read_text())
        assert len(records) == len(truth) == 3
        for rec, t in zip(records, truth):
            assert rec["factors"]["height_m"] == pytest.approx(
                t["height_m"], abs=0.15)
            assert rec["factors"]["crown_area_m2"] == pytest.approx(
                t["crown_area_m2"], rel=0.05)


class TestWorkspaceCommands:
    def test_ingest_detect_segment_ask(self, runner, synth_dir, tmp_path):
        out, _ = synth_dir
        cfg = write_config(tmp_path, out)

        result = runner.invoke(main, [
            "ingest", "--image", str(out / "raster.png"),
            "--geo", str(out / "geo.json"), "--cloud", str(out / "cloud.xyz"),
            "--project-id", "demo", "--config", cfg,
        ])
        assert result.exit_code == 0, result.output
        assert json.loads(result.output)["status"] == "ingested"

        result = runner.invoke(main, [
            "detect", "--project", "demo", "--mode", "service", "--config", cfg,
        ])
        assert result.exit_code == 0, result.output
        assert json.loads(result.output)["total"] == 3

        result = runner.invoke(main, ["segment", "--project", "demo",
                                      "--config", cfg])
        assert result.exit_code == 0, result.output
        assert json.loads(result.output) == {"trees": 3, "fallbacks": 0}

        # scripted LLM for ask
        script = tmp_path / "script.json"
        script.write_text(json.dumps(["Final Result: analysis done"]))
        cfg_data = json.loads(Path(cfg).read_text())
        cfg_data["llm_script"] = str(script)
        Path(cfg).write_text(json.dumps(cfg_data))

        result = runner.invoke(main, ["ask", "how many trees?",
                                      "--project", "demo", "--config", cfg])
        assert result.exit_code == 0, result.output
        trace = json.loads(result.output)
        assert trace["final"] == "analysis done"

    def test_kb_ingest_command(self, runner, synth_dir, tmp_path):
        out, _ = synth_dir
        cfg = write_config(tmp_path, out)
        doc = tmp_path / "glossary.txt"
        doc.write_text("Crown width is the horizontal extent of the crown.")
        result = runner.invoke(main, ["kb", "ingest", "--file", str(doc),
                                      "--config", cfg])
        assert result.exit_code == 0, result.output
        assert json.loads(result.output) == {"chunks": 1}

    def test_manual_detect_from_boxes_file(self, runner, synth_dir, tmp_path):
        out, _ = synth_dir
        cfg = write_config(tmp_path, out)
        runner.invoke(main, [
            "ingest", "--image", str(out / "raster.png"),
            "--geo", str(out / "geo.json"), "--cloud", str(out / "cloud.xyz"),
            "--project-id", "demo", "--config", cfg,
        ])
        boxes = tmp_path / "boxes.json"
        boxes.write_text(json.dumps([[0, 0, 10, 10]]))
        result = runner.invoke(main, [
            "detect", "--project", "demo", "--boxes", str(boxes), "--config", cfg,
        ])
        assert result.exit_code == 0, result.output
        assert json.loads(result.output)["stored"] == 1

    def test_missing_file_is_a_clean_error(self, runner):
        result = runner.invoke(main, [
            "ingest", "--image", "/nope.png", "--geo", "/nope.json",
            "--cloud", "/nope.xyz",
        ])
        assert result.exit_code != 0
