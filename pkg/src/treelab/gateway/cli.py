"""Command-line interface.

Deployment commands (serve, ingest, detect, segment, kb, ask) operate on
a workspace configured by ``--config`` / ``TREELAB_*`` environment
variables. File-to-file commands (select, factors, synth) run standalone
without a workspace.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from ..errors import TreelabError
from ..factors import GeoTransform, TreeFactors, compute_factors, label_points, load_xyz
from ..geometry import Bbox, RleMask, mask_area
from ..selection import Selection, merge_candidates, select_masks
from ..store import TreeRecord
from .config import load_config
from .service import Deployment


def _load_boxes(path: str) -> list[Bbox]:
    return [Bbox.from_list(b) for b in json.loads(Path(path).read_text())]


def _deployment(config_path: str | None, workspace: str | None) -> Deployment:
    cfg = load_config(config_path)
    if workspace:
        cfg.workspace = workspace
    return Deployment(cfg)


@click.group()
def main():
    """Tree analysis pipeline: segmentation selection, structural factors,
    tree database, knowledge base, and the analysis agent."""


@main.command()
@click.option("--config", "config_path", default=None, help="JSON config file.")
@click.option("--workspace", default=None, help="Workspace directory override.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--frontend", default=None,
              help="Directory of static frontend files to serve at /ui.")
def serve(config_path, workspace, host, port, frontend):
    """Run the HTTP API server."""
    import uvicorn

    from .api import create_app

    deployment = _deployment(config_path, workspace)
    app = create_app(deployment)
    if frontend:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=frontend, html=True), name="ui")
    uvicorn.run(app, host=host, port=port)


@main.command()
@click.option("--image", required=True, type=click.Path(exists=True))
@click.option("--geo", required=True, type=click.Path(exists=True))
@click.option("--cloud", required=True, type=click.Path(exists=True))
@click.option("--project-id", default=None)
@click.option("--config", "config_path", default=None)
@click.option("--workspace", default=None)
def ingest(image, geo, cloud, project_id, config_path, workspace):
    """Register a project from raster + geotransform + point cloud files."""
    dep = _deployment(config_path, workspace)
    project = dep.ingest_project(image, geo, cloud, project_id)
    click.echo(json.dumps(project, indent=1))


@main.command()
@click.option("--project", "project_id", required=True)
@click.option("--mode", type=click.Choice(["manual", "service"]), default="manual",
              show_default=True)
@click.option("--boxes", "boxes_path", default=None, type=click.Path(exists=True),
              help="JSON list of [x_min, y_min, x_max, y_max] (manual mode).")
@click.option("--config", "config_path", default=None)
@click.option("--workspace", default=None)
def detect(project_id, mode, boxes_path, config_path, workspace):
    """Store tree detections from the detector service or manual boxes."""
    dep = _deployment(config_path, workspace)
    boxes = _load_boxes(boxes_path) if boxes_path else None
    result = dep.detect_trees(project_id, mode, boxes)
    click.echo(json.dumps({"stored": result["stored"], "total": result["total"]}))


@main.command()
@click.option("--project", "project_id", required=True)
@click.option("--config", "config_path", default=None)
@click.option("--workspace", default=None)
def segment(project_id, config_path, workspace):
    """Run segmentation, mask selection, point labeling and factor
    estimation; replaces the project's tree records."""
    dep = _deployment(config_path, workspace)
    result = dep.run_segmentation(project_id)
    click.echo(json.dumps({"trees": result["trees"],
                           "fallbacks": result["fallbacks"]}))


@main.command()
@click.option("--boxes", "boxes_path", required=True, type=click.Path(exists=True))
@click.option("--masks", "masks_path", required=True, type=click.Path(exists=True),
              help='{"point_masks": [...], "box_masks": [...]} or a JSON list.')
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--accept-giou", default=0.0, show_default=True, type=float)
@click.option("--dedup-iou", default=0.95, show_default=True, type=float)
def select(boxes_path, masks_path, out_path, accept_giou, dedup_iou):
    """Choose one mask per detection box via the GIoU-cost assignment."""
    detections = _load_boxes(boxes_path)
    data = json.loads(Path(masks_path).read_text())
    if isinstance(data, list):
        point_masks, box_masks = [], [RleMask.from_json(m) for m in data]
    else:
        point_masks = [RleMask.from_json(m) for m in data.get("point_masks", [])]
        box_masks = [RleMask.from_json(m) for m in data.get("box_masks", [])]
    if not point_masks and not box_masks:
        raise click.ClickException("masks file holds no masks")
    candidates = merge_candidates(point_masks, box_masks, dedup_iou=dedup_iou)
    selection = select_masks(detections, candidates, accept_giou=accept_giou)
    Path(out_path).write_text(json.dumps(selection.to_json(), indent=1))
    click.echo(json.dumps({
        "detections": len(detections),
        "fallbacks": sum(1 for e in selection.entries if e.fallback),
    }))


@main.command()
@click.option("--cloud", "cloud_path", required=True, type=click.Path(exists=True))
@click.option("--selection", "selection_path", required=True, type=click.Path(exists=True))
@click.option("--boxes", "boxes_path", required=True, type=click.Path(exists=True))
@click.option("--geo", "geo_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def factors(cloud_path, selection_path, boxes_path, geo_path, out_path):
    """Label the point cloud with the selected masks and estimate tree
    structural factors; writes one record per tree."""
    cloud = load_xyz(cloud_path)
    selection = Selection.from_json(json.loads(Path(selection_path).read_text()))
    boxes = _load_boxes(boxes_path)
    gt = GeoTransform.from_json(json.loads(Path(geo_path).read_text()))
    labeled = label_points(cloud, selection, boxes, gt)
    records = []
    for entry, det in zip(selection.entries, boxes):
        tree_id = entry.detection_index + 1
        pts = labeled.points_of(tree_id)
        try:
            f = compute_factors(pts, entry.mask, gt)
        except TreelabError:
            f = TreeFactors(0.0, 0.0, 0.0,
                            mask_area(entry.mask) * gt.pixel_size ** 2, len(pts))
        cx, cy = det.centroid()
        records.append(TreeRecord(
            tree_id=tree_id, project_id="cli", pos_col=cx, pos_row=cy,
            bbox=det, contour=entry.mask, factors=f, fallback=entry.fallback,
        ).to_json())
    Path(out_path).write_text(json.dumps(records, indent=1))
    click.echo(json.dumps({"trees": len(records)}))


@main.group()
def kb():
    """Knowledge-base commands."""


@kb.command("ingest")
@click.option("--file", "file_path", required=True, type=click.Path(exists=True))
@click.option("--max-tokens", default=4000, show_default=True, type=int)
@click.option("--doc-id", default=None)
@click.option("--config", "config_path", default=None)
@click.option("--workspace", default=None)
def kb_ingest(file_path, max_tokens, doc_id, config_path, workspace):
    """Chunk, embed and index a text document."""
    dep = _deployment(config_path, workspace)
    text = Path(file_path).read_text()
    n = dep.kb_ingest(text, doc_id or Path(file_path).stem, max_tokens)
    click.echo(json.dumps({"chunks": n}))


@main.command()
@click.argument("instruction")
@click.option("--project", "project_id", required=True)
@click.option("--config", "config_path", default=None)
@click.option("--workspace", default=None)
def ask(instruction, project_id, config_path, workspace):
    """Run one natural-language instruction through knowledge routing and
    the agent loop; prints the full trace."""
    dep = _deployment(config_path, workspace)
    trace = dep.chat(project_id, instruction)
    click.echo(json.dumps(trace.to_json(), indent=1))


@main.command()
@click.option("--seed", required=True, type=int)
@click.option("--trees", "n_trees", required=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--extent-px", default=1200, show_default=True, type=int)
@click.option("--pixel-size", default=0.025, show_default=True, type=float)
@click.option("--density", default=100.0, show_default=True, type=float)
@click.option("--decoys-per-tree", default=2, show_default=True, type=int)
@click.option("--blobs", default=30, show_default=True, type=int)
def synth(seed, n_trees, out_dir, extent_px, pixel_size, density,
          decoys_per_tree, blobs):
    """Generate a synthetic scene (raster, geotransform, cloud, truth) plus
    mock-service fixtures for a fully offline pipeline run."""
    from ..synthetic import generate_scene, make_decoys, write_service_fixtures

    scene = generate_scene(seed, n_trees, extent_px=extent_px,
                           pixel_size=pixel_size, density=density)
    paths = scene.save(out_dir)
    decoys = make_decoys(scene, band=(0.3, 0.7), per_tree=decoys_per_tree,
                         n_random=blobs)
    paths.update(write_service_fixtures(scene, decoys, out_dir))
    click.echo(json.dumps({
        "trees": n_trees,
        "points": len(scene.cloud),
        "candidates": len(decoys),
        "files": {k: str(v) for k, v in sorted(paths.items())},
    }, indent=1))


def run():
    try:
        main(standalone_mode=True)
    except (TreelabError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    run()
