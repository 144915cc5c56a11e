"""Deterministic synthetic forest scenes with analytic ground truth.

Each tree is a cone crown over flat ground at z=0: the truth mask is the
disk of the crown radius, the apex sits at the tree center, and the cone
surface spans crown base to apex. Defaults mirror the target survey data:
0.025 m pixels and 100 points/m^2.

Point sampling: crown surfaces are sampled at the full target density
over their disks (plus one guaranteed apex return); ground returns run at
the full density outside crowns and at a quarter density underneath them
(canopy gap returns — these anchor the ground-percentile estimate). All
z values carry additive Gaussian noise (sigma 0.03 m), which keeps the
scene-average density within a few percent of the target.

Everything derives from one seeded generator: the same seed reproduces
byte-identical output files.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import PlacementError
from .factors import GeoTransform, PointCloud, TreeFactors, save_xyz
from .geometry import Bbox, RleMask, mask_bbox, mask_iou, rle_decode, rle_encode

Z_NOISE_SIGMA = 0.03
UNDER_CROWN_GROUND_FRACTION = 0.25
PLACEMENT_MARGIN_M = 0.3


@dataclass(frozen=True)
class SyntheticTree:
    center_x: float  # world meters
    center_y: float
    crown_radius_m: float
    apex_m: float
    base_m: float


@dataclass
class SyntheticScene:
    seed: int
    extent_px: int
    pixel_size: float
    density: float
    gt: GeoTransform
    trees: list[SyntheticTree]
    cloud: PointCloud
    raster: np.ndarray  # (H, W, 3) uint8
    truth_masks: list[RleMask]
    truth_boxes: list[Bbox]
    truth_factors: list[TreeFactors]

    @property
    def extent_m(self) -> float:
        return self.extent_px * self.pixel_size

    def save(self, directory: str | Path) -> dict[str, Path]:
        """Write the scene to a directory; fixed file set, byte-stable."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "raster": out / "raster.png",
            "geo": out / "geo.json",
            "cloud": out / "cloud.xyz",
            "boxes": out / "boxes.json",
            "masks": out / "truth_masks.json",
            "factors": out / "truth_factors.json",
        }
        Image.fromarray(self.raster).save(paths["raster"], format="PNG")
        paths["geo"].write_text(json.dumps(self.gt.to_json(), sort_keys=True, indent=1))
        save_xyz(self.cloud, paths["cloud"], header=f"synthetic scene seed={self.seed}")
        paths["boxes"].write_text(json.dumps(
            [b.as_list() for b in self.truth_boxes], indent=1))
        paths["masks"].write_text(json.dumps(
            [m.to_json(compact=True) for m in self.truth_masks], indent=1))
        paths["factors"].write_text(json.dumps(
            [f.to_json() for f in self.truth_factors], sort_keys=True, indent=1))
        return paths


def _disk_mask(extent_px: int, gt: GeoTransform, cx: float, cy: float,
               radius_m: float) -> RleMask:
    """Disk of pixels whose centers fall within the crown radius."""
    rows = np.arange(extent_px)
    cols = np.arange(extent_px)
    # pixel centers in world coordinates
    px = gt.origin_x + (cols + 0.5) * gt.pixel_size
    py = gt.origin_y - (rows + 0.5) * gt.pixel_size
    dx2 = (px[None, :] - cx) ** 2
    dy2 = (py[:, None] - cy) ** 2
    return rle_encode(dx2 + dy2 <= radius_m ** 2)


def _place_trees(rng, n_trees, extent_m, radius_range, apex_range, base_range):
    trees: list[SyntheticTree] = []
    attempts = 0
    max_attempts = 4000 * n_trees
    while len(trees) < n_trees:
        if attempts >= max_attempts:
            raise PlacementError(
                f"placed only {len(trees)}/{n_trees} trees in a "
                f"{extent_m:.1f} m extent without overlap; use a larger extent "
                f"or fewer trees")
        attempts += 1
        r = float(rng.uniform(*radius_range))
        margin = r + 0.5
        cx = float(rng.uniform(margin, extent_m - margin))
        cy = float(rng.uniform(margin, extent_m - margin))
        if any(math.hypot(cx - t.center_x, cy - t.center_y)
               < r + t.crown_radius_m + PLACEMENT_MARGIN_M for t in trees):
            continue
        apex = float(rng.uniform(*apex_range))
        base = float(rng.uniform(*base_range))
        base = min(base, apex - 3.0)  # keep a usable crown depth
        trees.append(SyntheticTree(cx, cy, r, apex, base))
    return trees


def _sample_points(rng, trees, extent_m, density):
    pts: list[np.ndarray] = []
    # ground: full density outside crowns, quarter density underneath
    n_ground = rng.poisson(density * extent_m * extent_m)
    ground = np.column_stack([
        rng.uniform(0, extent_m, n_ground),
        rng.uniform(0, extent_m, n_ground),
        np.zeros(n_ground),
    ])
    under = np.zeros(len(ground), dtype=bool)
    for t in trees:
        d2 = (ground[:, 0] - t.center_x) ** 2 + (ground[:, 1] - t.center_y) ** 2
        under |= d2 <= t.crown_radius_m ** 2
    keep = ~under | (rng.random(len(ground)) < UNDER_CROWN_GROUND_FRACTION)
    pts.append(ground[keep])

    for t in trees:
        area = math.pi * t.crown_radius_m ** 2
        n = rng.poisson(density * area)
        rho = t.crown_radius_m * np.sqrt(rng.random(n))
        theta = rng.uniform(0, 2 * math.pi, n)
        z = t.apex_m - (t.apex_m - t.base_m) * rho / t.crown_radius_m
        crown = np.column_stack([
            t.center_x + rho * np.cos(theta),
            t.center_y + rho * np.sin(theta),
            z,
        ])
        apex_pt = np.array([[t.center_x, t.center_y, t.apex_m]])
        pts.append(np.vstack([crown, apex_pt]))

    all_pts = np.vstack(pts)
    all_pts[:, 2] += rng.normal(0.0, Z_NOISE_SIGMA, len(all_pts))
    return all_pts


def _render_raster(extent_px, gt, trees, masks) -> np.ndarray:
    img = np.empty((extent_px, extent_px, 3), dtype=np.uint8)
    img[:, :] = (128, 108, 84)  # bare ground
    for t, m in zip(trees, masks):
        shade = int(np.clip(70 + 8 * (t.apex_m - 8.0), 60, 130))
        img[rle_decode(m)] = (34, shade, 30)
    return img


def generate_scene(
    seed: int,
    n_trees: int,
    extent_px: int = 1200,
    pixel_size: float = 0.025,
    density: float = 100.0,
    radius_range: tuple[float, float] = (1.0, 2.2),
    apex_range: tuple[float, float] = (8.0, 14.0),
    base_range: tuple[float, float] = (2.0, 4.5),
) -> SyntheticScene:
    """Build a scene with ``n_trees`` non-overlapping cone crowns.

    Truth factors are analytic: height = apex, support height = crown
    base, crown width = crown diameter, crown area = pi * radius^2.
    """
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    rng = np.random.default_rng(seed)
    extent_m = extent_px * pixel_size
    gt = GeoTransform(origin_x=0.0, origin_y=extent_m, pixel_size=pixel_size)

    trees = _place_trees(rng, n_trees, extent_m, radius_range, apex_range, base_range)
    masks = [_disk_mask(extent_px, gt, t.center_x, t.center_y, t.crown_radius_m)
             for t in trees]
    boxes = [mask_bbox(m) for m in masks]
    points = _sample_points(rng, trees, extent_m, density)

    factors = []
    for t, m in zip(trees, masks):
        crown_pts = int(round(density * math.pi * t.crown_radius_m ** 2))
        factors.append(TreeFactors(
            height_m=t.apex_m,
            crown_width_m=2.0 * t.crown_radius_m,
            support_height_m=t.base_m,
            crown_area_m2=math.pi * t.crown_radius_m ** 2,
            point_count=crown_pts,
        ))

    return SyntheticScene(
        seed=seed,
        extent_px=extent_px,
        pixel_size=pixel_size,
        density=density,
        gt=gt,
        trees=trees,
        cloud=PointCloud(points),
        raster=_render_raster(extent_px, gt, trees, masks),
        truth_masks=masks,
        truth_boxes=boxes,
        truth_factors=factors,
    )


def _shifted_disk(scene: SyntheticScene, tree: SyntheticTree, truth: RleMask,
                  band: tuple[float, float], direction: float) -> RleMask:
    """Truth disk shifted until its IoU with the truth mask lands in the
    requested band; bisection on the shift distance."""
    lo_d, hi_d = 0.0, 2.0 * tree.crown_radius_m  # IoU 1 .. 0
    shift = tree.crown_radius_m * 0.5
    for _ in range(40):
        cand = _disk_mask(scene.extent_px, scene.gt,
                          tree.center_x + shift * math.cos(direction),
                          tree.center_y + shift * math.sin(direction),
                          tree.crown_radius_m)
        got = mask_iou(cand, truth)
        if band[0] < got < band[1]:
            return cand
        if got <= band[0]:  # shifted too far
            hi_d = shift
        else:
            lo_d = shift
        shift = (lo_d + hi_d) / 2.0
    raise PlacementError("could not fit a shifted decoy inside the IoU band")


def _scaled_disk(scene: SyntheticScene, tree: SyntheticTree, truth: RleMask,
                 band: tuple[float, float]) -> RleMask:
    """Concentric disk scaled so the IoU (= radius ratio squared for
    concentric disks) sits mid-band."""
    lo_s, hi_s = 0.05, 1.0
    scale = math.sqrt((band[0] + band[1]) / 2.0)
    for _ in range(40):
        cand = _disk_mask(scene.extent_px, scene.gt, tree.center_x, tree.center_y,
                          tree.crown_radius_m * scale)
        got = mask_iou(cand, truth)
        if band[0] < got < band[1]:
            return cand
        if got <= band[0]:
            lo_s = scale
        else:
            hi_s = scale
        scale = (lo_s + hi_s) / 2.0
    raise PlacementError("could not fit a scaled decoy inside the IoU band")


def make_decoys(
    scene: SyntheticScene,
    band: tuple[float, float] | None = (0.3, 0.7),
    per_tree: int = 2,
    n_random: int = 0,
    seed: int | None = None,
) -> list[RleMask]:
    """Candidate pool for the mock segmenter: every truth mask, plus
    ``per_tree`` jittered copies whose IoU with their truth mask lies
    strictly inside ``band``, plus ``n_random`` blob masks."""
    rng = np.random.default_rng(scene.seed + 1 if seed is None else seed)
    candidates: list[RleMask] = list(scene.truth_masks)
    if band is not None and per_tree > 0:
        for tree, truth in zip(scene.trees, scene.truth_masks):
            for j in range(per_tree):
                if j % 2 == 0:
                    direction = float(rng.uniform(0, 2 * math.pi))
                    candidates.append(_shifted_disk(scene, tree, truth, band, direction))
                else:
                    candidates.append(_scaled_disk(scene, tree, truth, band))
    extent = scene.extent_m
    for _ in range(n_random):
        r = float(rng.uniform(0.4, 1.8))
        cx = float(rng.uniform(r, extent - r))
        cy = float(rng.uniform(r, extent - r))
        candidates.append(_disk_mask(scene.extent_px, scene.gt, cx, cy, r))
    return candidates


def write_service_fixtures(scene: SyntheticScene, decoys: list[RleMask],
                           directory: str | Path) -> dict[str, Path]:
    """Fixture files for the offline mock services: the detector returns the
    truth boxes, the segmenter returns truth masks for box prompts and the
    decoy pool for point prompts."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    detector = out / "detector_fixture.json"
    segmenter = out / "segmenter_fixture.json"
    detector.write_text(json.dumps({
        "boxes": [b.as_list() for b in scene.truth_boxes],
        "scores": [1.0] * len(scene.truth_boxes),
    }, indent=1))
    point_pool = decoys[len(scene.truth_masks):]
    segmenter.write_text(json.dumps({
        "box_masks": [m.to_json(compact=True) for m in scene.truth_masks],
        "point_masks": [m.to_json(compact=True) for m in point_pool],
    }, indent=1))
    return {"detector": detector, "segmenter": segmenter}
