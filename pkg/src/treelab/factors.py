"""Tree structural factors from labeled point clouds.

Selected 2D crown masks are projected onto the 3D point cloud: each point
maps to the pixel containing it (floor of the fractional pixel coordinate,
matching the pixel-area convention used for boxes) and inherits the tree
id of the mask covering that pixel. Points covered by several overlapping
masks go to the tree whose detection-box centroid is nearest in 2D world
distance, ties to the lower tree id.

Factor definitions (the estimation rules; chosen for robustness on
synthetic ground truth, since no single standard definition exists):

* ground elevation: low percentile (default 2nd, linear interpolation) of
  z over the tree's footprint points, so no terrain model is required;
* height: max z minus ground elevation;
* crown area: foreground pixel count of the mask times pixel_size^2;
* crown width: mean of the mask tight-box extents times pixel_size;
* support height (crown base above ground): vertical density histogram of
  z above ground in ``bin_m`` bins starting 1 m above ground; the lower
  edge of the lowest bin holding at least ``density_frac`` of the peak
  bin count. Zero when no bin qualifies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientPointsError, MaskError
from .geometry import Bbox, RleMask, mask_area, mask_bbox, rle_decode
from .selection import Selection


@dataclass(frozen=True)
class GeoTransform:
    """North-up affine map between pixel (col,row) and world (x,y) meters.

    ``origin_x, origin_y`` is the world position of the top-left corner of
    pixel (0,0); world y decreases as rows increase.
    """

    origin_x: float
    origin_y: float
    pixel_size: float

    def __post_init__(self):
        if not self.pixel_size > 0:
            raise ValueError(f"pixel_size must be positive, got {self.pixel_size}")

    def to_json(self) -> dict:
        return {"origin_x": self.origin_x, "origin_y": self.origin_y,
                "pixel_size": self.pixel_size}

    @classmethod
    def from_json(cls, obj: dict) -> "GeoTransform":
        return cls(float(obj["origin_x"]), float(obj["origin_y"]), float(obj["pixel_size"]))


def world_to_pixel(gt: GeoTransform, x: float, y: float) -> tuple[float, float]:
    """World meters to fractional (col, row); floor to get the pixel index."""
    col = (x - gt.origin_x) / gt.pixel_size
    row = (gt.origin_y - y) / gt.pixel_size
    return col, row


def pixel_to_world(gt: GeoTransform, col: int, row: int) -> tuple[float, float]:
    """Center of an integer pixel in world meters."""
    x = gt.origin_x + (col + 0.5) * gt.pixel_size
    y = gt.origin_y - (row + 0.5) * gt.pixel_size
    return x, y


def pixel_edge_to_world(gt: GeoTransform, col: float, row: float) -> tuple[float, float]:
    """Continuous pixel coordinate (edge-based) to world meters."""
    return gt.origin_x + col * gt.pixel_size, gt.origin_y - row * gt.pixel_size


@dataclass
class PointCloud:
    """Points in world meters with an optional per-point tree label
    (0 = unlabeled)."""

    points: np.ndarray  # (n, 3) float
    labels: np.ndarray = field(default=None)  # (n,) int

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.isfinite(self.points).all():
            raise ValueError("point coordinates must be finite")
        if self.labels is None:
            self.labels = np.zeros(len(self.points), dtype=int)
        else:
            self.labels = np.asarray(self.labels, dtype=int)
            if self.labels.shape != (len(self.points),):
                raise ValueError("labels must align with points")

    def __len__(self) -> int:
        return len(self.points)

    def points_of(self, tree_id: int) -> np.ndarray:
        return self.points[self.labels == tree_id]


def load_xyz(path) -> PointCloud:
    """Read 'x y z' text lines; '#' comments and blank lines are ignored."""
    from .errors import IngestError

    pts = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) != 3:
                raise IngestError(f"{path}:{lineno}: expected 'x y z', got {line!r}")
            try:
                pts.append([float(v) for v in parts])
            except ValueError as exc:
                raise IngestError(f"{path}:{lineno}: non-numeric coordinate in {line!r}") from exc
    return PointCloud(np.array(pts, dtype=float).reshape(-1, 3))


def save_xyz(cloud: PointCloud, path, header: str | None = None) -> None:
    with open(path, "w") as f:
        if header:
            f.write(f"# {header}\n")
        for x, y, z in cloud.points:
            f.write(f"{x:.4f} {y:.4f} {z:.4f}\n")


@dataclass(frozen=True)
class TreeFactors:
    height_m: float
    crown_width_m: float
    support_height_m: float
    crown_area_m2: float
    point_count: int

    def __post_init__(self):
        if not (self.height_m + 1e-9 >= self.support_height_m >= 0):
            raise ValueError(
                f"need height >= support >= 0, got "
                f"height={self.height_m}, support={self.support_height_m}"
            )
        if self.crown_area_m2 < 0 or self.crown_width_m < 0:
            raise ValueError("crown area and width must be non-negative")

    def to_json(self) -> dict:
        return {
            "height_m": self.height_m,
            "crown_width_m": self.crown_width_m,
            "support_height_m": self.support_height_m,
            "crown_area_m2": self.crown_area_m2,
            "point_count": self.point_count,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TreeFactors":
        return cls(
            height_m=float(obj["height_m"]),
            crown_width_m=float(obj["crown_width_m"]),
            support_height_m=float(obj["support_height_m"]),
            crown_area_m2=float(obj["crown_area_m2"]),
            point_count=int(obj["point_count"]),
        )


def label_points(
    cloud: PointCloud,
    selection: Selection,
    detections: list[Bbox],
    gt: GeoTransform,
) -> PointCloud:
    """Assign tree ids (detection index + 1) to points covered by the
    selected masks. Order-free: the overlap rule depends only on point
    position, never on processing order.
    """
    if len(selection.entries) != len(detections):
        raise ValueError("selection entries must align with detections")
    if not selection.entries:
        return PointCloud(cloud.points.copy())

    h = selection.entries[0].mask.height
    w = selection.entries[0].mask.width

    # label image; overlaps collected separately and resolved per point
    label_img = np.zeros((h, w), dtype=np.int32)
    overlap = np.zeros((h, w), dtype=bool)
    for entry, _det in zip(selection.entries, detections):
        tree_id = entry.detection_index + 1
        grid = rle_decode(entry.mask)
        overlap |= grid & (label_img > 0)
        label_img[grid & (label_img == 0)] = tree_id
    # per-pixel candidate ids where masks overlap
    overlap_members: dict[tuple[int, int], list[int]] = {}
    if overlap.any():
        for entry in selection.entries:
            tree_id = entry.detection_index + 1
            grid = rle_decode(entry.mask)
            for r, c in zip(*np.nonzero(grid & overlap)):
                overlap_members.setdefault((int(r), int(c)), []).append(tree_id)

    centroids_world = {}
    for entry, det in zip(selection.entries, detections):
        cx, cy = det.centroid()
        centroids_world[entry.detection_index + 1] = pixel_edge_to_world(gt, cx, cy)

    cols = np.floor((cloud.points[:, 0] - gt.origin_x) / gt.pixel_size).astype(int)
    rows = np.floor((gt.origin_y - cloud.points[:, 1]) / gt.pixel_size).astype(int)
    inside = (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)

    labels = np.zeros(len(cloud), dtype=int)
    idx = np.flatnonzero(inside)
    labels[idx] = label_img[rows[idx], cols[idx]]

    if overlap.any():
        contested = idx[overlap[rows[idx], cols[idx]]]
        for i in contested:
            members = overlap_members[(int(rows[i]), int(cols[i]))]
            px, py = cloud.points[i, 0], cloud.points[i, 1]
            labels[i] = min(
                members,
                key=lambda tid: (math.hypot(px - centroids_world[tid][0],
                                            py - centroids_world[tid][1]), tid),
            )
    return PointCloud(cloud.points.copy(), labels)


def compute_factors(
    tree_points: np.ndarray,
    mask: RleMask,
    gt: GeoTransform,
    ground_percentile: float = 2.0,
    bin_m: float = 0.5,
    density_frac: float = 0.1,
) -> TreeFactors:
    """Estimate the four structural factors for one tree.

    ``tree_points`` are the (x, y, z) points labeled to the tree, i.e. the
    points falling inside its footprint; they include ground returns under
    the crown, which anchor the ground-elevation percentile.
    """
    pts = np.asarray(tree_points, dtype=float).reshape(-1, 3)
    if len(pts) < 3:
        raise InsufficientPointsError(
            f"need at least 3 points to estimate factors, got {len(pts)}"
        )
    if mask_area(mask) == 0:
        raise MaskError("factors need a mask with foreground pixels")

    z = pts[:, 2]
    ground_z = float(np.percentile(z, ground_percentile))
    height = float(z.max() - ground_z)

    box = mask_bbox(mask)
    crown_width = ((box.x_max - box.x_min) + (box.y_max - box.y_min)) / 2.0 * gt.pixel_size
    crown_area = mask_area(mask) * gt.pixel_size ** 2

    support = _support_height(z - ground_z, bin_m, density_frac)
    # histogram binning can land at the exact top of the profile; never
    # report a crown base above the tree top
    support = min(support, height)

    return TreeFactors(
        height_m=height,
        crown_width_m=float(crown_width),
        support_height_m=float(support),
        crown_area_m2=float(crown_area),
        point_count=len(pts),
    )


_SUPPORT_MIN_HEIGHT = 1.0  # ignore returns in the lowest meter above ground


def _support_height(rel_z: np.ndarray, bin_m: float, density_frac: float) -> float:
    top = float(rel_z.max())
    if top <= _SUPPORT_MIN_HEIGHT:
        return 0.0
    edges = np.arange(_SUPPORT_MIN_HEIGHT, top + bin_m, bin_m)
    counts, _ = np.histogram(rel_z, bins=edges)
    if counts.size == 0 or counts.max() == 0:
        return 0.0
    threshold = density_frac * counts.max()
    qualifying = np.flatnonzero(counts >= threshold)
    if qualifying.size == 0:
        return 0.0
    return float(edges[qualifying[0]])
