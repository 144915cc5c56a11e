"""Best-mask selection: one segmentation mask per detected tree.

Detector boxes (set A) are matched against redundant candidate masks
(set B) by solving a minimum-cost bipartite assignment where the cost of
pairing detection i with candidate j is ``1 - giou(box_i, bbox(mask_j))``.
The 1-GIoU form keeps costs in [0, 2) and turns "maximize overlap" into a
minimization. Candidates typically outnumber detections, so the
rectangular relaxation is solved: every detection is matched once,
surplus candidates stay unmatched.

Matching compares the detection box against the candidate mask's tight
bounding box (box-vs-box overlap), which applies the GIoU definition
directly to two boxes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AssignmentError, MaskError
from .geometry import Bbox, RleMask, box_to_mask, giou, mask_area, mask_bbox, mask_iou

POINT_SOURCE = "point-prompt"
BOX_SOURCE = "box-prompt"


@dataclass(frozen=True)
class PromptSet:
    """Point and box prompts fed to the segmentation service."""

    points: tuple[tuple[float, float], ...]
    boxes: tuple[Bbox, ...] = ()


@dataclass
class CandidateSet:
    """Candidate masks sharing one image extent, tagged by prompt source."""

    height: int
    width: int
    masks: list[RleMask] = field(default_factory=list)
    sources: list[str] = field(default_factory=list)
    quality: list[float | None] = field(default_factory=list)

    def __post_init__(self):
        if len(self.sources) != len(self.masks) or len(self.quality) != len(self.masks):
            raise MaskError("masks, sources and quality must have equal length")
        for m in self.masks:
            if (m.height, m.width) != (self.height, self.width):
                raise MaskError(
                    f"candidate mask is {m.height}x{m.width}, "
                    f"expected {self.height}x{self.width}"
                )

    def __len__(self) -> int:
        return len(self.masks)


@dataclass(frozen=True)
class CostMatrix:
    """Detections (rows) x candidates (columns) matching costs."""

    entries: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.entries, dtype=float)
        if arr.ndim != 2 or arr.size == 0:
            raise AssignmentError(f"cost matrix must be 2-D and non-empty, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise AssignmentError("cost matrix contains non-finite entries")
        object.__setattr__(self, "entries", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


@dataclass(frozen=True)
class Assignment:
    """A matching: each detection and candidate used at most once."""

    pairs: tuple[tuple[int, int], ...]
    total_cost: float

    def __post_init__(self):
        rows = [r for r, _ in self.pairs]
        cols = [c for _, c in self.pairs]
        if len(set(rows)) != len(rows) or len(set(cols)) != len(cols):
            raise AssignmentError("assignment repeats a row or column index")


@dataclass(frozen=True)
class SelectedMask:
    detection_index: int
    mask: RleMask
    giou: float
    fallback: bool


@dataclass(frozen=True)
class Selection:
    """One chosen mask per detection, in detection order."""

    entries: tuple[SelectedMask, ...]

    def to_json(self) -> list[dict]:
        return [
            {
                "detection_index": e.detection_index,
                "mask": e.mask.to_json(),
                "giou": e.giou,
                "fallback": e.fallback,
            }
            for e in self.entries
        ]

    @classmethod
    def from_json(cls, items: list[dict]) -> "Selection":
        return cls(tuple(
            SelectedMask(
                detection_index=int(item["detection_index"]),
                mask=RleMask.from_json(item["mask"]),
                giou=float(item["giou"]),
                fallback=bool(item["fallback"]),
            )
            for item in items
        ))


def generate_grid_prompts(image_width: int, image_height: int, grid_dim: int = 48) -> PromptSet:
    """Regular grid of ``grid_dim**2`` point prompts at cell centers.

    Point (i, j) sits at ``((i+0.5)*W/grid_dim, (j+0.5)*H/grid_dim)``.
    """
    if grid_dim < 1:
        raise ValueError(f"grid_dim must be >= 1, got {grid_dim}")
    if image_width <= 0 or image_height <= 0:
        raise ValueError("image extent must be positive")
    xs = (np.arange(grid_dim) + 0.5) * (image_width / grid_dim)
    ys = (np.arange(grid_dim) + 0.5) * (image_height / grid_dim)
    points = tuple((float(x), float(y)) for y in ys for x in xs)
    return PromptSet(points=points)


def merge_candidates(
    point_masks: list[RleMask],
    box_masks: list[RleMask],
    dedup_iou: float = 0.95,
    point_quality: list[float] | None = None,
    box_quality: list[float] | None = None,
    height: int | None = None,
    width: int | None = None,
) -> CandidateSet:
    """Union both mask pools, drop empties, and deduplicate near-identical
    masks (pairwise mask IoU above ``dedup_iou`` keeps one representative).

    Priority within a duplicate group: highest quality score first, then
    box-prompt masks before point-prompt masks, then submission order.
    Image dimensions are inferred from the masks unless given explicitly
    (required when both pools are empty).
    """
    pool: list[tuple[RleMask, str, float | None, int]] = []
    for idx, m in enumerate(box_masks):
        q = box_quality[idx] if box_quality is not None else None
        pool.append((m, BOX_SOURCE, q, idx))
    offset = len(box_masks)
    for idx, m in enumerate(point_masks):
        q = point_quality[idx] if point_quality is not None else None
        pool.append((m, POINT_SOURCE, q, offset + idx))

    if pool:
        h, w = pool[0][0].height, pool[0][0].width
    elif height is not None and width is not None:
        h, w = height, width
    else:
        raise MaskError("empty candidate pools need explicit image dimensions")
    for m, _, _, _ in pool:
        if (m.height, m.width) != (h, w):
            raise MaskError(f"mask dimensions {m.height}x{m.width} do not match {h}x{w}")

    pool = [entry for entry in pool if mask_area(entry[0]) > 0]
    # box-prompt entries already precede point-prompt ones; sort is stable
    pool.sort(key=lambda e: -(e[2] if e[2] is not None else 0.0))

    kept: list[tuple[RleMask, str, float | None]] = []
    for m, source, q, _ in pool:
        if any(mask_iou(m, k) > dedup_iou for k, _, _ in kept):
            continue
        kept.append((m, source, q))

    return CandidateSet(
        height=h,
        width=w,
        masks=[m for m, _, _ in kept],
        sources=[s for _, s, _ in kept],
        quality=[q for _, _, q in kept],
    )


def build_cost_matrix(detections: list[Bbox], candidates: CandidateSet) -> CostMatrix:
    """``c_ij = 1 - giou(detection_i, bbox(candidate_j))``, entries in [0, 2)."""
    if not detections or len(candidates) == 0:
        raise AssignmentError("cost matrix needs at least one detection and one candidate")
    cand_boxes = [mask_bbox(m) for m in candidates.masks]
    entries = np.empty((len(detections), len(cand_boxes)))
    for i, det in enumerate(detections):
        for j, cb in enumerate(cand_boxes):
            entries[i, j] = 1.0 - giou(det, cb)
    return CostMatrix(entries)


def _augmenting_path_solve(cost: np.ndarray) -> list[tuple[int, int]]:
    """Exact assignment for an n x m matrix with n <= m via shortest
    augmenting paths with potentials. Column scans run in ascending index
    order with strict improvement, so equal-cost optima resolve to the
    lowest column index deterministically.
    """
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    match = np.zeros(m + 1, dtype=int)  # column j -> row (1-based), 0 = free
    way = np.zeros(m + 1, dtype=int)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used[1:]
            reduced = cost[i0 - 1, :] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[np.flatnonzero(better) + 1] = j0
            candidates = np.where(free, minv[1:], np.inf)
            j0 = int(np.argmin(candidates)) + 1
            delta = candidates[j0 - 1]
            u[match[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    return sorted((int(match[j]) - 1, j - 1) for j in range(1, m + 1) if match[j] != 0)


def solve_assignment(costs: CostMatrix) -> Assignment:
    """Minimum-total-cost matching of size ``min(rows, cols)``.

    Rectangular matrices are supported; when rows <= cols every row is
    matched. Results are deterministic for a given matrix.
    """
    arr = costs.entries
    n, m = arr.shape
    if n <= m:
        pairs = _augmenting_path_solve(arr)
    else:
        pairs = sorted((r, c) for c, r in _augmenting_path_solve(arr.T))
    total = float(sum(arr[r, c] for r, c in pairs))
    return Assignment(pairs=tuple(pairs), total_cost=total)


def select_masks(
    detections: list[Bbox],
    candidates: CandidateSet,
    accept_giou: float = 0.0,
) -> Selection:
    """Choose one mask per detection via the GIoU-cost assignment.

    A matched candidate is accepted when its GIoU with the detection box
    exceeds ``accept_giou``; otherwise (and for unmatched detections, e.g.
    when detections outnumber candidates) the rectangle fill of the
    detection box is used and flagged as a fallback. The recorded ``giou``
    is always between the detection box and the chosen mask's tight box.
    """
    if not detections:
        raise AssignmentError("select_masks needs at least one detection")

    matched: dict[int, int] = {}
    if len(candidates) > 0:
        assignment = solve_assignment(build_cost_matrix(detections, candidates))
        matched = dict(assignment.pairs)

    entries: list[SelectedMask] = []
    for i, det in enumerate(detections):
        chosen: RleMask | None = None
        j = matched.get(i)
        if j is not None:
            g = giou(det, mask_bbox(candidates.masks[j]))
            if g > accept_giou:
                chosen = candidates.masks[j]
                entries.append(SelectedMask(i, chosen, g, fallback=False))
                continue
        rect = box_to_mask(det, candidates.height, candidates.width)
        g = giou(det, mask_bbox(rect)) if mask_area(rect) > 0 else -1.0
        entries.append(SelectedMask(i, rect, g, fallback=True))
    return Selection(entries=tuple(entries))
