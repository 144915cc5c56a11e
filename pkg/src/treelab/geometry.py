"""Pixel-space geometry: boxes, binary masks, IoU/GIoU and the COCO RLE codec.

Conventions used throughout the package:

* Boxes live in continuous pixel-edge coordinates. Pixel (row r, col c)
  spans ``[c, c+1) x [r, r+1)``; x is the column axis, y the row axis,
  origin at the top-left image corner. A mask-derived box around the
  single pixel (r, c) is therefore ``(c, r, c+1, r+1)``.
* Binary masks are stored run-length encoded over the column-major pixel
  scan (all rows of column 0, then column 1, ...), counts alternating
  background/foreground with background first. This is the MS COCO
  convention; the scan order is adopted from that standard since no other
  ordering is in wider use. The compact string form is the COCO 6-bit
  character encoding, byte-compatible with the reference implementation.
* Pixel grids are boolean numpy arrays of shape ``(height, width)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyMaskError, GeometryError, MaskError


@dataclass(frozen=True)
class Bbox:
    """Axis-aligned box in pixel-edge coordinates."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x_min, self.y_min, self.x_max, self.y_max)):
            raise GeometryError(f"box coordinates must be finite: {self}")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise GeometryError(
                f"malformed box: min corner exceeds max corner "
                f"({self.x_min},{self.y_min},{self.x_max},{self.y_max})"
            )

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def centroid(self) -> tuple[float, float]:
        return (self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]

    @classmethod
    def from_list(cls, values) -> "Bbox":
        if len(values) != 4:
            raise GeometryError(f"box needs 4 coordinates, got {len(values)}")
        return cls(*(float(v) for v in values))


def _intersection_area(p: Bbox, g: Bbox) -> float:
    w = min(p.x_max, g.x_max) - max(p.x_min, g.x_min)
    h = min(p.y_max, g.y_max) - max(p.y_min, g.y_min)
    if w <= 0.0 or h <= 0.0:
        return 0.0
    return w * h


def iou(p: Bbox, g: Bbox) -> float:
    """Intersection over union of two boxes, in [0, 1].

    Returns 0 when the union has zero area (two degenerate boxes).
    """
    inter = _intersection_area(p, g)
    union = p.area + g.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def giou(p: Bbox, g: Bbox) -> float:
    """Generalized IoU: ``iou - (A_c - A_u) / A_c`` with A_c the area of the
    smallest axis-aligned box enclosing both, A_u the union area.

    Range (-1, 1] for boxes of positive area; symmetric in its arguments.
    By convention returns 0 when both boxes degenerate to the same point
    (A_c = 0), avoiding 0/0.
    """
    enclosing_w = max(p.x_max, g.x_max) - min(p.x_min, g.x_min)
    enclosing_h = max(p.y_max, g.y_max) - min(p.y_min, g.y_min)
    a_c = enclosing_w * enclosing_h
    if a_c <= 0.0:
        return 0.0
    inter = _intersection_area(p, g)
    a_u = p.area + g.area - inter
    i = (inter / a_u) if a_u > 0.0 else 0.0
    return i - (a_c - a_u) / a_c


def _canonical_counts(counts) -> tuple[int, ...]:
    """Merge adjacent same-class runs and drop zero-length runs so equality
    between masks is structural. The leading background count may be 0."""
    merged: list[tuple[bool, int]] = []  # (is_foreground, length)
    val = False
    for c in counts:
        c = int(c)
        if c < 0:
            raise MaskError(f"negative run length {c}")
        if c > 0:
            if merged and merged[-1][0] == val:
                merged[-1] = (val, merged[-1][1] + c)
            else:
                merged.append((val, c))
        val = not val
    out: list[int] = []
    if merged and merged[0][0]:  # first run is foreground: leading zero
        out.append(0)
    out.extend(c for _, c in merged)
    if not out:  # nothing but zero-length runs; fails the sum check upstream
        out = [0]
    return tuple(out)


@dataclass(frozen=True)
class RleMask:
    """Run-length encoded binary mask over the column-major pixel scan.

    ``counts`` alternate background/foreground starting with background
    (which may be 0). Stored canonically: no zero-length interior runs,
    adjacent same-class runs merged.
    """

    height: int
    width: int
    counts: tuple[int, ...]

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise MaskError(f"mask dimensions must be positive, got {self.height}x{self.width}")
        canonical = _canonical_counts(self.counts)
        object.__setattr__(self, "counts", canonical)
        if sum(self.counts) != self.height * self.width:
            raise MaskError(
                f"run lengths sum to {sum(self.counts)}, expected "
                f"{self.height * self.width} for a {self.height}x{self.width} mask"
            )

    def to_json(self, compact: bool = False) -> dict:
        """Interchange form: {"size": [h, w], "counts": [...] | "<string>"}."""
        if compact:
            return {"size": [self.height, self.width], "counts": rle_to_compact_string(self)}
        return {"size": [self.height, self.width], "counts": list(self.counts)}

    @classmethod
    def from_json(cls, obj: dict) -> "RleMask":
        try:
            h, w = obj["size"]
            counts = obj["counts"]
        except (KeyError, TypeError, ValueError) as exc:
            raise MaskError(f"malformed mask object: {obj!r}") from exc
        if isinstance(counts, str):
            return rle_from_compact_string(counts, int(h), int(w))
        return cls(int(h), int(w), tuple(int(c) for c in counts))


def rle_encode(grid: np.ndarray) -> RleMask:
    """Encode a boolean (height, width) grid; column-major scan order."""
    arr = np.asarray(grid, dtype=bool)
    if arr.ndim != 2 or arr.size == 0:
        raise MaskError(f"grid must be a non-empty 2-D array, got shape {arr.shape}")
    h, w = arr.shape
    flat = arr.flatten(order="F")
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(starts).tolist()
    if flat[0]:
        counts = [0] + counts
    return RleMask(h, w, tuple(counts))


def rle_decode(mask: RleMask) -> np.ndarray:
    """Inverse of :func:`rle_encode`; returns a boolean (height, width) grid."""
    total = mask.height * mask.width
    flat = np.zeros(total, dtype=bool)
    pos = 0
    for i, c in enumerate(mask.counts):
        if i % 2 == 1:
            flat[pos:pos + c] = True
        pos += c
    return flat.reshape((mask.height, mask.width), order="F")


# COCO compact counts encoding: 6-bit groups, 5 value bits plus a
# continuation flag, serialized as chr(group + 48). Counts from index 3
# onward are delta-coded against the count two places back — the reference
# implementation starts deltas at index 3, not 2.
_CHAR_LO, _CHAR_HI = 48, 111


def rle_to_compact_string(mask: RleMask) -> str:
    counts = mask.counts
    out: list[str] = []
    for i, c in enumerate(counts):
        x = c - (counts[i - 2] if i > 2 else 0)
        while True:
            group = x & 0x1F
            x >>= 5
            more = (x != -1) if (group & 0x10) else (x != 0)
            if more:
                group |= 0x20
            out.append(chr(group + _CHAR_LO))
            if not more:
                break
    return "".join(out)


def rle_from_compact_string(s: str, height: int, width: int) -> RleMask:
    counts: list[int] = []
    p, n = 0, len(s)
    while p < n:
        x = 0
        k = 0
        while True:
            if p >= n:
                raise MaskError("truncated compact RLE string: continuation bit set at end")
            code = ord(s[p]) - _CHAR_LO
            if code < 0 or ord(s[p]) > _CHAR_HI:
                raise MaskError(
                    f"invalid character {s[p]!r} at position {p}: "
                    f"codes must lie in [{_CHAR_LO},{_CHAR_HI}]"
                )
            x |= (code & 0x1F) << (5 * k)
            p += 1
            k += 1
            if not code & 0x20:
                if code & 0x10:
                    x |= -1 << (5 * k)
                break
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return RleMask(height, width, tuple(counts))


def _foreground_runs(mask: RleMask):
    """Yield (start, end) linear index intervals of foreground pixels."""
    pos = 0
    for i, c in enumerate(mask.counts):
        if i % 2 == 1 and c > 0:
            yield pos, pos + c
        pos += c


def mask_area(mask: RleMask) -> int:
    """Foreground pixel count (sum of the foreground run lengths)."""
    return int(sum(mask.counts[1::2]))


def mask_bbox(mask: RleMask) -> Bbox:
    """Tight pixel-edge box around the foreground; errors on empty masks."""
    h = mask.height
    min_row, max_row = h, -1
    min_col, max_col = mask.width, -1
    for start, end in _foreground_runs(mask):
        first_col, last_col = start // h, (end - 1) // h
        min_col = min(min_col, first_col)
        max_col = max(max_col, last_col)
        if first_col == last_col:
            min_row = min(min_row, start % h)
            max_row = max(max_row, (end - 1) % h)
        else:
            # run wraps across columns: it touches the bottom edge of its
            # first column and the top edge of its last, so spans all rows
            min_row = 0
            max_row = h - 1
    if max_col < 0:
        raise EmptyMaskError("mask has no foreground pixels")
    return Bbox(float(min_col), float(min_row), float(max_col + 1), float(max_row + 1))


def mask_iou(a: RleMask, b: RleMask) -> float:
    """IoU of two masks computed directly on their run lists."""
    if (a.height, a.width) != (b.height, b.width):
        raise MaskError(
            f"dimension mismatch: {a.height}x{a.width} vs {b.height}x{b.width}"
        )
    runs_a = list(_foreground_runs(a))
    runs_b = list(_foreground_runs(b))
    inter = 0
    i = j = 0
    while i < len(runs_a) and j < len(runs_b):
        lo = max(runs_a[i][0], runs_b[j][0])
        hi = min(runs_a[i][1], runs_b[j][1])
        if hi > lo:
            inter += hi - lo
        if runs_a[i][1] <= runs_b[j][1]:
            i += 1
        else:
            j += 1
    union = mask_area(a) + mask_area(b) - inter
    if union == 0:
        return 0.0
    return inter / union


def box_to_mask(box: Bbox, height: int, width: int) -> RleMask:
    """Rectangle fill of a box: every pixel whose area intersects the box.

    For integer-edge boxes this is exact, so ``mask_bbox(box_to_mask(b))``
    returns ``b`` unchanged.
    """
    c0 = max(0, int(math.floor(box.x_min)))
    r0 = max(0, int(math.floor(box.y_min)))
    c1 = min(width, int(math.ceil(box.x_max)))
    r1 = min(height, int(math.ceil(box.y_max)))
    grid = np.zeros((height, width), dtype=bool)
    if c1 > c0 and r1 > r0:
        grid[r0:r1, c0:c1] = True
    return rle_encode(grid)
