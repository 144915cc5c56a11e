"""Boxes, overlap measures, and the run-length mask codec.

Walks through the pixel-space primitives everything else builds on:
IoU/GIoU on boxes, encoding binary masks as column-major run lengths,
and the compact string form used for database storage.
"""

import numpy as np

from treelab.geometry import (
    Bbox, giou, iou, mask_area, mask_bbox,
    rle_decode, rle_encode, rle_from_compact_string, rle_to_compact_string,
)

print("== Boxes and overlap ==")
p = Bbox(0, 0, 2, 2)
g = Bbox(1, 1, 3, 3)
print(f"p={p.as_list()}  g={g.as_list()}")
print(f"iou(p, g)  = {iou(p, g):.6f}   (intersection 1 over union 7)")
print(f"giou(p, g) = {giou(p, g):.6f}   (iou minus the enclosing-box penalty)")

far = Bbox(2, 2, 3, 3)
print(f"\ndisjoint boxes: iou={iou(Bbox(0, 0, 1, 1), far):.1f}, "
      f"giou={giou(Bbox(0, 0, 1, 1), far):.4f}  (giou < 0 separates them by distance)")

print("\n== Run-length masks (column-major scan) ==")
grid = np.zeros((3, 3), dtype=bool)
grid[1, 1] = True
mask = rle_encode(grid)
print(f"3x3 grid with one pixel at (row 1, col 1) -> counts {list(mask.counts)}")
print(f"decode round-trips: {(rle_decode(mask) == grid).all()}")
print(f"tight box around the pixel: {mask_bbox(mask).as_list()}")

print("\n== Compact string form ==")
s = rle_to_compact_string(mask)
print(f"counts {list(mask.counts)} encode to {s!r}")
print(f"decoding {s!r} restores the mask: {rle_from_compact_string(s, 3, 3) == mask}")

rng = np.random.default_rng(0)
blob = rle_encode(rng.random((64, 64)) < 0.4)
compact = rle_to_compact_string(blob)
print(f"\na random 64x64 mask: {mask_area(blob)} foreground pixels, "
      f"{len(blob.counts)} runs, {len(compact)} characters compact")
