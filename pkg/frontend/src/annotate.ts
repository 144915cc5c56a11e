// Annotation state: draw boxes over the raster, commit them to the server,
// fetch the stored set back, and offer a one-click re-segmentation.
//
// Drawing happens in display coordinates; the state keeps pending boxes in
// image pixel coordinates (converted once at drag end through
// displayToPixel) so what is submitted is exactly what was drawn.

import type { ApiClient } from "./api.js";
import type { BoxArray } from "./types.js";
import { DisplayBox, displayToPixel, normalizeBox } from "./geometry.js";

export interface PendingBox {
  id: number;
  pixels: BoxArray;
}

export class AnnotationState {
  /** Boxes confirmed by the server, in pixel coordinates. */
  committed: BoxArray[] = [];
  /** Locally drawn, not yet submitted. */
  pending: PendingBox[] = [];
  /** Drag rectangle in display coordinates, while the pointer is down. */
  inProgress: DisplayBox | null = null;
  dirty = false;

  private nextId = 1;

  constructor(
    readonly projectId: string,
    readonly scale: number,
    private readonly api: ApiClient,
  ) {}

  beginDrag(x: number, y: number): void {
    this.inProgress = { x0: x, y0: y, x1: x, y1: y };
  }

  moveDrag(x: number, y: number): void {
    if (!this.inProgress) return;
    this.inProgress = { ...this.inProgress, x1: x, y1: y };
  }

  /** Finish the drag; tiny accidental drags are discarded. */
  endDrag(minSizePx = 3): PendingBox | null {
    if (!this.inProgress) return null;
    const box = normalizeBox(this.inProgress);
    this.inProgress = null;
    if (box.x1 - box.x0 < minSizePx || box.y1 - box.y0 < minSizePx) return null;
    const pending: PendingBox = {
      id: this.nextId++,
      pixels: displayToPixel(box, this.scale),
    };
    this.pending.push(pending);
    this.dirty = true;
    return pending;
  }

  deletePending(id: number): void {
    this.pending = this.pending.filter((p) => p.id !== id);
    this.dirty = this.pending.length > 0;
  }

  /** POST the pending boxes; on success they move to the committed set
   * (as confirmed by the server) and the dirty flag clears. */
  async submit(): Promise<number> {
    if (this.pending.length === 0) return 0;
    const result = await this.api.postDetections(
      this.projectId,
      this.pending.map((p) => p.pixels),
    );
    this.committed = result.detections;
    this.pending = [];
    this.dirty = false;
    return result.stored;
  }

  /** Reload the server's detection set (used on project load and after
   * external changes). */
  async refresh(): Promise<void> {
    this.committed = await this.api.getDetections(this.projectId);
  }

  /** One-click re-run of the segmentation stage on the committed boxes. */
  async resegment(): Promise<{ trees: number; fallbacks: number }> {
    return this.api.runSegmentation(this.projectId);
  }
}
