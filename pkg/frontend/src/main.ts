// App assembly: project picker, annotation canvas, tree table, chat.

import { ApiClient } from "./api.js";
import { AnnotationState } from "./annotate.js";
import { ChatPanel } from "./chat.js";
import { pixelToDisplay } from "./geometry.js";
import { renderTreeTable } from "./table.js";
import type { ProjectDoc } from "./types.js";

const DISPLAY_WIDTH = 640;

class App {
  private readonly api = new ApiClient("");
  private annotation: AnnotationState | null = null;
  private chat: ChatPanel | null = null;
  private project: ProjectDoc | null = null;
  private image: HTMLImageElement | null = null;

  private readonly picker = document.getElementById("project-picker") as HTMLSelectElement;
  private readonly canvas = document.getElementById("annotation-canvas") as HTMLCanvasElement;
  private readonly status = document.getElementById("status-line") as HTMLElement;
  private readonly tableHolder = document.getElementById("tree-table") as HTMLElement;
  private readonly chatHolder = document.getElementById("chat-holder") as HTMLElement;
  private readonly submitButton = document.getElementById("submit-boxes") as HTMLButtonElement;
  private readonly clearButton = document.getElementById("clear-pending") as HTMLButtonElement;
  private readonly segmentButton = document.getElementById("run-segment") as HTMLButtonElement;

  async start(): Promise<void> {
    const health = await this.api.health();
    this.say(`connected (${health.offline ? "offline" : "online"} deployment)`);

    const { projects } = await this.api.listProjects();
    for (const project of projects) {
      const option = document.createElement("option");
      option.value = project.project_id;
      option.textContent = `${project.project_id} (${project.status})`;
      this.picker.append(option);
    }
    this.picker.addEventListener("change", () => void this.loadProject(this.picker.value));
    if (projects.length > 0) await this.loadProject(projects[0].project_id);

    this.canvas.addEventListener("pointerdown", (e) => this.onPointerDown(e));
    this.canvas.addEventListener("pointermove", (e) => this.onPointerMove(e));
    this.canvas.addEventListener("pointerup", () => this.onPointerUp());
    this.submitButton.addEventListener("click", () => void this.submitBoxes());
    this.clearButton.addEventListener("click", () => this.clearPending());
    this.segmentButton.addEventListener("click", () => void this.resegment());
  }

  private say(text: string): void {
    this.status.textContent = text;
  }

  private async loadProject(projectId: string): Promise<void> {
    this.project = await this.api.getProject(projectId);
    const scale = DISPLAY_WIDTH / this.project.width;
    this.annotation = new AnnotationState(projectId, scale, this.api);
    await this.annotation.refresh();

    this.image = new Image();
    this.image.onload = () => this.redraw();
    this.image.src = this.api.imageUrl(projectId);

    this.canvas.width = DISPLAY_WIDTH;
    this.canvas.height = Math.round(this.project.height * scale);

    this.chat = new ChatPanel(this.api);
    await this.chat.open(projectId);
    this.chatHolder.replaceChildren(this.chat.root);

    await this.refreshTable();
    this.redraw();
    this.say(`loaded ${projectId}: ${this.project.width}x${this.project.height} px, ` +
             `${this.annotation.committed.length} detections`);
  }

  private canvasPoint(event: PointerEvent): { x: number; y: number } {
    const rect = this.canvas.getBoundingClientRect();
    return { x: event.clientX - rect.left, y: event.clientY - rect.top };
  }

  private onPointerDown(event: PointerEvent): void {
    if (!this.annotation) return;
    const { x, y } = this.canvasPoint(event);
    this.annotation.beginDrag(x, y);
  }

  private onPointerMove(event: PointerEvent): void {
    if (!this.annotation?.inProgress) return;
    const { x, y } = this.canvasPoint(event);
    this.annotation.moveDrag(x, y);
    this.redraw();
  }

  private onPointerUp(): void {
    if (!this.annotation) return;
    this.annotation.endDrag();
    this.redraw();
  }

  private clearPending(): void {
    if (!this.annotation) return;
    for (const pending of [...this.annotation.pending]) {
      this.annotation.deletePending(pending.id);
    }
    this.redraw();
  }

  private async submitBoxes(): Promise<void> {
    if (!this.annotation) return;
    try {
      const stored = await this.annotation.submit();
      this.say(`stored ${stored} new detections ` +
               `(${this.annotation.committed.length} total)`);
    } catch (err) {
      this.say(`submit failed: ${String(err)}`);
    }
    this.redraw();
  }

  private async resegment(): Promise<void> {
    if (!this.annotation) return;
    this.say("segmenting…");
    try {
      const result = await this.annotation.resegment();
      this.say(`segmentation done: ${result.trees} trees, ${result.fallbacks} fallbacks`);
      await this.refreshTable();
    } catch (err) {
      this.say(`segmentation failed: ${String(err)}`);
    }
  }

  private async refreshTable(): Promise<void> {
    if (!this.project) return;
    const result = await this.api.queryTrees(this.project.project_id, {
      columns: ["tree_id", "height_m", "crown_width_m", "support_height_m",
                "crown_area_m2", "fallback"],
      order_by: ["height_m", "desc"],
    });
    this.tableHolder.replaceChildren(renderTreeTable(result));
  }

  private redraw(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx || !this.annotation) return;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    if (this.image?.complete) {
      ctx.drawImage(this.image, 0, 0, this.canvas.width, this.canvas.height);
    }
    ctx.lineWidth = 2;
    ctx.strokeStyle = "#2fbf4f";
    for (const box of this.annotation.committed) {
      const d = pixelToDisplay(box, this.annotation.scale);
      ctx.strokeRect(d.x0, d.y0, d.x1 - d.x0, d.y1 - d.y0);
    }
    ctx.strokeStyle = "#e0a92f";
    for (const pending of this.annotation.pending) {
      const d = pixelToDisplay(pending.pixels, this.annotation.scale);
      ctx.strokeRect(d.x0, d.y0, d.x1 - d.x0, d.y1 - d.y0);
    }
    if (this.annotation.inProgress) {
      ctx.setLineDash([4, 3]);
      ctx.strokeStyle = "#eeeeee";
      const b = this.annotation.inProgress;
      ctx.strokeRect(b.x0, b.y0, b.x1 - b.x0, b.y1 - b.y0);
      ctx.setLineDash([]);
    }
  }
}

window.addEventListener("DOMContentLoaded", () => {
  const app = new App();
  void app.start().catch((err) => {
    const status = document.getElementById("status-line");
    if (status) status.textContent = `startup failed: ${String(err)}`;
  });
});
