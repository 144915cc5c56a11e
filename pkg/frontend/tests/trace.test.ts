import { readFileSync } from "node:fs";
import { join } from "node:path";

import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { renderArtifacts, renderTrace } from "../src/trace.js";
import type { TraceDoc } from "../src/types.js";
import { FakeServer, TALLEST_TRACE } from "./fake-server.js";

const BOX_PLOT_SVG = readFileSync(
  join(__dirname, "fixtures", "box_plot.svg"), "utf8");

describe("renderTrace", () => {
  it("renders the tallest-tree trace blocks in order", () => {
    const root = renderTrace(TALLEST_TRACE);
    const labels = [...root.querySelectorAll(".trace-label")]
      .map((el) => el.textContent);
    expect(labels).toEqual(["Thought", "Action", "Action Input", "Observation",
                            "Final Result"]);
    const step = root.querySelector(".trace-step")!;
    expect(step.querySelector(".thought pre")!.textContent)
      .toBe("the tallest tree is the height argmax");
    expect(step.querySelector(".action pre")!.textContent).toBe("db_query");
    expect(step.querySelector(".observation pre")!.textContent)
      .toBe("tree_id | height_m\n2 | 10");
    expect(root.querySelector(".final pre")!.textContent)
      .toBe("The tallest tree is tree 2 at 10 m.");
  });

  it("is lossless: every server step appears exactly once, in order", () => {
    const trace: TraceDoc = {
      ...TALLEST_TRACE,
      steps: [0, 1, 2].map((i) => ({
        thought: `t${i}`,
        action: "db_query",
        action_input: { step: i },
        observation: `obs${i}`,
      })),
    };
    const root = renderTrace(trace);
    const sections = [...root.querySelectorAll(".trace-step")];
    expect(sections).toHaveLength(3);
    sections.forEach((section, i) => {
      expect(section.getAttribute("data-index")).toBe(String(i));
      expect(section.querySelector(".thought pre")!.textContent).toBe(`t${i}`);
      expect(section.querySelector(".observation pre")!.textContent).toBe(`obs${i}`);
    });
  });

  it("shows errors verbatim when there is no final result", () => {
    const trace: TraceDoc = {
      ...TALLEST_TRACE,
      steps: [],
      final: null,
      status: "parse_error",
      error: "missing section 'Action:' | raw output: gibberish",
    };
    const root = renderTrace(trace);
    expect(root.querySelector(".trace-error pre")!.textContent)
      .toContain("raw output: gibberish");
    expect(root.querySelector(".final")).toBeNull();
  });
});

describe("renderArtifacts", () => {
  it("inlines the box-plot SVG fixture", async () => {
    const server = new FakeServer();
    server.artifacts.set("art-0001", BOX_PLOT_SVG);
    const trace: TraceDoc = { ...TALLEST_TRACE, artifacts: ["art-0001"] };
    const panel = await renderArtifacts(trace, new ApiClient("", server.fetch));
    const svg = panel.querySelector("figure[data-artifact-id='art-0001'] svg");
    expect(svg).not.toBeNull();
    expect(panel.querySelectorAll("g.box-group")).toHaveLength(2);
  });

  it("reports missing artifacts without breaking the panel", async () => {
    const server = new FakeServer();
    const trace: TraceDoc = { ...TALLEST_TRACE, artifacts: ["art-0404"] };
    const panel = await renderArtifacts(trace, new ApiClient("", server.fetch));
    expect(panel.querySelector(".artifact-error")!.textContent)
      .toContain("art-0404");
  });
});
