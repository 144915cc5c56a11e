// Agent trace rendering: every server step appears exactly once, in
// server order, as labeled Thought / Action / Action Input / Observation
// blocks, followed by the final result (or the error, verbatim, so the
// user can rephrase). SVG artifacts render inline.

import type { ApiClient } from "./api.js";
import type { TraceDoc } from "./types.js";

function block(label: string, text: string, cls: string): HTMLElement {
  const div = document.createElement("div");
  div.className = `trace-block ${cls}`;
  const tag = document.createElement("span");
  tag.className = "trace-label";
  tag.textContent = label;
  const body = document.createElement("pre");
  body.textContent = text;
  div.append(tag, body);
  return div;
}

export function renderTrace(trace: TraceDoc): HTMLElement {
  const root = document.createElement("div");
  root.className = "agent-trace";

  const steps = document.createElement("details");
  steps.className = "trace-steps";
  steps.open = trace.final === null; // problems stay expanded
  const summary = document.createElement("summary");
  summary.textContent = `${trace.steps.length} step${trace.steps.length === 1 ? "" : "s"}`;
  steps.append(summary);

  trace.steps.forEach((step, index) => {
    const section = document.createElement("section");
    section.className = "trace-step";
    section.dataset.index = String(index);
    section.append(
      block("Thought", step.thought, "thought"),
      block("Action", step.action, "action"),
      block("Action Input", JSON.stringify(step.action_input), "action-input"),
      block("Observation", step.observation, "observation"),
    );
    steps.append(section);
  });
  if (trace.steps.length > 0) root.append(steps);

  if (trace.final !== null) {
    root.append(block("Final Result", trace.final, "final"));
  } else {
    const message = trace.error ?? `session ended with status ${trace.status}`;
    root.append(block(`Error (${trace.status})`, message, "trace-error"));
  }
  return root;
}

/** Fetch each artifact and inline it as an <svg> inside the panel. */
export async function renderArtifacts(
  trace: TraceDoc,
  api: ApiClient,
): Promise<HTMLElement> {
  const panel = document.createElement("div");
  panel.className = "artifact-panel";
  for (const artifactId of trace.artifacts) {
    const holder = document.createElement("figure");
    holder.className = "artifact";
    holder.dataset.artifactId = artifactId;
    try {
      holder.innerHTML = await api.fetchArtifact(artifactId);
    } catch (err) {
      const fallback = document.createElement("p");
      fallback.className = "artifact-error";
      fallback.textContent = `artifact ${artifactId} failed to load: ${String(err)}`;
      holder.append(fallback);
    }
    const caption = document.createElement("figcaption");
    caption.textContent = artifactId;
    holder.append(caption);
    panel.append(holder);
  }
  return panel;
}
