// Chat panel: instruction input, message list, trace + artifact display.
// Send stays disabled while the input is empty; a network failure keeps
// the typed message in the input and shows a retry affordance.

import { ApiClient } from "./api.js";
import type { TraceDoc } from "./types.js";
import { renderArtifacts, renderTrace } from "./trace.js";

export class ChatPanel {
  readonly root: HTMLElement;
  readonly input: HTMLInputElement;
  readonly sendButton: HTMLButtonElement;
  readonly messages: HTMLElement;
  sessionId: number | null = null;

  constructor(private readonly api: ApiClient) {
    this.root = document.createElement("div");
    this.root.className = "chat-panel";

    this.messages = document.createElement("div");
    this.messages.className = "chat-messages";

    const form = document.createElement("form");
    form.className = "chat-form";
    this.input = document.createElement("input");
    this.input.type = "text";
    this.input.placeholder = "Ask about the trees…";
    this.input.setAttribute("aria-label", "instruction");
    this.sendButton = document.createElement("button");
    this.sendButton.type = "submit";
    this.sendButton.textContent = "Send";
    this.sendButton.disabled = true;
    form.append(this.input, this.sendButton);

    this.input.addEventListener("input", () => {
      this.sendButton.disabled = this.input.value.trim() === "";
    });
    form.addEventListener("submit", (event) => {
      event.preventDefault();
      void this.send();
    });

    this.root.append(this.messages, form);
  }

  async open(projectId: string): Promise<void> {
    const session = await this.api.createSession(projectId);
    this.sessionId = session.session_id;
  }

  async send(): Promise<TraceDoc | null> {
    const text = this.input.value.trim();
    if (text === "" || this.sessionId === null) return null;

    this.appendUserMessage(text);
    this.sendButton.disabled = true;
    try {
      const trace = await this.api.sendMessage(this.sessionId, text);
      this.input.value = "";
      await this.appendTrace(trace);
      return trace;
    } catch (err) {
      // keep the text for retry; the input still holds it
      this.appendRetryNotice(String(err));
      this.sendButton.disabled = this.input.value.trim() === "";
      return null;
    }
  }

  private appendUserMessage(text: string): void {
    const item = document.createElement("div");
    item.className = "chat-message user";
    item.textContent = text;
    this.messages.append(item);
  }

  private async appendTrace(trace: TraceDoc): Promise<void> {
    const item = document.createElement("div");
    item.className = "chat-message agent";
    item.append(renderTrace(trace));
    if (trace.artifacts.length > 0) {
      item.append(await renderArtifacts(trace, this.api));
    }
    this.messages.append(item);
  }

  private appendRetryNotice(message: string): void {
    const item = document.createElement("div");
    item.className = "chat-message network-error";
    item.textContent = `message not sent (${message}) — press Send to retry`;
    this.messages.append(item);
  }
}
