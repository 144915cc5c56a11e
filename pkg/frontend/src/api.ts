// Typed client for the gateway HTTP API. Injectable fetch keeps tests
// network-free.

import type {
  BoxArray,
  DetectionsDoc,
  HealthDoc,
  ProjectDoc,
  QueryResultDoc,
  SegmentDoc,
  SessionDoc,
  TraceDoc,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(detail);
  }
}

export class ApiClient {
  constructor(
    private readonly base: string = "",
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(this.base + path, init);
    if (!response.ok) {
      let detail = `${response.status}`;
      try {
        const body = (await response.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        // keep the status code as the message
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  health(): Promise<HealthDoc> {
    return this.request<HealthDoc>("/health");
  }

  listProjects(): Promise<{ projects: ProjectDoc[] }> {
    return this.request<{ projects: ProjectDoc[] }>("/projects");
  }

  getProject(projectId: string): Promise<ProjectDoc> {
    return this.request<ProjectDoc>(`/projects/${encodeURIComponent(projectId)}`);
  }

  imageUrl(projectId: string): string {
    return `${this.base}/projects/${encodeURIComponent(projectId)}/image`;
  }

  getDetections(projectId: string): Promise<BoxArray[]> {
    return this.request<{ detections: BoxArray[] }>(
      `/projects/${encodeURIComponent(projectId)}/detections`,
    ).then((doc) => doc.detections);
  }

  postDetections(projectId: string, boxes: BoxArray[]): Promise<DetectionsDoc> {
    return this.post<DetectionsDoc>(
      `/projects/${encodeURIComponent(projectId)}/detections`,
      { mode: "manual", boxes },
    );
  }

  runSegmentation(projectId: string): Promise<SegmentDoc> {
    return this.post<SegmentDoc>(`/projects/${encodeURIComponent(projectId)}/segment`, {});
  }

  queryTrees(projectId: string, query: object): Promise<QueryResultDoc> {
    const q = encodeURIComponent(JSON.stringify(query));
    return this.request<QueryResultDoc>(
      `/projects/${encodeURIComponent(projectId)}/trees?q=${q}`,
    );
  }

  createSession(projectId: string): Promise<SessionDoc> {
    return this.post<SessionDoc>("/chat/sessions", { project_id: projectId });
  }

  sendMessage(sessionId: number, text: string): Promise<TraceDoc> {
    return this.post<TraceDoc>(`/chat/sessions/${sessionId}/messages`, { text });
  }

  async fetchArtifact(artifactId: string): Promise<string> {
    const response = await this.fetchImpl(
      `${this.base}/artifacts/${encodeURIComponent(artifactId)}`,
    );
    if (!response.ok) throw new ApiError(response.status, `artifact ${artifactId}`);
    return response.text();
  }
}
