/**
 * Typed client for the session service.
 *
 * All traffic goes through one injectable fetch so tests can swap in a
 * mock service; nothing in the viewer talks to any other backend.
 */

import type {
  ClickOut,
  MasksPayload,
  MetricsPayload,
  OverlayMode,
  RoundSummary,
  SessionInfo,
  SessionLog,
} from "./types.js";

export type FetchLike = (
  url: string,
  init?: RequestInit,
) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    message: string,
    public readonly status: number, // 0 when the service was unreachable
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    let response: Response;
    try {
      response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    } catch (err) {
      throw new ApiError(`service unreachable: ${String(err)}`, 0);
    }
    if (!response.ok) {
      let detail = `${response.status}`;
      try {
        const body = (await response.json()) as { detail?: unknown };
        if (body.detail) detail = `${JSON.stringify(body.detail)}`;
      } catch {
        // non-JSON error body, keep the status code
      }
      throw new ApiError(detail, response.status);
    }
    return response;
  }

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.request(path);
    return (await response.json()) as T;
  }

  async createSession(
    volumePath: string,
    masksPath?: string,
    sessionId?: string,
  ): Promise<SessionInfo> {
    const response = await this.request("/sessions", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({
        volume_path: volumePath,
        masks_path: masksPath ?? null,
        session_id: sessionId ?? null,
      }),
    });
    return (await response.json()) as SessionInfo;
  }

  async submitRound(
    sessionId: string,
    clicks: ClickOut[],
  ): Promise<RoundSummary> {
    const response = await this.request(`/sessions/${sessionId}/rounds`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ clicks }),
    });
    return (await response.json()) as RoundSummary;
  }

  async getMasks(
    sessionId: string,
    round?: number,
    kind: "raw" | "fused" = "fused",
  ): Promise<MasksPayload> {
    const query = round === undefined ? `kind=${kind}` : `round=${round}&kind=${kind}`;
    return this.getJson(`/sessions/${sessionId}/masks?${query}`);
  }

  async getMetrics(sessionId: string): Promise<MetricsPayload> {
    return this.getJson(`/sessions/${sessionId}/metrics`);
  }

  async getLog(sessionId: string): Promise<SessionLog> {
    return this.getJson(`/sessions/${sessionId}/log`);
  }

  /** Raw PNG bytes of a slice, with an optional server-side overlay. */
  async fetchSlicePng(
    sessionId: string,
    index: number,
    overlay: OverlayMode = "none",
    round?: number,
  ): Promise<ArrayBuffer> {
    const query =
      round === undefined ? `overlay=${overlay}` : `overlay=${overlay}&round=${round}`;
    const response = await this.request(
      `/sessions/${sessionId}/slices/${index}?${query}`,
    );
    return response.arrayBuffer();
  }
}
