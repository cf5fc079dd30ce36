import type {
  AnnotationsDoc,
  EstimateResult,
  EventRow,
  PairsDoc,
  SiteDoc,
  TrajectoryRow,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
    readonly details: Record<string, unknown> = {},
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export interface EventQuery {
  severity?: string;
  t_from?: number;
  t_to?: number;
}

/**
 * Thin typed wrapper over the service endpoints. Holds no state and does
 * no math; error bodies become ApiError with the server's code intact.
 */
export class ApiClient {
  constructor(
    private readonly base = "",
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchImpl(this.base + path, init);
    if (!resp.ok) {
      let code = "error";
      let message = `HTTP ${resp.status}`;
      let details: Record<string, unknown> = {};
      try {
        const doc = await resp.json();
        if (typeof doc.code === "string") code = doc.code;
        if (typeof doc.message === "string") message = doc.message;
        if (doc.details && typeof doc.details === "object") details = doc.details;
      } catch {
        // non-JSON error body; keep the HTTP status message
      }
      throw new ApiError(resp.status, code, message, details);
    }
    return (await resp.json()) as T;
  }

  listSites(): Promise<{ sites: SiteDoc[] }> {
    return this.request("GET", "/sites");
  }

  getSite(siteId: string): Promise<SiteDoc> {
    return this.request("GET", `/sites/${encodeURIComponent(siteId)}`);
  }

  putPairs(siteId: string, doc: PairsDoc): Promise<{ pairs: number; warnings: string[] }> {
    return this.request("PUT", `/sites/${encodeURIComponent(siteId)}/pairs`, doc);
  }

  getPairs(siteId: string): Promise<PairsDoc> {
    return this.request("GET", `/sites/${encodeURIComponent(siteId)}/pairs`);
  }

  putAnnotations(siteId: string, doc: AnnotationsDoc): Promise<{ ok: boolean }> {
    return this.request("PUT", `/sites/${encodeURIComponent(siteId)}/annotations`, doc);
  }

  getAnnotations(siteId: string): Promise<AnnotationsDoc> {
    return this.request("GET", `/sites/${encodeURIComponent(siteId)}/annotations`);
  }

  estimate(siteId: string, overrides: Record<string, unknown> = {}): Promise<EstimateResult> {
    return this.request("POST", `/sites/${encodeURIComponent(siteId)}/estimate`, overrides);
  }

  getEvents(siteId: string, query: EventQuery = {}): Promise<{ events: EventRow[] }> {
    const params = new URLSearchParams();
    if (query.severity !== undefined) params.set("severity", query.severity);
    if (query.t_from !== undefined) params.set("t_from", String(query.t_from));
    if (query.t_to !== undefined) params.set("t_to", String(query.t_to));
    const qs = params.toString();
    return this.request("GET", `/sites/${encodeURIComponent(siteId)}/events${qs ? "?" + qs : ""}`);
  }

  getTracks(siteId: string, videoId?: string): Promise<{ trajectories: TrajectoryRow[] }> {
    const qs = videoId !== undefined ? `?video_id=${encodeURIComponent(videoId)}` : "";
    return this.request("GET", `/sites/${encodeURIComponent(siteId)}/tracks${qs}`);
  }

  // image endpoints are consumed via <img src>, so only the URLs are built here

  orthoUrl(siteId: string): string {
    return `${this.base}/sites/${encodeURIComponent(siteId)}/ortho`;
  }

  cameraFrameUrl(siteId: string): string {
    return `${this.base}/sites/${encodeURIComponent(siteId)}/camera-frame`;
  }

  overlayUrl(siteId: string, alpha: number): string {
    return `${this.base}/sites/${encodeURIComponent(siteId)}/overlay?alpha=${alpha}`;
  }
}
