import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import type { PairsDoc } from "../src/types.js";
import { jsonResponse, queueFetch } from "./mock.js";

const pairsDoc: PairsDoc = {
  schema_version: 1,
  site_id: "main-st",
  camera_image_ref: "camera.png",
  ortho_ref: "ortho.png",
  pairs: [
    { id: 1, cam: [10, 20], ortho: [15, 17] },
    { id: 2, cam: [30, 40], ortho: [35, 37], label: "crosswalk corner" },
  ],
};

describe("ApiClient requests", () => {
  it("PUTs the pairs document as JSON and returns the server count", async () => {
    const { fetch, calls } = queueFetch([jsonResponse({ pairs: 2, warnings: [] })]);
    const api = new ApiClient("", fetch);
    const out = await api.putPairs("main-st", pairsDoc);
    expect(out).toEqual({ pairs: 2, warnings: [] });
    expect(calls).toHaveLength(1);
    expect(calls[0].method).toBe("PUT");
    expect(calls[0].url).toBe("/sites/main-st/pairs");
    expect(calls[0].body).toEqual(pairsDoc);
  });

  it("escapes site ids in every path", async () => {
    const { fetch, calls } = queueFetch([jsonResponse({ events: [] })]);
    const api = new ApiClient("", fetch);
    await api.getEvents("5th & main/day");
    expect(calls[0].url).toBe("/sites/5th%20%26%20main%2Fday/events");
  });

  it("builds the event query from the given filters only", async () => {
    const { fetch, calls } = queueFetch([jsonResponse({ events: [] })]);
    const api = new ApiClient("", fetch);
    await api.getEvents("s", { severity: "moderate", t_from: 1.5 });
    expect(calls[0].url).toBe("/sites/s/events?severity=moderate&t_from=1.5");
  });

  it("sends no query string when no filters are set", async () => {
    const { fetch, calls } = queueFetch([
      jsonResponse({ events: [] }),
      jsonResponse({ trajectories: [] }),
    ]);
    const api = new ApiClient("", fetch);
    await api.getEvents("s");
    await api.getTracks("s");
    expect(calls[0].url).toBe("/sites/s/events");
    expect(calls[1].url).toBe("/sites/s/tracks");
  });

  it("posts estimate overrides as the request body", async () => {
    const { fetch, calls } = queueFetch([jsonResponse({ ok: true })]);
    const api = new ApiClient("", fetch);
    await api.estimate("s", { seed: 7, max_iterations: 500 });
    expect(calls[0].method).toBe("POST");
    expect(calls[0].url).toBe("/sites/s/estimate");
    expect(calls[0].body).toEqual({ seed: 7, max_iterations: 500 });
  });
});

describe("ApiClient error handling", () => {
  it("turns the server error document into an ApiError", async () => {
    const { fetch } = queueFetch([
      jsonResponse(
        { code: "unknown_site", message: "no site named x", details: { site_id: "x" } },
        404,
      ),
    ]);
    const api = new ApiClient("", fetch);
    const err = await api.getSite("x").catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    const apiErr = err as ApiError;
    expect(apiErr.status).toBe(404);
    expect(apiErr.code).toBe("unknown_site");
    expect(apiErr.message).toBe("no site named x");
    expect(apiErr.details).toEqual({ site_id: "x" });
  });

  it("falls back to the HTTP status when the error body is not JSON", async () => {
    const { fetch } = queueFetch([new Response("<html>boom</html>", { status: 503 })]);
    const api = new ApiClient("", fetch);
    const err = await api.listSites().catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).code).toBe("error");
    expect((err as ApiError).message).toBe("HTTP 503");
  });
});

describe("image URL builders", () => {
  const api = new ApiClient("http://127.0.0.1:8787", () => {
    throw new Error("URL builders must not fetch");
  });

  it("builds ortho, camera frame, and overlay URLs against the base", () => {
    expect(api.orthoUrl("s")).toBe("http://127.0.0.1:8787/sites/s/ortho");
    expect(api.cameraFrameUrl("s")).toBe("http://127.0.0.1:8787/sites/s/camera-frame");
    expect(api.overlayUrl("s", 0.25)).toBe("http://127.0.0.1:8787/sites/s/overlay?alpha=0.25");
  });
});
