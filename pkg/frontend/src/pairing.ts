import { ApiClient, ApiError } from "./api.js";
import type { EstimateResult, PairsDoc, Point } from "./types.js";

export type Pane = "camera" | "ortho";
export type MarkerState = "inlier" | "outlier" | "unknown";

export interface Marker {
  id: number;
  cam: Point;
  ortho: Point;
  label?: string;
}

/**
 * Click-click pairing state machine.
 *
 * A camera-pane click opens a pending pair (re-clicking re-aims it); the
 * next ortho-pane click completes it. Ids come from a counter that never
 * decrements, so deleting a pair renumbers nothing. Coordinates are image
 * pixels; callers convert screen clicks through their pane's ViewTransform
 * before calling addClick.
 */
export class PairingSession {
  private markers: Marker[] = [];
  private mask: boolean[] | null = null;
  private nextId = 1;
  pendingCam: Point | null = null;

  get pairs(): readonly Marker[] {
    return this.markers;
  }

  addClick(pane: Pane, world: Point): Marker | null {
    if (pane === "camera") {
      this.pendingCam = { x: world.x, y: world.y };
      return null;
    }
    if (!this.pendingCam) return null; // ortho click with nothing to close
    const marker: Marker = {
      id: this.nextId++,
      cam: this.pendingCam,
      ortho: { x: world.x, y: world.y },
    };
    this.markers.push(marker);
    this.pendingCam = null;
    this.mask = null; // pairs changed; any previous fit no longer describes them
    return marker;
  }

  deletePair(id: number): boolean {
    const before = this.markers.length;
    this.markers = this.markers.filter((m) => m.id !== id);
    if (this.markers.length === before) return false;
    this.mask = null;
    return true;
  }

  relabel(id: number, label: string): void {
    const marker = this.markers.find((m) => m.id === id);
    if (marker) marker.label = label || undefined;
  }

  /** Inlier mask from an estimate, aligned to the current pair order. */
  applyMask(mask: boolean[]): void {
    if (mask.length !== this.markers.length) {
      throw new Error(
        `mask length ${mask.length} does not match ${this.markers.length} pairs`,
      );
    }
    this.mask = mask.slice();
  }

  markerState(id: number): MarkerState {
    if (!this.mask) return "unknown";
    const idx = this.markers.findIndex((m) => m.id === id);
    if (idx < 0) return "unknown";
    return this.mask[idx] ? "inlier" : "outlier";
  }

  toDoc(siteId: string, cameraImageRef: string, orthoRef: string): PairsDoc {
    return {
      schema_version: 1,
      site_id: siteId,
      camera_image_ref: cameraImageRef,
      ortho_ref: orthoRef,
      pairs: this.markers.map((m) => ({
        id: m.id,
        cam: [m.cam.x, m.cam.y] as [number, number],
        ortho: [m.ortho.x, m.ortho.y] as [number, number],
        ...(m.label ? { label: m.label } : {}),
      })),
    };
  }

  loadDoc(doc: PairsDoc): void {
    this.markers = doc.pairs.map((p) => ({
      id: p.id,
      cam: { x: p.cam[0], y: p.cam[1] },
      ortho: { x: p.ortho[0], y: p.ortho[1] },
      ...(p.label ? { label: p.label } : {}),
    }));
    this.pendingCam = null;
    this.mask = null;
    this.nextId = this.markers.reduce((acc, m) => Math.max(acc, m.id), 0) + 1;
  }

  static fromDoc(doc: PairsDoc): PairingSession {
    const session = new PairingSession();
    session.loadDoc(doc);
    return session;
  }
}

/**
 * Bridges the session to the service: save/load pairs, trigger estimates,
 * and surface the overlay URL for the opacity slider. A failed estimate
 * keeps every placed point and records the server's diagnostic line.
 */
export class PairingController {
  lastResult: EstimateResult | null = null;
  lastError: string | null = null;
  overlayUrl: string | null = null;
  alpha = 0.5;

  constructor(
    private readonly api: ApiClient,
    readonly session: PairingSession,
    private readonly siteId: string,
    private readonly cameraImageRef = "camera.png",
    private readonly orthoRef = "ortho.png",
  ) {}

  async save(): Promise<number> {
    const doc = this.session.toDoc(this.siteId, this.cameraImageRef, this.orthoRef);
    const resp = await this.api.putPairs(this.siteId, doc);
    return resp.pairs;
  }

  async load(): Promise<void> {
    const doc = await this.api.getPairs(this.siteId);
    this.session.loadDoc(doc);
  }

  async estimate(overrides: Record<string, unknown> = {}): Promise<EstimateResult | null> {
    try {
      await this.save();
      const result = await this.api.estimate(this.siteId, overrides);
      this.session.applyMask(result.inlier_mask);
      this.lastResult = result;
      this.lastError = null;
      this.overlayUrl = this.api.overlayUrl(this.siteId, this.alpha);
      return result;
    } catch (err) {
      if (err instanceof ApiError) {
        this.lastError = `${err.code}: ${err.message}`;
        return null;
      }
      throw err;
    }
  }

  setAlpha(alpha: number): void {
    this.alpha = Math.min(1, Math.max(0, alpha));
    if (this.overlayUrl !== null) {
      this.overlayUrl = this.api.overlayUrl(this.siteId, this.alpha);
    }
  }
}
