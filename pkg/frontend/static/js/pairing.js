import { ApiError } from "./api.js";
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
    constructor() {
        this.markers = [];
        this.mask = null;
        this.nextId = 1;
        this.pendingCam = null;
    }
    get pairs() {
        return this.markers;
    }
    addClick(pane, world) {
        if (pane === "camera") {
            this.pendingCam = { x: world.x, y: world.y };
            return null;
        }
        if (!this.pendingCam)
            return null; // ortho click with nothing to close
        const marker = {
            id: this.nextId++,
            cam: this.pendingCam,
            ortho: { x: world.x, y: world.y },
        };
        this.markers.push(marker);
        this.pendingCam = null;
        this.mask = null; // pairs changed; any previous fit no longer describes them
        return marker;
    }
    deletePair(id) {
        const before = this.markers.length;
        this.markers = this.markers.filter((m) => m.id !== id);
        if (this.markers.length === before)
            return false;
        this.mask = null;
        return true;
    }
    relabel(id, label) {
        const marker = this.markers.find((m) => m.id === id);
        if (marker)
            marker.label = label || undefined;
    }
    /** Inlier mask from an estimate, aligned to the current pair order. */
    applyMask(mask) {
        if (mask.length !== this.markers.length) {
            throw new Error(`mask length ${mask.length} does not match ${this.markers.length} pairs`);
        }
        this.mask = mask.slice();
    }
    markerState(id) {
        if (!this.mask)
            return "unknown";
        const idx = this.markers.findIndex((m) => m.id === id);
        if (idx < 0)
            return "unknown";
        return this.mask[idx] ? "inlier" : "outlier";
    }
    toDoc(siteId, cameraImageRef, orthoRef) {
        return {
            schema_version: 1,
            site_id: siteId,
            camera_image_ref: cameraImageRef,
            ortho_ref: orthoRef,
            pairs: this.markers.map((m) => ({
                id: m.id,
                cam: [m.cam.x, m.cam.y],
                ortho: [m.ortho.x, m.ortho.y],
                ...(m.label ? { label: m.label } : {}),
            })),
        };
    }
    loadDoc(doc) {
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
    static fromDoc(doc) {
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
    constructor(api, session, siteId, cameraImageRef = "camera.png", orthoRef = "ortho.png") {
        this.api = api;
        this.session = session;
        this.siteId = siteId;
        this.cameraImageRef = cameraImageRef;
        this.orthoRef = orthoRef;
        this.lastResult = null;
        this.lastError = null;
        this.overlayUrl = null;
        this.alpha = 0.5;
    }
    async save() {
        const doc = this.session.toDoc(this.siteId, this.cameraImageRef, this.orthoRef);
        const resp = await this.api.putPairs(this.siteId, doc);
        return resp.pairs;
    }
    async load() {
        const doc = await this.api.getPairs(this.siteId);
        this.session.loadDoc(doc);
    }
    async estimate(overrides = {}) {
        try {
            await this.save();
            const result = await this.api.estimate(this.siteId, overrides);
            this.session.applyMask(result.inlier_mask);
            this.lastResult = result;
            this.lastError = null;
            this.overlayUrl = this.api.overlayUrl(this.siteId, this.alpha);
            return result;
        }
        catch (err) {
            if (err instanceof ApiError) {
                this.lastError = `${err.code}: ${err.message}`;
                return null;
            }
            throw err;
        }
    }
    setAlpha(alpha) {
        this.alpha = Math.min(1, Math.max(0, alpha));
        if (this.overlayUrl !== null) {
            this.overlayUrl = this.api.overlayUrl(this.siteId, this.alpha);
        }
    }
}
