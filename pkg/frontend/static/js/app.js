// Browser bootstrap. Everything testable lives in the sibling modules;
// this file only wires DOM events to them and paints canvases.
import { ApiClient, ApiError } from "./api.js";
import { AnnotationDraft } from "./annotate.js";
import { PairingController, PairingSession } from "./pairing.js";
import { SEVERITIES, SEVERITY_COLORS, TracksViewer } from "./tracks.js";
import { ViewTransform } from "./view.js";
const api = new ApiClient("");
function el(id) {
    const node = document.getElementById(id);
    if (!node)
        throw new Error(`missing element #${id}`);
    return node;
}
function setStatus(text, isError = false) {
    const bar = el("status");
    bar.textContent = text;
    bar.className = isError ? "status error" : "status";
}
function loadImage(url) {
    return new Promise((resolve, reject) => {
        const img = new Image();
        img.onload = () => resolve(img);
        img.onerror = () => reject(new Error(`failed to load ${url}`));
        img.src = url;
    });
}
class App {
    constructor() {
        this.session = new PairingSession();
        this.controller = null;
        this.draft = new AnnotationDraft();
        this.tracksViewer = new TracksViewer();
        this.siteId = "";
        this.overlayImage = null;
        this.showOverlay = false;
        this.panes = {
            camera: this.makePane("camera-canvas", "camera"),
            ortho: this.makePane("ortho-canvas", "ortho"),
        };
    }
    makePane(canvasId, pane) {
        const canvas = el(canvasId);
        const state = { canvas, view: new ViewTransform(), image: null, pane };
        canvas.addEventListener("wheel", (ev) => {
            ev.preventDefault();
            const rect = canvas.getBoundingClientRect();
            const anchor = { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
            state.view.zoomAt(anchor, ev.deltaY < 0 ? 1.2 : 1 / 1.2);
            this.repaint();
        });
        let dragging = false;
        let last = { x: 0, y: 0 };
        canvas.addEventListener("mousedown", (ev) => {
            if (ev.button === 1 || ev.shiftKey) {
                dragging = true;
                last = { x: ev.clientX, y: ev.clientY };
                ev.preventDefault();
            }
        });
        window.addEventListener("mousemove", (ev) => {
            if (!dragging)
                return;
            state.view.panBy(ev.clientX - last.x, ev.clientY - last.y);
            last = { x: ev.clientX, y: ev.clientY };
            this.repaint();
        });
        window.addEventListener("mouseup", () => {
            dragging = false;
        });
        canvas.addEventListener("click", (ev) => {
            if (ev.shiftKey)
                return;
            const rect = canvas.getBoundingClientRect();
            const world = state.view.toWorld({ x: ev.clientX - rect.left, y: ev.clientY - rect.top });
            this.handleClick(pane, world);
        });
        return state;
    }
    handleClick(pane, world) {
        if (this.draft.mode && pane === "ortho") {
            const err = this.draft.addPoint(world);
            if (err)
                setStatus(err, true);
            else
                this.renderAnnotationControls();
            this.repaint();
            return;
        }
        const marker = this.session.addClick(pane, world);
        if (pane === "camera")
            setStatus("camera point set, now click the matching ortho point");
        else if (marker)
            setStatus(`pair ${marker.id} added`);
        else
            setStatus("click the camera image first", true);
        this.renderPairList();
        this.repaint();
    }
    async openSite(siteId) {
        this.siteId = siteId;
        this.session = new PairingSession();
        this.controller = new PairingController(api, this.session, siteId);
        this.overlayImage = null;
        this.showOverlay = false;
        const cam = this.panes.camera;
        const ortho = this.panes.ortho;
        try {
            const img = await loadImage(api.cameraFrameUrl(siteId));
            cam.image = img;
            cam.view.fit(img.width, img.height, cam.canvas.width, cam.canvas.height, 8);
        }
        catch {
            cam.image = null;
        }
        try {
            const img = await loadImage(api.orthoUrl(siteId));
            ortho.image = img;
            ortho.view.fit(img.width, img.height, ortho.canvas.width, ortho.canvas.height, 8);
        }
        catch {
            ortho.image = null;
        }
        try {
            await this.controller.load();
            setStatus(`site ${siteId}: loaded ${this.session.pairs.length} saved pairs`);
        }
        catch {
            setStatus(`site ${siteId}: no saved pairs yet`);
        }
        try {
            this.draft.loadDoc(await api.getAnnotations(siteId));
        }
        catch {
            this.draft = new AnnotationDraft();
        }
        await this.refreshTracks();
        this.renderPairList();
        this.renderAnnotationControls();
        this.repaint();
    }
    async refreshTracks() {
        if (!this.siteId)
            return;
        try {
            const [events, tracks] = await Promise.all([
                api.getEvents(this.siteId),
                api.getTracks(this.siteId),
            ]);
            this.tracksViewer.load(events.events, tracks.trajectories);
        }
        catch {
            this.tracksViewer.load([], []);
        }
        this.renderEventList();
        this.renderScrubber();
    }
    async runEstimate() {
        if (!this.controller)
            return;
        setStatus("estimating...");
        const result = await this.controller.estimate();
        if (!result) {
            setStatus(this.controller.lastError ?? "estimation failed", true);
            this.renderPairList();
            this.repaint();
            return;
        }
        const mean = result.mean_inlier_error.toFixed(3);
        setStatus(`h estimated: ${result.inlier_count}/${this.session.pairs.length} inliers, ` +
            `mean error ${mean} px, ${result.iterations_run} iterations`);
        if (this.controller.overlayUrl) {
            try {
                this.overlayImage = await loadImage(this.controller.overlayUrl);
                this.showOverlay = true;
            }
            catch {
                this.overlayImage = null;
            }
        }
        this.renderPairList();
        this.repaint();
    }
    async saveAnnotations() {
        const problem = this.draft.validate();
        if (problem) {
            setStatus(problem, true);
            return;
        }
        try {
            await api.putAnnotations(this.siteId, this.draft.toDoc());
            setStatus("annotations saved");
        }
        catch (err) {
            if (err instanceof ApiError)
                setStatus(`${err.code}: ${err.message}`, true);
            else
                throw err;
        }
    }
    renderPairList() {
        const list = el("pair-list");
        list.textContent = "";
        for (const marker of this.session.pairs) {
            const item = document.createElement("li");
            item.className = `pair ${this.session.markerState(marker.id)}`;
            const label = document.createElement("span");
            label.textContent =
                `#${marker.id} (${marker.cam.x.toFixed(1)}, ${marker.cam.y.toFixed(1)}) -> ` +
                    `(${marker.ortho.x.toFixed(1)}, ${marker.ortho.y.toFixed(1)})`;
            const remove = document.createElement("button");
            remove.textContent = "x";
            remove.addEventListener("click", () => {
                this.session.deletePair(marker.id);
                this.renderPairList();
                this.repaint();
            });
            item.append(label, remove);
            list.append(item);
        }
        el("pair-count").textContent = String(this.session.pairs.length);
    }
    renderAnnotationControls() {
        const modeLabel = el("draw-mode");
        modeLabel.textContent = this.draft.mode ?? "off";
        el("analysis-side").value = this.draft.analysisSide;
    }
    renderEventList() {
        const list = el("event-list");
        list.textContent = "";
        for (const ev of this.tracksViewer.visibleEvents()) {
            const item = document.createElement("li");
            item.className = `event ${ev.severity}` + (this.tracksViewer.selected === ev ? " selected" : "");
            item.textContent =
                `${ev.severity} @ t=${ev.t_start.toFixed(2)}s ` +
                    `a=${ev.a_bar.toFixed(2)} m/s2 r=${ev.r_start.toFixed(1)} m (track ${ev.track_id})`;
            item.addEventListener("click", () => {
                this.tracksViewer.selectEvent(ev);
                this.renderEventList();
                this.renderScrubber();
                this.repaint();
            });
            list.append(item);
        }
    }
    renderScrubber() {
        const scrub = el("scrubber");
        scrub.min = String(this.tracksViewer.windowStart);
        scrub.max = String(this.tracksViewer.windowEnd);
        scrub.step = "0.01";
        scrub.value = String(this.tracksViewer.cursor);
        el("cursor-time").textContent = `${this.tracksViewer.cursor.toFixed(2)} s`;
    }
    repaint() {
        this.paintPane(this.panes.camera);
        this.paintPane(this.panes.ortho);
    }
    paintPane(state) {
        const ctx = state.canvas.getContext("2d");
        if (!ctx)
            return;
        ctx.setTransform(1, 0, 0, 1, 0, 0);
        ctx.fillStyle = "#1b1d20";
        ctx.fillRect(0, 0, state.canvas.width, state.canvas.height);
        state.view.applyTo(ctx);
        const base = state.pane === "ortho" && this.showOverlay && this.overlayImage
            ? this.overlayImage
            : state.image;
        if (base)
            ctx.drawImage(base, 0, 0);
        const px = 1 / state.view.scale; // keep strokes one screen pixel wide
        for (const marker of this.session.pairs) {
            const p = state.pane === "camera" ? marker.cam : marker.ortho;
            ctx.beginPath();
            ctx.arc(p.x, p.y, 4 * px, 0, Math.PI * 2);
            const mstate = this.session.markerState(marker.id);
            ctx.fillStyle = mstate === "inlier" ? "#3fa45b" : mstate === "outlier" ? "#d64545" : "#4f86c6";
            ctx.fill();
            ctx.fillStyle = "#f0f0f0";
            ctx.font = `${11 * px}px sans-serif`;
            ctx.fillText(String(marker.id), p.x + 6 * px, p.y - 6 * px);
        }
        if (state.pane === "camera" && this.session.pendingCam) {
            const p = this.session.pendingCam;
            ctx.beginPath();
            ctx.arc(p.x, p.y, 5 * px, 0, Math.PI * 2);
            ctx.strokeStyle = "#f4c542";
            ctx.lineWidth = 2 * px;
            ctx.stroke();
        }
        if (state.pane === "ortho")
            this.paintOrthoLayers(ctx, px);
    }
    paintOrthoLayers(ctx, px) {
        if (this.draft.stopBar) {
            const [a, b] = this.draft.stopBar;
            ctx.beginPath();
            ctx.moveTo(a.x, a.y);
            ctx.lineTo(b.x, b.y);
            ctx.strokeStyle = "#d64545";
            ctx.lineWidth = 3 * px;
            ctx.stroke();
        }
        if (this.draft.median.length >= 2) {
            ctx.beginPath();
            ctx.moveTo(this.draft.median[0].x, this.draft.median[0].y);
            for (const p of this.draft.median.slice(1))
                ctx.lineTo(p.x, p.y);
            ctx.strokeStyle = "#4f86c6";
            ctx.lineWidth = 2 * px;
            ctx.setLineDash([8 * px, 4 * px]);
            ctx.stroke();
            ctx.setLineDash([]);
        }
        for (const track of this.tracksViewer.tracks) {
            const pts = this.tracksViewer.visiblePoints(track);
            if (pts.length < 2)
                continue;
            ctx.beginPath();
            ctx.moveTo(pts[0].x, pts[0].y);
            for (const p of pts.slice(1))
                ctx.lineTo(p.x, p.y);
            ctx.strokeStyle = this.tracksViewer.colorOf(track);
            ctx.lineWidth = 2 * px;
            ctx.stroke();
            const head = pts[pts.length - 1];
            ctx.beginPath();
            ctx.arc(head.x, head.y, 3 * px, 0, Math.PI * 2);
            ctx.fillStyle = this.tracksViewer.colorOf(track);
            ctx.fill();
        }
        const sel = this.tracksViewer.selected;
        if (sel) {
            ctx.beginPath();
            ctx.arc(sel.mean_easting, sel.mean_northing, 6 * px, 0, Math.PI * 2);
            ctx.strokeStyle = SEVERITY_COLORS[sel.severity];
            ctx.lineWidth = 2 * px;
            ctx.stroke();
        }
    }
}
async function boot() {
    const app = new App();
    const siteSelect = el("site-select");
    try {
        const { sites } = await api.listSites();
        for (const site of sites) {
            const opt = document.createElement("option");
            opt.value = site.site_id;
            opt.textContent = site.site_id;
            siteSelect.append(opt);
        }
        if (sites.length)
            await app.openSite(sites[0].site_id);
    }
    catch (err) {
        setStatus(err instanceof ApiError ? `${err.code}: ${err.message}` : "cannot reach service", true);
    }
    siteSelect.addEventListener("change", () => void app.openSite(siteSelect.value));
    el("save-pairs").addEventListener("click", async () => {
        if (!app.controller)
            return;
        try {
            const n = await app.controller.save();
            setStatus(`saved ${n} pairs`);
        }
        catch (err) {
            setStatus(err instanceof ApiError ? `${err.code}: ${err.message}` : String(err), true);
        }
    });
    el("estimate").addEventListener("click", () => void app.runEstimate());
    const alpha = el("alpha");
    alpha.addEventListener("input", async () => {
        if (!app.controller)
            return;
        app.controller.setAlpha(Number(alpha.value));
        if (app.controller.overlayUrl) {
            app.overlayImage = await loadImage(app.controller.overlayUrl);
            app.repaint();
        }
    });
    el("show-overlay").addEventListener("change", (ev) => {
        app.showOverlay = ev.target.checked;
        app.repaint();
    });
    for (const mode of ["stop_bar", "median"]) {
        el(`draw-${mode}`).addEventListener("click", () => {
            app.draft.beginMode(mode);
            app.renderAnnotationControls();
        });
    }
    el("finish-median").addEventListener("click", () => {
        const err = app.draft.finishMedian();
        if (err)
            setStatus(err, true);
        app.renderAnnotationControls();
        app.repaint();
    });
    el("analysis-side").addEventListener("change", (ev) => {
        app.draft.analysisSide = ev.target.value;
    });
    el("save-annotations").addEventListener("click", () => void app.saveAnnotations());
    el("scrubber").addEventListener("input", (ev) => {
        app.tracksViewer.scrub(Number(ev.target.value));
        app.renderScrubber();
        app.repaint();
    });
    for (const severity of SEVERITIES) {
        const box = el(`sev-${severity}`);
        box.addEventListener("change", () => {
            app.tracksViewer.setSeverityVisible(severity, box.checked);
            app.renderEventList();
            app.repaint();
        });
    }
    el("reload-tracks").addEventListener("click", () => void app.refreshTracks());
}
document.addEventListener("DOMContentLoaded", () => void boot());
