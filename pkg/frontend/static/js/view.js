export const MIN_SCALE = 0.05;
export const MAX_SCALE = 64;
/**
 * Pan/zoom state for one canvas pane: screen = world * scale + offset.
 *
 * "World" here means source-image pixels (camera frame or ortho raster).
 * Every click handler converts through toWorld before any state is stored,
 * so pairing and annotation coordinates are zoom-independent.
 */
export class ViewTransform {
    constructor() {
        this.scale = 1;
        this.offsetX = 0;
        this.offsetY = 0;
    }
    toScreen(p) {
        return { x: p.x * this.scale + this.offsetX, y: p.y * this.scale + this.offsetY };
    }
    toWorld(p) {
        return { x: (p.x - this.offsetX) / this.scale, y: (p.y - this.offsetY) / this.scale };
    }
    panBy(dxScreen, dyScreen) {
        this.offsetX += dxScreen;
        this.offsetY += dyScreen;
    }
    /** Zoom by factor keeping the world point under `anchor` fixed on screen. */
    zoomAt(anchor, factor) {
        const next = Math.min(MAX_SCALE, Math.max(MIN_SCALE, this.scale * factor));
        const applied = next / this.scale;
        if (applied === 1)
            return;
        this.offsetX = anchor.x - (anchor.x - this.offsetX) * applied;
        this.offsetY = anchor.y - (anchor.y - this.offsetY) * applied;
        this.scale = next;
    }
    /** Center the image in the viewport at the largest whole-image scale. */
    fit(imageW, imageH, viewW, viewH, margin = 0) {
        const availW = Math.max(1, viewW - 2 * margin);
        const availH = Math.max(1, viewH - 2 * margin);
        this.scale = Math.min(MAX_SCALE, Math.max(MIN_SCALE, Math.min(availW / imageW, availH / imageH)));
        this.offsetX = (viewW - imageW * this.scale) / 2;
        this.offsetY = (viewH - imageH * this.scale) / 2;
    }
    applyTo(ctx) {
        ctx.setTransform(this.scale, 0, 0, this.scale, this.offsetX, this.offsetY);
    }
}
