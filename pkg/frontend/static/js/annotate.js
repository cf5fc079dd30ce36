// matches the server's on-the-line tolerance so shading never disagrees
const ON_LINE_EPS = 1e-9;
/**
 * Which side of the median polyline a world point falls on, relative to the
 * nearest segment looking along vertex order. Display helper only: the
 * server makes the real side decision during ingest, with this same rule.
 */
export function sideOfMedian(median, p) {
    if (median.length < 2)
        throw new Error("median polyline needs at least 2 vertices");
    let bestI = 0;
    let bestD = Infinity;
    for (let i = 0; i < median.length - 1; i += 1) {
        const d = pointSegmentDistance(p, median[i], median[i + 1]);
        if (d < bestD) {
            bestD = d;
            bestI = i;
        }
    }
    const [ax, ay] = median[bestI];
    const [bx, by] = median[bestI + 1];
    if (ax === bx && ay === by)
        throw new Error(`median segment ${bestI} is zero-length`);
    const cross = (bx - ax) * (p.y - ay) - (by - ay) * (p.x - ax);
    if (Math.abs(cross) < ON_LINE_EPS)
        return "on";
    return cross > 0 ? "left" : "right";
}
function pointSegmentDistance(p, a, b) {
    const [ax, ay] = a;
    const [bx, by] = b;
    const dx = bx - ax;
    const dy = by - ay;
    const lenSq = dx * dx + dy * dy;
    let t = lenSq === 0 ? 0 : ((p.x - ax) * dx + (p.y - ay) * dy) / lenSq;
    t = Math.min(1, Math.max(0, t));
    const cx = ax + t * dx;
    const cy = ay + t * dy;
    return Math.hypot(p.x - cx, p.y - cy);
}
/**
 * In-progress site annotation: a two-click stop bar segment and a median
 * polyline drawn on the ortho pane, in world (ortho pixel) coordinates.
 * Zero-length geometry is rejected at click time, mirroring the server's
 * validation, so a bad document can never be sent.
 */
export class AnnotationDraft {
    constructor() {
        this.mode = null;
        this.stopBar = null;
        this.median = [];
        this.analysisSide = "both";
        this.stopBarStart = null;
    }
    beginMode(mode) {
        this.mode = mode;
        this.stopBarStart = null;
    }
    /** Returns an error string for the status line, or null when accepted. */
    addPoint(world) {
        if (this.mode === "stop_bar") {
            if (!this.stopBarStart) {
                this.stopBarStart = world;
                return null;
            }
            if (world.x === this.stopBarStart.x && world.y === this.stopBarStart.y) {
                return "stop bar cannot be zero-length";
            }
            this.stopBar = [this.stopBarStart, world];
            this.stopBarStart = null;
            this.mode = null;
            return null;
        }
        if (this.mode === "median") {
            const last = this.median[this.median.length - 1];
            if (last && last.x === world.x && last.y === world.y) {
                return "median vertices must be distinct";
            }
            this.median.push(world);
            return null;
        }
        return "pick a drawing mode first";
    }
    finishMedian() {
        if (this.median.length < 2)
            return "median needs at least 2 vertices";
        this.mode = null;
        return null;
    }
    /** Null when the draft is complete enough to save. */
    validate() {
        if (!this.stopBar)
            return "stop bar not drawn";
        if (this.median.length < 2)
            return "median needs at least 2 vertices";
        return null;
    }
    toDoc() {
        const problem = this.validate();
        if (problem)
            throw new Error(problem);
        const [a, b] = this.stopBar;
        return {
            stop_bar: [
                [a.x, a.y],
                [b.x, b.y],
            ],
            median_line: this.median.map((p) => [p.x, p.y]),
            analysis_side: this.analysisSide,
        };
    }
    loadDoc(doc) {
        this.stopBar = [
            { x: doc.stop_bar[0][0], y: doc.stop_bar[0][1] },
            { x: doc.stop_bar[1][0], y: doc.stop_bar[1][1] },
        ];
        this.median = doc.median_line.map(([x, y]) => ({ x, y }));
        this.analysisSide = doc.analysis_side;
        this.mode = null;
        this.stopBarStart = null;
    }
    /** True when a point should be shaded as part of the analyzed approach. */
    isOnAnalysisSide(p) {
        if (this.analysisSide === "both")
            return true;
        if (this.median.length < 2)
            return true;
        const verts = this.median.map((v) => [v.x, v.y]);
        return sideOfMedian(verts, p) === this.analysisSide;
    }
}
