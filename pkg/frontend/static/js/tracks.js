export const SEVERITIES = ["mild", "moderate", "severe"];
// selected braking vehicle draws yellow, everything else green
export const SELECTED_COLOR = "#f4c542";
export const UNSELECTED_COLOR = "#3fa45b";
export const SEVERITY_COLORS = {
    mild: "#7bc74d",
    moderate: "#e89b2d",
    severe: "#d64545",
};
export function eventKey(ev) {
    return `${ev.video_id}/${ev.track_id}/${ev.t_start}`;
}
export function trackKey(videoId, trackId) {
    return `${videoId}/${trackId}`;
}
/**
 * Trajectory playback state over one site's ingested window.
 *
 * Selecting an event highlights that vehicle's trajectory and seeks the
 * scrubber to the event onset; scrubbing reveals trajectory points up to
 * the cursor. Severities, distances, and times all come from the server
 * rows untouched.
 */
export class TracksViewer {
    constructor() {
        this.events = [];
        this.tracks = [];
        this.cursor = 0;
        this.selected = null;
        this.severityFilter = new Set(SEVERITIES);
    }
    load(events, tracks) {
        this.events = events.slice().sort((a, b) => a.t_start - b.t_start || a.track_id - b.track_id);
        this.tracks = tracks;
        this.selected = null;
        this.cursor = this.windowStart;
    }
    get windowStart() {
        const starts = this.tracks.map((t) => t.t_first);
        if (!starts.length)
            return this.events.length ? this.events[0].t_start : 0;
        return Math.min(...starts);
    }
    get windowEnd() {
        const ends = this.tracks.map((t) => t.t_last);
        if (!ends.length)
            return this.events.length ? this.events[this.events.length - 1].t_end : 0;
        return Math.max(...ends);
    }
    visibleEvents() {
        return this.events.filter((ev) => this.severityFilter.has(ev.severity));
    }
    setSeverityVisible(severity, visible) {
        if (visible)
            this.severityFilter.add(severity);
        else
            this.severityFilter.delete(severity);
        if (this.selected && !this.severityFilter.has(this.selected.severity)) {
            this.selected = null;
        }
    }
    /** Select an event and seek the scrubber to its onset. */
    selectEvent(ev) {
        this.selected = ev;
        this.cursor = ev.t_start;
    }
    clearSelection() {
        this.selected = null;
    }
    colorOf(track) {
        if (this.selected &&
            this.selected.video_id === track.video_id &&
            this.selected.track_id === track.track_id) {
            return SELECTED_COLOR;
        }
        return UNSELECTED_COLOR;
    }
    scrub(t) {
        this.cursor = Math.min(this.windowEnd, Math.max(this.windowStart, t));
    }
    /** Trajectory points revealed so far: those with t <= cursor. */
    visiblePoints(track) {
        const { t, x, y } = track.points_blob;
        const out = [];
        for (let i = 0; i < t.length; i += 1) {
            if (t[i] > this.cursor)
                break; // points are time-ordered
            out.push({ x: x[i], y: y[i] });
        }
        return out;
    }
}
