export class ApiError extends Error {
    constructor(status, code, message, details = {}) {
        super(message);
        this.status = status;
        this.code = code;
        this.details = details;
        this.name = "ApiError";
    }
}
/**
 * Thin typed wrapper over the service endpoints. Holds no state and does
 * no math; error bodies become ApiError with the server's code intact.
 */
export class ApiClient {
    constructor(base = "", fetchImpl = (input, init) => fetch(input, init)) {
        this.base = base;
        this.fetchImpl = fetchImpl;
    }
    async request(method, path, body) {
        const init = { method };
        if (body !== undefined) {
            init.headers = { "content-type": "application/json" };
            init.body = JSON.stringify(body);
        }
        const resp = await this.fetchImpl(this.base + path, init);
        if (!resp.ok) {
            let code = "error";
            let message = `HTTP ${resp.status}`;
            let details = {};
            try {
                const doc = await resp.json();
                if (typeof doc.code === "string")
                    code = doc.code;
                if (typeof doc.message === "string")
                    message = doc.message;
                if (doc.details && typeof doc.details === "object")
                    details = doc.details;
            }
            catch {
                // non-JSON error body; keep the HTTP status message
            }
            throw new ApiError(resp.status, code, message, details);
        }
        return (await resp.json());
    }
    listSites() {
        return this.request("GET", "/sites");
    }
    getSite(siteId) {
        return this.request("GET", `/sites/${encodeURIComponent(siteId)}`);
    }
    putPairs(siteId, doc) {
        return this.request("PUT", `/sites/${encodeURIComponent(siteId)}/pairs`, doc);
    }
    getPairs(siteId) {
        return this.request("GET", `/sites/${encodeURIComponent(siteId)}/pairs`);
    }
    putAnnotations(siteId, doc) {
        return this.request("PUT", `/sites/${encodeURIComponent(siteId)}/annotations`, doc);
    }
    getAnnotations(siteId) {
        return this.request("GET", `/sites/${encodeURIComponent(siteId)}/annotations`);
    }
    estimate(siteId, overrides = {}) {
        return this.request("POST", `/sites/${encodeURIComponent(siteId)}/estimate`, overrides);
    }
    getEvents(siteId, query = {}) {
        const params = new URLSearchParams();
        if (query.severity !== undefined)
            params.set("severity", query.severity);
        if (query.t_from !== undefined)
            params.set("t_from", String(query.t_from));
        if (query.t_to !== undefined)
            params.set("t_to", String(query.t_to));
        const qs = params.toString();
        return this.request("GET", `/sites/${encodeURIComponent(siteId)}/events${qs ? "?" + qs : ""}`);
    }
    getTracks(siteId, videoId) {
        const qs = videoId !== undefined ? `?video_id=${encodeURIComponent(videoId)}` : "";
        return this.request("GET", `/sites/${encodeURIComponent(siteId)}/tracks${qs}`);
    }
    // image endpoints are consumed via <img src>, so only the URLs are built here
    orthoUrl(siteId) {
        return `${this.base}/sites/${encodeURIComponent(siteId)}/ortho`;
    }
    cameraFrameUrl(siteId) {
        return `${this.base}/sites/${encodeURIComponent(siteId)}/camera-frame`;
    }
    overlayUrl(siteId, alpha) {
        return `${this.base}/sites/${encodeURIComponent(siteId)}/overlay?alpha=${alpha}`;
    }
}
