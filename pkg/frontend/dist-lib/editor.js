// Editor state machine, kept free of DOM so the behavior is testable
// headlessly. The page layer owns rendering and event wiring only.
import { compositePreview } from "./overlay.js";
import { History } from "./history.js";
import { IDENTITY_TRANSFORM, bytesToBase64, clampTransform, cloneTransform, } from "./wire.js";
export class Editor {
    content = null;
    light = null;
    transform = cloneTransform(IDENTITY_TRANSFORM);
    seed = 0;
    nSteps = 20;
    /** Latest model preview received, committed or not. */
    lastPreview = null;
    history = new History();
    /** Set when the last edit had to be clamped into range. */
    wasClamped = false;
    loadContent(png, raster, name) {
        this.content = { png, raster, name };
        this.transform = cloneTransform(IDENTITY_TRANSFORM);
        this.lastPreview = null;
        this.wasClamped = false;
    }
    selectLight(light) {
        this.light = light;
        this.lastPreview = null;
    }
    applyClamped(t) {
        if (!this.content) {
            this.transform = t;
            this.wasClamped = false;
            return;
        }
        const { width, height } = this.content.raster;
        const res = clampTransform(t, width, height);
        this.transform = res.value;
        this.wasClamped = res.clamped;
    }
    dragLight(dx, dy) {
        const t = cloneTransform(this.transform);
        t.dx += dx;
        t.dy += dy;
        this.applyClamped(t);
    }
    toggleFlip(axis) {
        const t = cloneTransform(this.transform);
        if (axis === "h")
            t.hflip = !t.hflip;
        else
            t.vflip = !t.vflip;
        this.applyClamped(t);
    }
    rotateQuarter() {
        const t = cloneTransform(this.transform);
        t.quarter_turns = (t.quarter_turns + 1) % 4;
        this.applyClamped(t);
    }
    setIntensity(v) {
        const t = cloneTransform(this.transform);
        t.intensity = v;
        this.applyClamped(t);
    }
    resetTransform() {
        this.transform = cloneTransform(IDENTITY_TRANSFORM);
        this.wasClamped = false;
    }
    /** Instant client-side composite, or null before both images exist. */
    overlay() {
        if (!this.content || !this.light)
            return null;
        return compositePreview(this.content.raster, this.light.raster, this.transform);
    }
    /** Snapshot the current state as a transfer request body. */
    wireRequest() {
        if (!this.content || !this.light)
            return null;
        return {
            content: bytesToBase64(this.content.png),
            light: this.light.pngB64,
            dx: this.transform.dx,
            dy: this.transform.dy,
            hflip: this.transform.hflip,
            vflip: this.transform.vflip,
            quarter_turns: this.transform.quarter_turns,
            intensity: this.transform.intensity,
            seed: this.seed,
            n_steps: this.nSteps,
        };
    }
    /**
     * Record a finished model preview. The entry captures the request's
     * own payloads, not current editor state, so a preview that raced a
     * light swap still exports the inputs it was computed from.
     */
    acceptPreview(req, resp) {
        this.lastPreview = {
            contentB64: req.content,
            lightB64: req.light,
            lightId: this.light && this.light.pngB64 === req.light ? this.light.id : null,
            transform: cloneTransform(resp.transform),
            seed: resp.seed,
            nSteps: resp.n_steps,
            resultB64: resp.result,
        };
    }
    get canCommit() {
        return this.lastPreview !== null;
    }
    commitPreview() {
        if (!this.lastPreview)
            return false;
        this.history.push(this.lastPreview);
        return true;
    }
    get canExport() {
        return this.lastPreview !== null;
    }
    exportSession() {
        const p = this.lastPreview;
        if (!p)
            return null;
        return {
            version: 1,
            content_png: p.contentB64,
            light_png: p.lightB64,
            light_id: p.lightId,
            transform: cloneTransform(p.transform),
            seed: p.seed,
            n_steps: p.nSteps,
            result_png: p.resultB64,
        };
    }
    /** Step through history, restoring both transform and preview. */
    historyBack() {
        return this.restore(this.history.back());
    }
    historyForward() {
        return this.restore(this.history.forward());
    }
    restore(entry) {
        if (!entry)
            return false;
        this.transform = cloneTransform(entry.transform);
        this.seed = entry.seed;
        this.nSteps = entry.nSteps;
        this.lastPreview = entry;
        this.wasClamped = false;
        return true;
    }
    /** Stable fingerprint of the editable state; identical loads hash equal. */
    stateFingerprint() {
        let h = fnv1a("", JSON.stringify({
            transform: this.transform,
            seed: this.seed,
            nSteps: this.nSteps,
            lightId: this.light ? this.light.id : null,
        }));
        if (this.content)
            h = fnv1a(h, this.content.png);
        if (this.light)
            h = fnv1a(h, this.light.pngB64);
        return h;
    }
}
function fnv1a(seed, data) {
    let h = 0x811c9dc5 ^ (seed ? parseInt(seed, 16) : 0);
    const step = (byte) => {
        h ^= byte;
        h = Math.imul(h, 0x01000193) >>> 0;
    };
    if (typeof data === "string") {
        for (let i = 0; i < data.length; i++)
            step(data.charCodeAt(i) & 0xff);
    }
    else {
        for (let i = 0; i < data.length; i++)
            step(data[i]);
    }
    return h.toString(16).padStart(8, "0");
}
