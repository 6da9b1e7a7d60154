// Editor state machine, kept free of DOM so the behavior is testable
// headlessly. The page layer owns rendering and event wiring only.

import { FloatRaster } from "./raster.js";
import { compositePreview } from "./overlay.js";
import { History } from "./history.js";
import {
    IDENTITY_TRANSFORM,
    SessionSidecar,
    TransferRequestWire,
    TransferResponseWire,
    TransformWire,
    bytesToBase64,
    clampTransform,
    cloneTransform,
} from "./wire.js";

export interface ContentImage {
    /** Exact bytes of the uploaded file; these go on the wire and into
     * exports untouched so a CLI replay reads the same pixels. */
    png: Uint8Array;
    raster: FloatRaster;
    name: string;
}

export interface LightRef {
    id: string | null; // preset id, or null for a freshly extracted light
    kind: string | null;
    pngB64: string; // exact base64 payload as served, never re-encoded
    raster: FloatRaster;
}

/** One committed model preview; self-contained for export. */
export interface PreviewEntry {
    contentB64: string;
    lightB64: string;
    lightId: string | null;
    transform: TransformWire;
    seed: number;
    nSteps: number;
    resultB64: string;
}

export class Editor {
    content: ContentImage | null = null;
    light: LightRef | null = null;
    transform: TransformWire = cloneTransform(IDENTITY_TRANSFORM);
    seed = 0;
    nSteps = 20;
    /** Latest model preview received, committed or not. */
    lastPreview: PreviewEntry | null = null;
    history = new History<PreviewEntry>();
    /** Set when the last edit had to be clamped into range. */
    wasClamped = false;

    loadContent(png: Uint8Array, raster: FloatRaster, name: string): void {
        this.content = { png, raster, name };
        this.transform = cloneTransform(IDENTITY_TRANSFORM);
        this.lastPreview = null;
        this.wasClamped = false;
    }

    selectLight(light: LightRef): void {
        this.light = light;
        this.lastPreview = null;
    }

    private applyClamped(t: TransformWire): void {
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

    dragLight(dx: number, dy: number): void {
        const t = cloneTransform(this.transform);
        t.dx += dx;
        t.dy += dy;
        this.applyClamped(t);
    }

    toggleFlip(axis: "h" | "v"): void {
        const t = cloneTransform(this.transform);
        if (axis === "h") t.hflip = !t.hflip;
        else t.vflip = !t.vflip;
        this.applyClamped(t);
    }

    rotateQuarter(): void {
        const t = cloneTransform(this.transform);
        t.quarter_turns = (t.quarter_turns + 1) % 4;
        this.applyClamped(t);
    }

    setIntensity(v: number): void {
        const t = cloneTransform(this.transform);
        t.intensity = v;
        this.applyClamped(t);
    }

    resetTransform(): void {
        this.transform = cloneTransform(IDENTITY_TRANSFORM);
        this.wasClamped = false;
    }

    /** Instant client-side composite, or null before both images exist. */
    overlay(): FloatRaster | null {
        if (!this.content || !this.light) return null;
        return compositePreview(this.content.raster, this.light.raster, this.transform);
    }

    /** Snapshot the current state as a transfer request body. */
    wireRequest(): TransferRequestWire | null {
        if (!this.content || !this.light) return null;
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
    acceptPreview(req: TransferRequestWire, resp: TransferResponseWire): void {
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

    get canCommit(): boolean {
        return this.lastPreview !== null;
    }

    commitPreview(): boolean {
        if (!this.lastPreview) return false;
        this.history.push(this.lastPreview);
        return true;
    }

    get canExport(): boolean {
        return this.lastPreview !== null;
    }

    exportSession(): SessionSidecar | null {
        const p = this.lastPreview;
        if (!p) return null;
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
    historyBack(): boolean {
        return this.restore(this.history.back());
    }

    historyForward(): boolean {
        return this.restore(this.history.forward());
    }

    private restore(entry: PreviewEntry | null): boolean {
        if (!entry) return false;
        this.transform = cloneTransform(entry.transform);
        this.seed = entry.seed;
        this.nSteps = entry.nSteps;
        this.lastPreview = entry;
        this.wasClamped = false;
        return true;
    }

    /** Stable fingerprint of the editable state; identical loads hash equal. */
    stateFingerprint(): string {
        let h = fnv1a("", JSON.stringify({
            transform: this.transform,
            seed: this.seed,
            nSteps: this.nSteps,
            lightId: this.light ? this.light.id : null,
        }));
        if (this.content) h = fnv1a(h, this.content.png);
        if (this.light) h = fnv1a(h, this.light.pngB64);
        return h;
    }
}

function fnv1a(seed: string, data: string | Uint8Array): string {
    let h = 0x811c9dc5 ^ (seed ? parseInt(seed, 16) : 0);
    const step = (byte: number) => {
        h ^= byte;
        h = Math.imul(h, 0x01000193) >>> 0;
    };
    if (typeof data === "string") {
        for (let i = 0; i < data.length; i++) step(data.charCodeAt(i) & 0xff);
    } else {
        for (let i = 0; i < data.length; i++) step(data[i]);
    }
    return h.toString(16).padStart(8, "0");
}
