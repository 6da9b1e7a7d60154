// HTTP client for the inference service, plus the debounce/supersede
// scheduler that keeps model previews to one request in flight.

import {
    ExtractResponseWire,
    LightListingWire,
    TransferRequestWire,
    TransferResponseWire,
} from "./wire.js";

export class ServiceError extends Error {
    constructor(public status: number, detail: string) {
        super(detail);
    }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
    let resp: Response;
    try {
        resp = await fetch(url, init);
    } catch (e) {
        throw new ServiceError(0, `service unreachable: ${e}`);
    }
    const body = await resp.json().catch(() => ({}));
    if (!resp.ok) {
        const detail = typeof body?.detail === "string" ? body.detail : resp.statusText;
        throw new ServiceError(resp.status, detail);
    }
    return body as T;
}

export class ServiceClient {
    // Default "" keeps requests same-origin (the dev server proxies /api).
    constructor(public baseUrl: string = "") {}

    private url(path: string): string {
        const base = this.baseUrl.replace(/\/$/, "");
        return base ? base + path : "/api" + path;
    }

    health(): Promise<{ status: string; bundle: unknown; extraction: unknown }> {
        return request(this.url("/health"));
    }

    lights(): Promise<LightListingWire[]> {
        return request(this.url("/lights"));
    }

    extract(imageB64: string, kind: string | null, seed: number, nSteps: number):
        Promise<ExtractResponseWire> {
        const payload: Record<string, unknown> = { image: imageB64, seed, n_steps: nSteps };
        if (kind) payload.kind = kind;
        return request(this.url("/extract"), {
            method: "POST",
            headers: { "content-type": "application/json" },
            body: JSON.stringify(payload),
        });
    }

    transfer(req: TransferRequestWire): Promise<TransferResponseWire> {
        return request(this.url("/transfer"), {
            method: "POST",
            headers: { "content-type": "application/json" },
            body: JSON.stringify(req),
        });
    }
}

export interface SchedulerCallbacks {
    onResult: (req: TransferRequestWire, resp: TransferResponseWire) => void;
    onError: (req: TransferRequestWire, err: unknown) => void;
    /** Called when a request actually leaves (after the debounce). */
    onBusy?: (busy: boolean) => void;
}

/**
 * Latest-wins preview scheduling. Rapid transform edits collapse into
 * one request after `delayMs` of quiet; while a request is in flight,
 * newer edits replace the pending slot instead of stacking, and a
 * result is only delivered when no newer request is waiting behind it.
 */
export class PreviewScheduler {
    private timer: ReturnType<typeof setTimeout> | null = null;
    private inflight = false;
    private pending: TransferRequestWire | null = null;

    constructor(
        private send: (req: TransferRequestWire) => Promise<TransferResponseWire>,
        private cb: SchedulerCallbacks,
        private delayMs = 250,
    ) {}

    schedule(req: TransferRequestWire): void {
        if (this.timer !== null) clearTimeout(this.timer);
        this.timer = setTimeout(() => {
            this.timer = null;
            this.launch(req);
        }, this.delayMs);
    }

    /** Skip the debounce; used for explicit "preview now" actions. */
    flush(req: TransferRequestWire): void {
        if (this.timer !== null) {
            clearTimeout(this.timer);
            this.timer = null;
        }
        this.launch(req);
    }

    get busy(): boolean {
        return this.inflight;
    }

    private launch(req: TransferRequestWire): void {
        if (this.inflight) {
            this.pending = req; // supersede whatever was waiting
            return;
        }
        this.inflight = true;
        this.cb.onBusy?.(true);
        this.send(req).then(
            (resp) => this.settle(req, resp, null),
            (err) => this.settle(req, null, err),
        );
    }

    private settle(
        req: TransferRequestWire,
        resp: TransferResponseWire | null,
        err: unknown,
    ): void {
        this.inflight = false;
        const next = this.pending;
        this.pending = null;
        if (next !== null) {
            // A newer edit superseded this response; drop it unseen.
            this.launch(next);
            return;
        }
        this.cb.onBusy?.(false);
        if (resp !== null) this.cb.onResult(req, resp);
        else this.cb.onError(req, err);
    }
}
