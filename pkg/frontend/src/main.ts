// Page wiring: DOM events in, editor calls out, canvases repainted.

import { PreviewScheduler, ServiceClient, ServiceError } from "./api.js";
import { Editor, LightRef } from "./editor.js";
import { FloatRaster, fromImageData, toImageData } from "./raster.js";
import { base64ToBytes, bytesToBase64 } from "./wire.js";

const editor = new Editor();
let client = new ServiceClient();

const $ = <T extends HTMLElement>(id: string): T => {
    const el = document.getElementById(id);
    if (!el) throw new Error(`missing element #${id}`);
    return el as T;
};

const overlayCanvas = $<HTMLCanvasElement>("overlay-canvas");
const modelCanvas = $<HTMLCanvasElement>("model-canvas");
const banner = $<HTMLDivElement>("banner");
const spinner = $<HTMLSpanElement>("model-spinner");

function showBanner(msg: string): void {
    banner.textContent = msg;
    banner.hidden = false;
}

function clearBanner(): void {
    banner.hidden = true;
}

function describeError(err: unknown): string {
    if (err instanceof ServiceError) {
        if (err.status === 503) return "model not loaded on the service";
        if (err.status === 409) return `size mismatch: ${err.message}`;
        if (err.status === 0) return err.message;
        return err.message;
    }
    return String(err);
}

// PNG bytes -> float raster via an offscreen canvas. The browser
// quantizes to 8 bits here; that only affects the on-screen preview,
// requests carry the original bytes.
async function decodePng(bytes: Uint8Array): Promise<FloatRaster> {
    const blob = new Blob([bytes.buffer as ArrayBuffer], { type: "image/png" });
    const bitmap = await createImageBitmap(blob);
    const cv = document.createElement("canvas");
    cv.width = bitmap.width;
    cv.height = bitmap.height;
    const ctx = cv.getContext("2d")!;
    ctx.drawImage(bitmap, 0, 0);
    return fromImageData(ctx.getImageData(0, 0, cv.width, cv.height));
}

function paint(canvas: HTMLCanvasElement, raster: FloatRaster): void {
    canvas.width = raster.width;
    canvas.height = raster.height;
    canvas.getContext("2d")!.putImageData(toImageData(raster), 0, 0);
}

function repaintOverlay(): void {
    const composite = editor.overlay();
    if (composite) paint(overlayCanvas, composite);
    else if (editor.content) paint(overlayCanvas, editor.content.raster);
    const t = editor.transform;
    const readout = $<HTMLDivElement>("transform-readout");
    readout.textContent =
        `dx ${t.dx}, dy ${t.dy}, turns ${t.quarter_turns}` +
        `${t.hflip ? ", hflip" : ""}${t.vflip ? ", vflip" : ""}` +
        (editor.wasClamped ? "  (clamped)" : "");
    readout.classList.toggle("clamped", editor.wasClamped);
    $<HTMLSpanElement>("intensity-value").textContent = t.intensity.toFixed(2);
    ($("intensity") as HTMLInputElement).value = String(t.intensity);
}

function refreshSessionButtons(): void {
    ($("commit") as HTMLButtonElement).disabled = !editor.canCommit;
    ($("export") as HTMLButtonElement).disabled = !editor.canExport;
    ($("hist-back") as HTMLButtonElement).disabled = !editor.history.canBack();
    ($("hist-forward") as HTMLButtonElement).disabled = !editor.history.canForward();
    const readout = $<HTMLDivElement>("history-readout");
    readout.textContent = editor.history.length
        ? `history ${editor.history.position + 1} / ${editor.history.length}`
        : "history empty";
}

const scheduler = new PreviewScheduler(
    (req) => client.transfer(req),
    {
        onResult: (req, resp) => {
            editor.acceptPreview(req, resp);
            void decodePng(base64ToBytes(resp.result)).then((raster) => {
                paint(modelCanvas, raster);
                refreshSessionButtons();
            });
            clearBanner();
        },
        onError: (_req, err) => showBanner(`preview failed: ${describeError(err)}`),
        onBusy: (busy) => { spinner.hidden = !busy; },
    },
    300,
);

function requestModelPreview(immediate = false): void {
    const req = editor.wireRequest();
    if (!req) return;
    if (immediate) scheduler.flush(req);
    else scheduler.schedule(req);
}

function afterTransformEdit(): void {
    repaintOverlay();
    requestModelPreview();
}

// --- content upload ---

$<HTMLInputElement>("content-file").addEventListener("change", async (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (!file) return;
    const bytes = new Uint8Array(await file.arrayBuffer());
    try {
        const raster = await decodePng(bytes);
        editor.loadContent(bytes, raster, file.name);
        clearBanner();
    } catch {
        showBanner(`could not decode ${file.name}: not a readable PNG`);
        return;
    }
    repaintOverlay();
    refreshSessionButtons();
    requestModelPreview(true);
});

// --- light library ---

async function refreshLights(): Promise<void> {
    let listing;
    try {
        listing = await client.lights();
    } catch (err) {
        showBanner(`could not list lights: ${describeError(err)}`);
        return;
    }
    const box = $<HTMLDivElement>("light-list");
    box.textContent = "";
    for (const item of listing) {
        const img = document.createElement("img");
        img.src = `data:image/png;base64,${item.thumbnail}`;
        img.title = item.id + (item.kind ? ` (${item.kind})` : "");
        img.addEventListener("click", async () => {
            const raster = await decodePng(base64ToBytes(item.thumbnail));
            selectLight({ id: item.id, kind: item.kind, pngB64: item.thumbnail, raster });
            box.querySelectorAll("img").forEach((n) => n.classList.remove("selected"));
            img.classList.add("selected");
        });
        box.appendChild(img);
    }
    if (!listing.length) box.textContent = "no lights on the service";
}

function selectLight(light: LightRef): void {
    editor.selectLight(light);
    repaintOverlay();
    refreshSessionButtons();
    requestModelPreview(true);
}

$("refresh-lights").addEventListener("click", () => void refreshLights());

// --- extraction ---

let extractUpload: Uint8Array | null = null;

$<HTMLInputElement>("extract-file").addEventListener("change", async (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    extractUpload = file ? new Uint8Array(await file.arrayBuffer()) : null;
    ($("extract-btn") as HTMLButtonElement).disabled = !extractUpload;
});

$("extract-btn").addEventListener("click", async () => {
    if (!extractUpload) return;
    const kind = ($("extract-kind") as HTMLSelectElement).value || null;
    try {
        const resp = await client.extract(
            bytesToBase64(extractUpload), kind, editor.seed, editor.nSteps);
        const raster = await decodePng(base64ToBytes(resp.light));
        selectLight({ id: null, kind: resp.kind, pngB64: resp.light, raster });
        clearBanner();
    } catch (err) {
        showBanner(`extraction failed: ${describeError(err)}`);
    }
});

// --- canvas drag ---

let drag: { lastX: number; lastY: number } | null = null;

overlayCanvas.addEventListener("pointerdown", (ev) => {
    if (!editor.light) return;
    drag = { lastX: ev.clientX, lastY: ev.clientY };
    overlayCanvas.setPointerCapture(ev.pointerId);
    overlayCanvas.classList.add("dragging");
});

overlayCanvas.addEventListener("pointermove", (ev) => {
    if (!drag || !editor.content) return;
    // Map CSS pixels to image pixels through the current scale.
    const rect = overlayCanvas.getBoundingClientRect();
    const sx = overlayCanvas.width / rect.width;
    const sy = overlayCanvas.height / rect.height;
    const dx = Math.round((ev.clientX - drag.lastX) * sx);
    const dy = Math.round((ev.clientY - drag.lastY) * sy);
    if (!dx && !dy) return;
    drag.lastX += dx / sx;
    drag.lastY += dy / sy;
    editor.dragLight(dx, dy);
    afterTransformEdit();
});

const endDrag = (ev: PointerEvent) => {
    if (!drag) return;
    drag = null;
    overlayCanvas.classList.remove("dragging");
    overlayCanvas.releasePointerCapture(ev.pointerId);
};
overlayCanvas.addEventListener("pointerup", endDrag);
overlayCanvas.addEventListener("pointercancel", endDrag);

// --- transform buttons ---

$("flip-h").addEventListener("click", () => { editor.toggleFlip("h"); afterTransformEdit(); });
$("flip-v").addEventListener("click", () => { editor.toggleFlip("v"); afterTransformEdit(); });
$("rotate").addEventListener("click", () => { editor.rotateQuarter(); afterTransformEdit(); });
$("reset").addEventListener("click", () => { editor.resetTransform(); afterTransformEdit(); });

$<HTMLInputElement>("intensity").addEventListener("input", (ev) => {
    editor.setIntensity(Number((ev.target as HTMLInputElement).value));
    afterTransformEdit();
});

$<HTMLInputElement>("seed").addEventListener("change", (ev) => {
    editor.seed = Math.trunc(Number((ev.target as HTMLInputElement).value)) || 0;
    requestModelPreview(true);
});

$<HTMLInputElement>("steps").addEventListener("change", (ev) => {
    const v = Math.trunc(Number((ev.target as HTMLInputElement).value));
    editor.nSteps = v >= 1 ? v : 1;
    (ev.target as HTMLInputElement).value = String(editor.nSteps);
    requestModelPreview(true);
});

// --- session ---

$("commit").addEventListener("click", () => {
    if (editor.commitPreview()) refreshSessionButtons();
});

function download(name: string, data: Blob): void {
    const a = document.createElement("a");
    a.href = URL.createObjectURL(data);
    a.download = name;
    a.click();
    URL.revokeObjectURL(a.href);
}

$("export").addEventListener("click", () => {
    const sidecar = editor.exportSession();
    if (!sidecar) return;
    download("relume-session.json",
        new Blob([JSON.stringify(sidecar, null, 1)], { type: "application/json" }));
    download("relume-result.png",
        new Blob([base64ToBytes(sidecar.result_png).buffer as ArrayBuffer], { type: "image/png" }));
});

function restoreFromHistory(moved: boolean): void {
    if (!moved) return;
    repaintOverlay();
    const entry = editor.lastPreview;
    if (entry) {
        void decodePng(base64ToBytes(entry.resultB64)).then((r) => paint(modelCanvas, r));
        ($("seed") as HTMLInputElement).value = String(entry.seed);
        ($("steps") as HTMLInputElement).value = String(entry.nSteps);
    }
    refreshSessionButtons();
}

$("hist-back").addEventListener("click", () => restoreFromHistory(editor.historyBack()));
$("hist-forward").addEventListener("click", () => restoreFromHistory(editor.historyForward()));

// --- service connection ---

async function connect(): Promise<void> {
    const url = ($("service-url") as HTMLInputElement).value.trim();
    client = new ServiceClient(url);
    const dot = $<HTMLSpanElement>("health-dot");
    const text = $<HTMLSpanElement>("health-text");
    try {
        const health = await client.health();
        const loaded = health.bundle !== "unloaded";
        dot.classList.toggle("ok", loaded);
        text.textContent = loaded ? "connected, model loaded" : "connected, model unloaded";
        clearBanner();
        await refreshLights();
    } catch (err) {
        dot.classList.remove("ok");
        text.textContent = "unreachable";
        showBanner(`health check failed: ${describeError(err)}`);
    }
}

$("connect-btn").addEventListener("click", () => void connect());

void connect();
