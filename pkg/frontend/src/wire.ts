// Wire-level types shared with the inference service. Field names and
// value ranges mirror the server exactly; the server must accept a
// serialized TransformWire without modification.

export interface TransformWire {
    dx: number;
    dy: number;
    hflip: boolean;
    vflip: boolean;
    quarter_turns: number; // 0..3, counter-clockwise
    intensity: number; // >= 0; the UI caps the slider at 2
}

export const IDENTITY_TRANSFORM: TransformWire = {
    dx: 0,
    dy: 0,
    hflip: false,
    vflip: false,
    quarter_turns: 0,
    intensity: 1.0,
};

export const MAX_INTENSITY = 2.0;

export function cloneTransform(t: TransformWire): TransformWire {
    return { ...t };
}

export function transformsEqual(a: TransformWire, b: TransformWire): boolean {
    return (
        a.dx === b.dx &&
        a.dy === b.dy &&
        a.hflip === b.hflip &&
        a.vflip === b.vflip &&
        a.quarter_turns === b.quarter_turns &&
        a.intensity === b.intensity
    );
}

/**
 * Clamp a transform into the ranges the service accepts for a
 * width x height image: |dx| < width, |dy| < height (a light shifted
 * fully off-image is rejected server-side), quarter_turns mod 4,
 * intensity in [0, MAX_INTENSITY].
 *
 * Returns the clamped transform and whether anything changed, so the
 * UI can flag the correction.
 */
export function clampTransform(
    t: TransformWire,
    width: number,
    height: number,
): { value: TransformWire; clamped: boolean } {
    const out = cloneTransform(t);
    out.dx = Math.max(-(width - 1), Math.min(width - 1, Math.round(out.dx)));
    out.dy = Math.max(-(height - 1), Math.min(height - 1, Math.round(out.dy)));
    out.quarter_turns = ((Math.round(out.quarter_turns) % 4) + 4) % 4;
    out.intensity = Math.max(0, Math.min(MAX_INTENSITY, out.intensity));
    if (!Number.isFinite(out.intensity)) out.intensity = 1.0;
    return { value: out, clamped: !transformsEqual(out, t) };
}

// Request/response bodies. PNG payloads travel as base64 strings.

export interface TransferRequestWire {
    content: string;
    light: string;
    dx: number;
    dy: number;
    hflip: boolean;
    vflip: boolean;
    quarter_turns: number;
    intensity: number;
    seed: number;
    n_steps: number;
}

export interface TransferResponseWire {
    result: string;
    transform: TransformWire;
    seed: number;
    n_steps: number;
}

export interface ExtractResponseWire {
    light: string;
    kind: string | null;
    seed: number;
    n_steps: number;
}

export interface LightListingWire {
    id: string;
    kind: string | null;
    thumbnail: string;
}

/**
 * Exported session file: everything needed to replay one committed
 * preview through the command-line `infer` subcommand and get the
 * same pixels back. PNG fields hold the exact bytes that were sent
 * to (or received from) the service, never a re-encode.
 */
export interface SessionSidecar {
    version: 1;
    content_png: string;
    light_png: string;
    light_id: string | null;
    transform: TransformWire;
    seed: number;
    n_steps: number;
    result_png: string;
}

/**
 * Argument vector for `relume infer` that replays a sidecar. The
 * caller writes content_png/light_png to the two paths first.
 */
export function sidecarInferArgs(
    sidecar: SessionSidecar,
    paths: { config: string; content: string; light: string; out: string },
): string[] {
    const t = sidecar.transform;
    const args = [
        "infer",
        "--config", paths.config,
        "--content", paths.content,
        "--light", paths.light,
        "--dx", String(t.dx),
        "--dy", String(t.dy),
    ];
    if (t.hflip) args.push("--hflip");
    if (t.vflip) args.push("--vflip");
    args.push(
        "--turns", String(t.quarter_turns),
        "--intensity", String(t.intensity),
        "--steps", String(sidecar.n_steps),
        "--seed", String(sidecar.seed),
        "--out", paths.out,
    );
    return args;
}

// Base64 helpers that work in both the browser and node.

export function bytesToBase64(bytes: Uint8Array): string {
    const buf = (globalThis as any).Buffer;
    if (buf) return buf.from(bytes).toString("base64");
    let bin = "";
    const chunk = 0x8000; // String.fromCharCode arg limit
    for (let i = 0; i < bytes.length; i += chunk) {
        bin += String.fromCharCode(...bytes.subarray(i, i + chunk));
    }
    return btoa(bin);
}

export function base64ToBytes(b64: string): Uint8Array {
    const buf = (globalThis as any).Buffer;
    if (buf) return new Uint8Array(buf.from(b64, "base64"));
    const bin = atob(b64);
    const out = new Uint8Array(bin.length);
    for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
    return out;
}
