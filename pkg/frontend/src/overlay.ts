// Client-side additive preview.
//
// The server composites clamp(content + clamp(intensity * G(light)))
// where G applies, in fixed order: horizontal flip, vertical flip,
// counter-clockwise quarter turns, then translation with zero fill.
// This module repeats that pipeline step for step; the two sides must
// stay within 1/255 per channel, so any change here has to track the
// server math exactly.

import { FloatRaster, makeRaster, sameDims, clamp01 } from "./raster.js";
import { TransformWire } from "./wire.js";

function hflip(r: FloatRaster): FloatRaster {
    const out = makeRaster(r.width, r.height);
    for (let y = 0; y < r.height; y++) {
        for (let x = 0; x < r.width; x++) {
            const src = (y * r.width + (r.width - 1 - x)) * 3;
            const dst = (y * r.width + x) * 3;
            out.data[dst] = r.data[src];
            out.data[dst + 1] = r.data[src + 1];
            out.data[dst + 2] = r.data[src + 2];
        }
    }
    return out;
}

function vflip(r: FloatRaster): FloatRaster {
    const out = makeRaster(r.width, r.height);
    for (let y = 0; y < r.height; y++) {
        const src = (r.height - 1 - y) * r.width * 3;
        const dst = y * r.width * 3;
        out.data.set(r.data.subarray(src, src + r.width * 3), dst);
    }
    return out;
}

// One counter-clockwise quarter turn: out[i][j] = in[j][W-1-i].
// Output dims are (W, H); square images keep their shape.
function rot90ccw(r: FloatRaster): FloatRaster {
    const out = makeRaster(r.height, r.width);
    for (let i = 0; i < out.height; i++) {
        for (let j = 0; j < out.width; j++) {
            const src = (j * r.width + (r.width - 1 - i)) * 3;
            const dst = (i * out.width + j) * 3;
            out.data[dst] = r.data[src];
            out.data[dst + 1] = r.data[src + 1];
            out.data[dst + 2] = r.data[src + 2];
        }
    }
    return out;
}

function translate(r: FloatRaster, dx: number, dy: number): FloatRaster {
    if (Math.abs(dx) >= r.width || Math.abs(dy) >= r.height) {
        throw new Error(`translation (${dx}, ${dy}) out of range for ${r.height}x${r.width} image`);
    }
    const out = makeRaster(r.width, r.height); // zero fill: black is the additive identity
    for (let y = 0; y < r.height; y++) {
        const sy = y - dy;
        if (sy < 0 || sy >= r.height) continue;
        for (let x = 0; x < r.width; x++) {
            const sx = x - dx;
            if (sx < 0 || sx >= r.width) continue;
            const src = (sy * r.width + sx) * 3;
            const dst = (y * r.width + x) * 3;
            out.data[dst] = r.data[src];
            out.data[dst + 1] = r.data[src + 1];
            out.data[dst + 2] = r.data[src + 2];
        }
    }
    return out;
}

/** Geometric + intensity transform of a light image, server order. */
export function transformLight(light: FloatRaster, t: TransformWire): FloatRaster {
    let out = light;
    if (t.hflip) out = hflip(out);
    if (t.vflip) out = vflip(out);
    for (let k = 0; k < ((t.quarter_turns % 4) + 4) % 4; k++) out = rot90ccw(out);
    out = translate(out, t.dx, t.dy);
    const scaled = makeRaster(out.width, out.height);
    for (let i = 0; i < out.data.length; i++) {
        scaled.data[i] = clamp01(out.data[i] * t.intensity);
    }
    return scaled;
}

/**
 * The instant overlay shown while dragging:
 * clamp(content + transformLight(light, t), 0, 1).
 */
export function compositePreview(
    content: FloatRaster,
    light: FloatRaster,
    t: TransformWire,
): FloatRaster {
    const moved = transformLight(light, t);
    if (!sameDims(content, moved)) {
        throw new Error(
            `content ${content.height}x${content.width} and light ` +
            `${moved.height}x${moved.width} dimensions do not match`);
    }
    const out = makeRaster(content.width, content.height);
    for (let i = 0; i < out.data.length; i++) {
        out.data[i] = clamp01(content.data[i] + moved.data[i]);
    }
    return out;
}
