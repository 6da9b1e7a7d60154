// Shared test fixtures: a tiny seeded PRNG (mulberry32) so raster
// fixtures are reproducible across runs, plus raster builders.

import { FloatRaster, makeRaster } from "../src/raster.js";
import { TransformWire } from "../src/wire.js";

export function rng(seed: number): () => number {
    let a = seed >>> 0;
    return () => {
        a = (a + 0x6d2b79f5) >>> 0;
        let t = a;
        t = Math.imul(t ^ (t >>> 15), t | 1);
        t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
        return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
    };
}

export function randomRaster(width: number, height: number, rand: () => number): FloatRaster {
    const r = makeRaster(width, height);
    for (let i = 0; i < r.data.length; i++) {
        // Quantize to the u16 grid the wire format uses.
        r.data[i] = Math.round(rand() * 65535) / 65535;
    }
    return r;
}

export function randomTransform(
    width: number,
    height: number,
    rand: () => number,
): TransformWire {
    return {
        dx: Math.floor(rand() * (2 * width - 1)) - (width - 1),
        dy: Math.floor(rand() * (2 * height - 1)) - (height - 1),
        hflip: rand() < 0.5,
        vflip: rand() < 0.5,
        quarter_turns: Math.floor(rand() * 4),
        intensity: Math.round(rand() * 200) / 100, // [0, 2] in cents
    };
}

export function maxAbsDiff(a: FloatRaster, b: FloatRaster): number {
    if (a.data.length !== b.data.length) throw new Error("dim mismatch");
    let worst = 0;
    for (let i = 0; i < a.data.length; i++) {
        const d = Math.abs(a.data[i] - b.data[i]);
        if (d > worst) worst = d;
    }
    return worst;
}
