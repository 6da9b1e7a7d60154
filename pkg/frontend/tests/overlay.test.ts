import { describe, expect, it } from "vitest";
import { compositePreview, transformLight } from "../src/overlay.js";
import { FloatRaster, clamp01, makeRaster } from "../src/raster.js";
import { TransformWire } from "../src/wire.js";
import { maxAbsDiff, randomRaster, randomTransform, rng } from "./helpers.js";

// Independent reference: scatter each source pixel through the
// coordinate maps in float64, instead of materializing per-op arrays.
// Agreement between the two styles pins the geometry.
function referenceComposite(
    content: FloatRaster,
    light: FloatRaster,
    t: TransformWire,
): FloatRaster {
    const turns = ((t.quarter_turns % 4) + 4) % 4;
    const acc = new Float64Array(content.data.length);
    for (let r0 = 0; r0 < light.height; r0++) {
        for (let c0 = 0; c0 < light.width; c0++) {
            let r = r0;
            let c = c0;
            let ch = light.height;
            let cw = light.width;
            if (t.hflip) c = cw - 1 - c;
            if (t.vflip) r = ch - 1 - r;
            for (let k = 0; k < turns; k++) {
                const nr = cw - 1 - c;
                const nc = r;
                const nh = cw;
                const nw = ch;
                r = nr; c = nc; ch = nh; cw = nw;
            }
            r += t.dy;
            c += t.dx;
            if (r < 0 || r >= ch || c < 0 || c >= cw) continue;
            for (let d = 0; d < 3; d++) {
                acc[(r * cw + c) * 3 + d] = light.data[(r0 * light.width + c0) * 3 + d];
            }
        }
    }
    const out = makeRaster(content.width, content.height);
    for (let i = 0; i < acc.length; i++) {
        out.data[i] = clamp01(content.data[i] + clamp01(acc[i] * t.intensity));
    }
    return out;
}

describe("compositePreview vs reference", () => {
    it("stays within 1/255 of the float reference on random sessions", () => {
        const rand = rng(0xbeef01);
        for (let s = 0; s < 20; s++) {
            const side = 16 + Math.floor(rand() * 17);
            const content = randomRaster(side, side, rand);
            const light = randomRaster(side, side, rand);
            const t = randomTransform(side, side, rand);
            const got = compositePreview(content, light, t);
            const want = referenceComposite(content, light, t);
            expect(maxAbsDiff(got, want)).toBeLessThanOrEqual(1 / 255);
        }
    });

    it("handles non-square rasters through odd turn counts", () => {
        const rand = rng(0xbeef02);
        const light = randomRaster(20, 12, rand); // 12 rows x 20 cols
        const content = randomRaster(12, 20, rand); // rotated dims
        const t: TransformWire = {
            dx: 3, dy: -2, hflip: true, vflip: false, quarter_turns: 1, intensity: 1.3,
        };
        const got = compositePreview(content, light, t);
        const want = referenceComposite(content, light, t);
        expect(maxAbsDiff(got, want)).toBeLessThanOrEqual(1 / 255);
    });

    it("returns the content exactly at intensity zero", () => {
        const rand = rng(0xbeef03);
        const content = randomRaster(24, 24, rand);
        const light = randomRaster(24, 24, rand);
        const t: TransformWire = {
            dx: 5, dy: 5, hflip: true, vflip: true, quarter_turns: 2, intensity: 0,
        };
        const got = compositePreview(content, light, t);
        expect(Array.from(got.data)).toEqual(Array.from(content.data));
    });

    it("rejects mismatched dimensions", () => {
        const rand = rng(0xbeef04);
        const content = randomRaster(16, 16, rand);
        const light = randomRaster(24, 24, rand);
        expect(() => compositePreview(content, light, {
            dx: 0, dy: 0, hflip: false, vflip: false, quarter_turns: 0, intensity: 1,
        })).toThrow(/dimensions do not match/);
    });
});

describe("transformLight", () => {
    const identity: TransformWire = {
        dx: 0, dy: 0, hflip: false, vflip: false, quarter_turns: 0, intensity: 1,
    };

    it("double flips and four quarter turns are identities", () => {
        const rand = rng(0xbeef05);
        const light = randomRaster(20, 20, rand);
        const twice = (field: "hflip" | "vflip") => {
            const t = { ...identity, [field]: true };
            return transformLight(transformLight(light, t), t);
        };
        expect(maxAbsDiff(twice("hflip"), light)).toBe(0);
        expect(maxAbsDiff(twice("vflip"), light)).toBe(0);

        let out = light;
        const turn = { ...identity, quarter_turns: 1 };
        for (let k = 0; k < 4; k++) out = transformLight(out, turn);
        expect(maxAbsDiff(out, light)).toBe(0);
    });

    it("translation then its inverse restores surviving pixels", () => {
        const rand = rng(0xbeef06);
        const light = randomRaster(20, 20, rand);
        const dx = 6;
        const dy = -4;
        const there = transformLight(light, { ...identity, dx, dy });
        const back = transformLight(there, { ...identity, dx: -dx, dy: -dy });
        for (let y = 0; y < 20; y++) {
            for (let x = 0; x < 20; x++) {
                const survives =
                    y + dy >= 0 && y + dy < 20 && x + dx >= 0 && x + dx < 20;
                if (!survives) continue;
                for (let d = 0; d < 3; d++) {
                    expect(back.data[(y * 20 + x) * 3 + d])
                        .toBe(light.data[(y * 20 + x) * 3 + d]);
                }
            }
        }
    });

    it("clamps the boosted light to 1 before compositing", () => {
        const light = makeRaster(8, 8);
        light.data.fill(0.8);
        const out = transformLight(light, { ...identity, intensity: 2 });
        for (const v of out.data) expect(v).toBe(1);
    });

    it("rejects translations that push the light fully off-image", () => {
        const rand = rng(0xbeef07);
        const light = randomRaster(16, 16, rand);
        expect(() => transformLight(light, { ...identity, dx: 16 }))
            .toThrow(/out of range/);
        expect(() => transformLight(light, { ...identity, dy: -16 }))
            .toThrow(/out of range/);
    });
});
