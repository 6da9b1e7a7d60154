// Float RGB rasters, value range [0, 1], row-major interleaved.
// Matches the raster convention of the inference service.
export function makeRaster(width, height) {
    return { width, height, data: new Float32Array(width * height * 3) };
}
export function cloneRaster(r) {
    return { width: r.width, height: r.height, data: r.data.slice() };
}
export function sameDims(a, b) {
    return a.width === b.width && a.height === b.height;
}
/** Browser decode path: canvas ImageData (RGBA u8) to float RGB. */
export function fromImageData(img) {
    const out = makeRaster(img.width, img.height);
    const n = img.width * img.height;
    for (let i = 0; i < n; i++) {
        out.data[i * 3] = img.data[i * 4] / 255;
        out.data[i * 3 + 1] = img.data[i * 4 + 1] / 255;
        out.data[i * 3 + 2] = img.data[i * 4 + 2] / 255;
    }
    return out;
}
/** Render path: float RGB back to opaque ImageData. */
export function toImageData(r) {
    const img = new ImageData(r.width, r.height);
    const n = r.width * r.height;
    for (let i = 0; i < n; i++) {
        img.data[i * 4] = Math.round(clamp01(r.data[i * 3]) * 255);
        img.data[i * 4 + 1] = Math.round(clamp01(r.data[i * 3 + 1]) * 255);
        img.data[i * 4 + 2] = Math.round(clamp01(r.data[i * 3 + 2]) * 255);
        img.data[i * 4 + 3] = 255;
    }
    return img;
}
// Headless exchange format used by the test harness: little-endian
// uint16 RGB, the service's native PNG bit depth, so fixtures round
// trip at 1/65535 precision without any PNG decoding in node.
export function fromU16Raw(width, height, bytes) {
    const expect = width * height * 3 * 2;
    if (bytes.length !== expect) {
        throw new Error(`raw raster size ${bytes.length}, expected ${expect}`);
    }
    const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
    const out = makeRaster(width, height);
    for (let i = 0; i < width * height * 3; i++) {
        out.data[i] = view.getUint16(i * 2, true) / 65535;
    }
    return out;
}
export function toU16Raw(r) {
    const out = new Uint8Array(r.data.length * 2);
    const view = new DataView(out.buffer);
    for (let i = 0; i < r.data.length; i++) {
        view.setUint16(i * 2, Math.round(clamp01(r.data[i]) * 65535), true);
    }
    return out;
}
export function clamp01(v) {
    return v < 0 ? 0 : v > 1 ? 1 : v;
}
