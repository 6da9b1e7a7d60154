"""Pure image mathematics on float rasters.

Conventions used across the package:

- an image is a float32 ndarray of shape (H, W, 3) with values in [0, 1]
- a light image uses the same raster layout and is additive light over a
  pure black background (0 = no light)
- a mask is a float32 ndarray of shape (H, W) with values in {0, 1},
  1 marking foreground-object pixels

All operations here are pure functions on immutable inputs and are safe
to call from parallel workers.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import cv2
import numpy as np

MIN_SIDE = 8

PNG_MAX = 65535  # 16-bit export scale


class RasterError(ValueError):
    """Rejected raster input (bad shape, range, or dimension mismatch)."""


@dataclass(frozen=True)
class SynthesisParams:
    """Coefficients of the additive synthesis I_S = a*I + b*L.

    a scales the content image and stays in [0, 1]; b scales the light
    image and may reach 2 for inference-time intensity boosting.
    Training draws both from U(0, 1).
    """

    a: float
    b: float

    def __post_init__(self):
        if not (0.0 <= self.a <= 1.0):
            raise RasterError(f"a must be in [0, 1], got {self.a}")
        if not (0.0 <= self.b <= 2.0):
            raise RasterError(f"b must be in [0, 2], got {self.b}")


@dataclass(frozen=True)
class LightTransform:
    """Geometric and intensity adjustment of a light image.

    Applied in the fixed order: horizontal flip, vertical flip,
    counter-clockwise quarter turns, translation (dx right / dy down,
    zero fill), multiplication by ``intensity``, clamp to [0, 1].
    """

    dx: int = 0
    dy: int = 0
    hflip: bool = False
    vflip: bool = False
    quarter_turns: int = 0
    intensity: float = 1.0

    def __post_init__(self):
        if self.quarter_turns not in (0, 1, 2, 3):
            raise RasterError(f"quarter_turns must be in {{0,1,2,3}}, got {self.quarter_turns}")
        if self.intensity < 0:
            raise RasterError(f"intensity must be >= 0, got {self.intensity}")

    @classmethod
    def identity(cls) -> "LightTransform":
        return cls()

    def is_identity(self) -> bool:
        return (self.dx == 0 and self.dy == 0 and not self.hflip and not self.vflip
                and self.quarter_turns == 0 and self.intensity == 1.0)


def validate_image(arr: np.ndarray, name: str = "image") -> np.ndarray:
    """Check raster invariants and return the array as float32.

    Raises RasterError on wrong shape, non-finite values, values outside
    [0, 1], or sides below the 8-pixel minimum.
    """
    arr = np.asarray(arr)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise RasterError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    h, w = arr.shape[:2]
    if h < MIN_SIDE or w < MIN_SIDE:
        raise RasterError(f"{name} sides must be >= {MIN_SIDE}, got {h}x{w}")
    if not np.all(np.isfinite(arr)):
        raise RasterError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise RasterError(f"{name} values must lie in [0, 1], got range "
                          f"[{arr.min():.4g}, {arr.max():.4g}]")
    return arr.astype(np.float32, copy=False)


def validate_mask(mask: np.ndarray, like: np.ndarray | None = None) -> np.ndarray:
    """Check mask invariants ({0,1} values, optionally matching dims)."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise RasterError(f"mask must have shape (H, W), got {mask.shape}")
    vals = np.unique(mask)
    if not np.all(np.isin(vals, (0.0, 1.0))):
        raise RasterError("mask values must be binary 0/1")
    if like is not None and mask.shape != like.shape[:2]:
        raise RasterError(f"mask dims {mask.shape} do not match image {like.shape[:2]}")
    return mask.astype(np.float32, copy=False)


def _check_same_dims(a: np.ndarray, b: np.ndarray, what: str):
    if a.shape != b.shape:
        raise RasterError(f"{what}: dimension mismatch {a.shape} vs {b.shape}")


def composite(content: np.ndarray, light: np.ndarray, params: SynthesisParams) -> np.ndarray:
    """Additive synthesis: clamp(a * content + b * light, 0, 1).

    Parameters
    ----------
    content : (H, W, 3) float raster in [0, 1]
    light : (H, W, 3) additive light raster in [0, 1]
    params : SynthesisParams with the a, b coefficients

    Returns
    -------
    (H, W, 3) float32 raster in [0, 1], same dims as the inputs.
    """
    content = validate_image(content, "content")
    light = validate_image(light, "light")
    _check_same_dims(content, light, "composite")
    out = params.a * content.astype(np.float64) + params.b * light.astype(np.float64)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def apply_transform(light: np.ndarray, t: LightTransform) -> np.ndarray:
    """Apply a LightTransform to a light image.

    Order is fixed: hflip, vflip, CCW quarter turns, translate with zero
    fill, multiply by intensity, clamp to [0, 1]. Zero fill is exact,
    black being the additive identity for light.
    """
    out = validate_image(light, "light").copy()
    if t.hflip:
        out = out[:, ::-1]
    if t.vflip:
        out = out[::-1, :]
    if t.quarter_turns:
        out = np.rot90(out, t.quarter_turns)
    h, w = out.shape[:2]
    if abs(t.dx) >= w or abs(t.dy) >= h:
        raise RasterError(f"translation ({t.dx}, {t.dy}) out of range for {h}x{w} image")
    if t.dx or t.dy:
        shifted = np.zeros_like(out)
        src_y0, src_y1 = max(0, -t.dy), min(h, h - t.dy)
        src_x0, src_x1 = max(0, -t.dx), min(w, w - t.dx)
        dst_y0, dst_x0 = max(0, t.dy), max(0, t.dx)
        shifted[dst_y0:dst_y0 + (src_y1 - src_y0), dst_x0:dst_x0 + (src_x1 - src_x0)] = \
            out[src_y0:src_y1, src_x0:src_x1]
        out = shifted
    out = out * np.float32(t.intensity)
    return np.clip(np.ascontiguousarray(out), 0.0, 1.0)


def invert_geometry(t: LightTransform) -> LightTransform:
    """Geometric inverse of a transform: same flips, complementary
    rotation, translation negated in the transformed frame, intensity 1.

    apply_transform(apply_transform(x, t), invert_geometry(t)) restores
    every pixel not lost to the zero-fill border, when t.intensity == 1.
    """
    # With a single flip the flip conjugates the rotation into itself,
    # so the complementary turn count is k rather than 4 - k.
    if t.hflip != t.vflip:
        k = t.quarter_turns % 4
    else:
        k = (4 - t.quarter_turns) % 4
    # Push the negated translation through the inverse's flip + rotation.
    dr, dc = t.dy, t.dx
    if t.hflip:
        dc = -dc
    if t.vflip:
        dr = -dr
    for _ in range(k):
        dr, dc = -dc, dr
    return LightTransform(dx=-dc, dy=-dr, hflip=t.hflip, vflip=t.vflip,
                          quarter_turns=k, intensity=1.0)


def mask_background_light(light: np.ndarray, fg: np.ndarray) -> np.ndarray:
    """Keep only the background portion of a light image: light * (1 - fg)."""
    light = validate_image(light, "light")
    fg = validate_mask(fg, like=light)
    return light * (1.0 - fg)[:, :, None]


def residual_light(image_with_light: np.ndarray, content: np.ndarray) -> np.ndarray:
    """Ground-truth additive light under a=b=1: clamp(I_L - I, 0, 1).

    Exact inverse of unclamped addition; used as a test oracle and for
    analysis, not in the trained pipeline.
    """
    image_with_light = validate_image(image_with_light, "image_with_light")
    content = validate_image(content, "content")
    _check_same_dims(image_with_light, content, "residual_light")
    return np.clip(image_with_light - content, 0.0, 1.0)


def luminance(image: np.ndarray) -> np.ndarray:
    """Rec. 601 luma: 0.299 R + 0.587 G + 0.114 B, shape (H, W)."""
    image = np.asarray(image, dtype=np.float32)
    return (0.299 * image[:, :, 0] + 0.587 * image[:, :, 1] + 0.114 * image[:, :, 2])


def save_png(path: str | os.PathLike, image: np.ndarray):
    """Write a raster as 16-bit PNG (v -> round(v * 65535))."""
    image = validate_image(image)
    u16 = np.round(image.astype(np.float64) * PNG_MAX).astype(np.uint16)
    os.makedirs(os.path.dirname(os.path.abspath(os.fspath(path))), exist_ok=True)
    ok = cv2.imwrite(os.fspath(path), cv2.cvtColor(u16, cv2.COLOR_RGB2BGR))
    if not ok:
        raise IOError(f"failed to write PNG: {path}")


def load_png(path: str | os.PathLike) -> np.ndarray:
    """Read a PNG into a float32 raster in [0, 1].

    16-bit files (the package's own export format) round-trip with error
    <= 1/65535 per channel; 8-bit files from external tools are accepted
    and scaled by 1/255.
    """
    raw = cv2.imread(os.fspath(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"failed to read PNG: {path}")
    return decode_raster(raw)


def decode_raster(raw: np.ndarray) -> np.ndarray:
    """Convert a decoded cv2 BGR(A) array (uint8 or uint16) to RGB float32."""
    if raw.ndim == 2:
        raw = raw[:, :, None].repeat(3, axis=2)
    if raw.shape[2] == 4:
        raw = raw[:, :, :3]
    scale = PNG_MAX if raw.dtype == np.uint16 else 255
    rgb = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    return (rgb.astype(np.float32) / scale).clip(0.0, 1.0)


def save_mask_png(path: str | os.PathLike, mask: np.ndarray):
    """Write a binary mask as an 8-bit PNG (0 / 255)."""
    mask = validate_mask(mask)
    os.makedirs(os.path.dirname(os.path.abspath(os.fspath(path))), exist_ok=True)
    ok = cv2.imwrite(os.fspath(path), (mask * 255).astype(np.uint8))
    if not ok:
        raise IOError(f"failed to write PNG: {path}")


def load_mask_png(path: str | os.PathLike) -> np.ndarray:
    raw = cv2.imread(os.fspath(path), cv2.IMREAD_GRAYSCALE)
    if raw is None:
        raise IOError(f"failed to read PNG: {path}")
    return (raw > 127).astype(np.float32)


def png_bytes(image: np.ndarray) -> bytes:
    """Encode a raster as 16-bit PNG bytes (wire format for the service)."""
    image = validate_image(image)
    u16 = np.round(image.astype(np.float64) * PNG_MAX).astype(np.uint16)
    ok, buf = cv2.imencode(".png", cv2.cvtColor(u16, cv2.COLOR_RGB2BGR))
    if not ok:
        raise IOError("PNG encoding failed")
    return buf.tobytes()


def from_png_bytes(data: bytes) -> np.ndarray:
    """Decode PNG bytes into a float32 raster; raises RasterError if malformed."""
    raw = cv2.imdecode(np.frombuffer(data, np.uint8), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise RasterError("malformed PNG payload")
    return decode_raster(raw)
