"""HTTP inference service for extraction and transfer.

JSON in, JSON out, with PNG payloads carried as base64 strings. The
server owns at most one loaded copy of each model and serializes
inference through a mutex, so identical (request, seed, checkpoints)
always replay to byte-identical responses.

Run with:  python3 -m relume.service --config run.ini [--host H --port P]
Checkpoint locations come from the [service] config section, falling
back to the standard run-directory layout.
"""

from __future__ import annotations

import base64
import binascii
import json
import os
import threading

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .decouple import DecoupleError, ExtractionModel
from .diffusion import DiffusionError
from .raster import RasterError, LightTransform, from_png_bytes, png_bytes
from .synth import LightKind
from .transfer import TransferError, TransferModel, TransferRequest

DEFAULT_STEPS = 20


def _b64_image(payload, field, required=True):
    raw = payload.get(field)
    if raw is None:
        if required:
            raise HTTPException(400, f"missing field {field!r}")
        return None
    try:
        return from_png_bytes(base64.b64decode(raw, validate=True))
    except (TypeError, ValueError, binascii.Error, RasterError, OSError):
        raise HTTPException(400, f"field {field!r} is not a valid PNG")


def _int_field(payload, field, default):
    value = payload.get(field, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise HTTPException(400, f"field {field!r} must be an integer")
    return value


def _transform(payload) -> LightTransform:
    try:
        return LightTransform(
            dx=_int_field(payload, "dx", 0),
            dy=_int_field(payload, "dy", 0),
            hflip=bool(payload.get("hflip", False)),
            vflip=bool(payload.get("vflip", False)),
            quarter_turns=_int_field(payload, "quarter_turns", 0),
            intensity=float(payload.get("intensity", 1.0)),
        )
    except (RasterError, TypeError, ValueError) as e:
        raise HTTPException(400, f"invalid transform: {e}")


def _load_lights(lights_dir):
    """Preset list, rescanned on every call so new files show up.

    A triplet dataset directory (with triplets.jsonl) exposes its light
    layers and kinds; any other directory is treated as a flat folder
    of light PNGs.
    """
    if not lights_dir or not os.path.isdir(lights_dir):
        return []
    index = os.path.join(lights_dir, "triplets.jsonl")
    out = []
    if os.path.isfile(index):
        with open(index) as f:
            for line in f:
                rec = json.loads(line)
                path = os.path.join(lights_dir, "light", rec["id"] + ".png")
                if os.path.isfile(path):
                    out.append((rec["id"], rec.get("kind"), path))
    else:
        for name in sorted(os.listdir(lights_dir)):
            if name.endswith(".png"):
                out.append((name[:-4], None, os.path.join(lights_dir, name)))
    presets = []
    for pid, kind, path in out:
        with open(path, "rb") as f:
            thumb = base64.b64encode(f.read()).decode("ascii")
        presets.append({"id": pid, "kind": kind, "thumbnail": thumb})
    return presets


def create_app(bundle_root=None, extraction_path=None,
               lights_dir=None) -> FastAPI:
    """Build the service; missing checkpoints leave endpoints in the
    503 "not loaded" state rather than failing startup."""
    app = FastAPI(title="relume inference service")
    # local tool, browser frontends may be served from any origin
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    state = {"transfer": None, "extraction": None}
    if bundle_root and os.path.isfile(os.path.join(bundle_root,
                                                   "bundle.json")):
        state["transfer"] = TransferModel(bundle_root)
    if extraction_path and os.path.isfile(extraction_path):
        state["extraction"] = ExtractionModel(extraction_path)
    infer_lock = threading.Lock()

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc):
        return JSONResponse(status_code=400,
                            content={"detail": "malformed request body"})

    @app.get("/health")
    def health():
        transfer = state["transfer"]
        extraction = state["extraction"]
        return {
            "status": "ok",
            "bundle": transfer.hashes if transfer else "unloaded",
            "extraction": extraction.sha256 if extraction else "unloaded",
        }

    @app.get("/lights")
    def lights():
        return _load_lights(lights_dir)

    @app.post("/extract")
    def extract(payload: dict):
        model = state["extraction"]
        if model is None:
            raise HTTPException(503, "extraction model not loaded")
        image = _b64_image(payload, "image")
        kind = payload.get("kind")
        if kind is not None:
            try:
                kind = LightKind(kind)
            except ValueError:
                raise HTTPException(400, f"unknown light kind {kind!r}")
        seed = _int_field(payload, "seed", 0)
        n_steps = _int_field(payload, "n_steps", DEFAULT_STEPS)
        try:
            with infer_lock:
                light = model.extract(image, kind, n_steps, seed)
        except (DecoupleError, DiffusionError, RasterError) as e:
            raise HTTPException(400, str(e))
        return {
            "light": base64.b64encode(png_bytes(light)).decode("ascii"),
            "kind": kind.value if kind else None,
            "seed": seed,
            "n_steps": n_steps,
        }

    @app.post("/transfer")
    def transfer(payload: dict):
        model = state["transfer"]
        if model is None:
            raise HTTPException(503, "transfer bundle not loaded")
        content = _b64_image(payload, "content")
        light = _b64_image(payload, "light")
        mask = _b64_image(payload, "fg_mask", required=False)
        if content.shape != light.shape:
            raise HTTPException(
                409, f"content {content.shape[:2]} and light "
                     f"{light.shape[:2]} dimensions do not match")
        if mask is not None and mask.shape[:2] != content.shape[:2]:
            raise HTTPException(409, "fg_mask dimensions do not match")
        transform = _transform(payload)
        seed = _int_field(payload, "seed", 0)
        n_steps = _int_field(payload, "n_steps", DEFAULT_STEPS)
        try:
            req = TransferRequest(content=content, light=light,
                                  transform=transform,
                                  fg_mask=mask[:, :, 0] if mask is not None
                                  else None,
                                  n_steps=n_steps, seed=seed)
            with infer_lock:
                result = model.transfer(req)
        except (TransferError, DiffusionError, RasterError) as e:
            raise HTTPException(400, str(e))
        return {
            "result": base64.b64encode(png_bytes(result)).decode("ascii"),
            "transform": {
                "dx": transform.dx, "dy": transform.dy,
                "hflip": transform.hflip, "vflip": transform.vflip,
                "quarter_turns": transform.quarter_turns,
                "intensity": transform.intensity,
            },
            "seed": seed,
            "n_steps": n_steps,
        }

    return app


def _resolved_paths(cfg):
    """Service checkpoint locations, defaulting into the run layout."""
    s = cfg.service
    out = cfg.run.out_root
    return {
        "bundle": s.bundle or os.path.join(out, "bundle"),
        "extraction": s.extraction or os.path.join(out, "models",
                                                   "extraction.ckpt"),
        "lights_dir": s.lights_dir or os.path.join(out, "triplets"),
    }


def main(argv=None) -> int:
    import argparse

    import uvicorn

    from .config import ConfigError, load_config

    parser = argparse.ArgumentParser(prog="relume.service")
    parser.add_argument("--config", required=True)
    parser.add_argument("--host", default=None)
    parser.add_argument("--port", type=int, default=None)
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}")
        return 2
    paths = _resolved_paths(cfg)
    app = create_app(paths["bundle"], paths["extraction"],
                     paths["lights_dir"])
    uvicorn.run(app, host=args.host or cfg.service.host,
                port=args.port if args.port is not None else cfg.service.port,
                log_level="warning")
    return 0


if __name__ == "__main__":
    import sys

    sys.exit(main())
