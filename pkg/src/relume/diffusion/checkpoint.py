"""Weight checkpoint container with bit-exact round trips.

Layout: 8-byte magic, uint32 little-endian header length, UTF-8 JSON
header (sorted keys, compact separators), then each array's raw
little-endian bytes in header order. Identical inputs always produce
identical files, which makes checkpoint hashes reproducible.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np
import torch

from .schedule import DiffusionError, NoiseSchedule, make_schedule

MAGIC = b"RLCKPT01"

_DTYPES = {"float32": np.float32, "float64": np.float64, "int64": np.int64}


def state_arrays(module: torch.nn.Module) -> dict:
    """Module state dict as contiguous numpy arrays, sorted by name."""
    out = {}
    for name in sorted(module.state_dict()):
        t = module.state_dict()[name].detach().cpu().contiguous()
        out[name] = t.numpy().copy()
    return out


def save_checkpoint(path, arrays: dict, meta: dict):
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        dt = str(arr.dtype)
        if dt not in _DTYPES:
            raise DiffusionError(f"unsupported dtype {dt} for {name}")
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        entries.append({"name": name, "dtype": dt, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"arrays": entries, "meta": meta},
                        sort_keys=True, separators=(",", ":")).encode()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.array(len(header), dtype="<u4").tobytes())
        f.write(header)
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path):
    """Returns (meta, arrays) with arrays keyed by name."""
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != MAGIC:
        raise DiffusionError(f"{path} is not a checkpoint file")
    hlen = int(np.frombuffer(data[8:12], "<u4")[0])
    header = json.loads(data[12:12 + hlen].decode())
    base = 12 + hlen
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        raw = data[start:start + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise DiffusionError(f"{path} truncated at {e['name']}")
        arr = np.frombuffer(raw, dtype=np.dtype(_DTYPES[e["dtype"]]).newbyteorder("<"))
        arrays[e["name"]] = arr.reshape(e["shape"]).astype(_DTYPES[e["dtype"]])
    return header["meta"], arrays


def load_into(module: torch.nn.Module, arrays: dict):
    state = {k: torch.from_numpy(np.ascontiguousarray(v)) for k, v in arrays.items()}
    missing = set(module.state_dict()) - set(state)
    extra = set(state) - set(module.state_dict())
    if missing or extra:
        raise DiffusionError(
            f"checkpoint/spec mismatch: missing={sorted(missing)[:3]} "
            f"extra={sorted(extra)[:3]}")
    module.load_state_dict(state)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def schedule_meta(sched: NoiseSchedule) -> dict:
    return {"T": sched.T, "beta_start": float(sched.betas[0]),
            "beta_end": float(sched.betas[-1])}


def schedule_from_meta(meta: dict) -> NoiseSchedule:
    return make_schedule(meta["T"], meta["beta_start"], meta["beta_end"])
