"""Single-file binary checkpoints.

Layout (little-endian throughout):

    magic "DVCP" | version u32 | meta_len u64 | meta (UTF-8 JSON)
    | raw array blobs

The JSON meta holds the full run config, the epoch counter, the adam step
count, the RNG state (seed; all randomness is a pure function of seed and
epoch) and a section table ``[name, dtype, shape, offset]`` with offsets
relative to the first byte after the meta block.  Arrays are stored raw in
row-major order, so readers can seek to any single section — class centers
are readable without touching the memory bank.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .config import TrainConfig, config_from_dict, config_to_dict

MAGIC = b"DVCP"
VERSION = 1

_DTYPES = {"f8": "<f8", "f4": "<f4", "i8": "<i8"}


def _dtype_code(arr: np.ndarray) -> str:
    if arr.dtype == np.float64:
        return "f8"
    if arr.dtype == np.float32:
        return "f4"
    if arr.dtype == np.int64:
        return "i8"
    raise TypeError(f"unsupported checkpoint dtype {arr.dtype}")


def write_checkpoint(path, cfg: TrainConfig, meta_extra: dict, arrays: dict[str, np.ndarray]) -> None:
    sections = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        code = _dtype_code(arr)
        blob = np.ascontiguousarray(arr).astype(_DTYPES[code], copy=False).tobytes()
        sections.append([name, code, list(arr.shape), offset])
        blobs.append(blob)
        offset += len(blob)
    meta = {"config": config_to_dict(cfg), "sections": sections}
    meta.update(meta_extra)
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(meta_bytes)))
        f.write(meta_bytes)
        for blob in blobs:
            f.write(blob)


def _read_meta(f) -> dict:
    magic = f.read(4)
    if magic != MAGIC:
        raise ValueError(f"bad checkpoint magic {magic!r}")
    (version,) = struct.unpack("<I", f.read(4))
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack("<Q", f.read(8))
    return json.loads(f.read(meta_len).decode("utf-8"))


def read_checkpoint(path, only: set[str] | None = None) -> tuple[TrainConfig, dict, dict[str, np.ndarray]]:
    """Returns (config, meta, arrays).  ``only`` restricts which sections are read."""
    with open(path, "rb") as f:
        meta = _read_meta(f)
        data_start = f.tell()
        arrays: dict[str, np.ndarray] = {}
        for name, code, shape, offset in meta["sections"]:
            if only is not None and name not in only:
                continue
            dt = np.dtype(_DTYPES[code])
            count = int(np.prod(shape)) if shape else 1
            f.seek(data_start + offset)
            arrays[name] = np.frombuffer(f.read(count * dt.itemsize), dtype=dt).reshape(shape).copy()
    cfg = config_from_dict(meta["config"])
    return cfg, meta, arrays


def read_centers(path) -> tuple[np.ndarray, np.ndarray]:
    """Load only the per-view class centers (inference deployments)."""
    _, _, arrays = read_checkpoint(path, only={"centers.mu_long", "centers.mu_trans"})
    return arrays["centers.mu_long"], arrays["centers.mu_trans"]
