"""Bit-exact tensor container plus JSON manifests, checkpoints, episode files, PPM frames.

Tensor block layout: magic "CAVT", version u16 LE, dtype u8 (0=f32, 1=f64,
2=u8), ndim u8, extents u32 LE each, then the row-major payload LE.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..autodiff import Tensor
from ..policy import ModelConfig

MAGIC = b"CAVT"
VERSION = 1

_DTYPE_CODE = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("uint8"): 2}
_CODE_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}


def write_tensor(f, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr)
    if arr.dtype not in _DTYPE_CODE:
        raise ValueError(f"unsupported container dtype {arr.dtype}")
    code = _DTYPE_CODE[arr.dtype]
    f.write(MAGIC)
    f.write(struct.pack("<H", VERSION))
    f.write(struct.pack("<BB", code, arr.ndim))
    for dim in arr.shape:
        f.write(struct.pack("<I", dim))
    f.write(arr.astype(_CODE_DTYPE[code], copy=False).tobytes())


def read_tensor(f) -> np.ndarray | None:
    head = f.read(4)
    if not head:
        return None
    if head != MAGIC:
        raise ValueError(f"bad tensor block magic {head!r}")
    version = struct.unpack("<H", f.read(2))[0]
    if version != VERSION:
        raise ValueError(f"unsupported container version {version}")
    code, ndim = struct.unpack("<BB", f.read(2))
    if code not in _CODE_DTYPE:
        raise ValueError(f"unknown dtype code {code}")
    shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(ndim))
    dtype = _CODE_DTYPE[code]
    count = int(np.prod(shape)) if shape else 1
    data = f.read(count * dtype.itemsize)
    if len(data) != count * dtype.itemsize:
        raise ValueError("truncated tensor block")
    return np.frombuffer(data, dtype=dtype).reshape(shape).copy()


def save_tensors(path, named: dict) -> list[dict]:
    index = []
    with open(path, "wb") as f:
        for name, arr in named.items():
            arr = np.asarray(arr)
            index.append({"name": name, "dtype": str(arr.dtype), "shape": list(arr.shape)})
            write_tensor(f, arr)
    return index


def load_tensors(path, names: list[str]) -> dict:
    out = {}
    with open(path, "rb") as f:
        for name in names:
            arr = read_tensor(f)
            if arr is None:
                raise ValueError(f"container ended before tensor '{name}'")
            out[name] = arr
        if f.read(1):
            raise ValueError("container has trailing data beyond the manifest index")
    return out


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def read_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def write_ppm(path, rgb: np.ndarray) -> None:
    """Binary P6 frame from float RGB in [0, 1]."""
    u8 = np.clip(np.asarray(rgb) * 255.0, 0, 255).astype(np.uint8)
    h, w = u8.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(u8.tobytes())


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(out_dir, params: dict, cfg: ModelConfig, vocab_tokens: list[str],
                    extra: dict | None = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tensor_path = out_dir / "tensors.cavt"
    index = save_tensors(tensor_path, {k: p.data for k, p in params.items()})
    manifest = {
        "format": "CAVT-checkpoint",
        "version": VERSION,
        "model": cfg.to_dict(),
        "vocab": vocab_tokens,
        "tensors": index,
        "tensors_sha256": sha256_file(tensor_path),
        "extra": extra or {},
    }
    write_json(out_dir / "manifest.json", manifest)
    return out_dir


def load_checkpoint(ckpt_dir) -> tuple[dict, ModelConfig, list[str], dict]:
    ckpt_dir = Path(ckpt_dir)
    manifest = read_json(ckpt_dir / "manifest.json")
    cfg = ModelConfig.from_dict(manifest["model"])
    tensor_path = ckpt_dir / "tensors.cavt"
    if sha256_file(tensor_path) != manifest["tensors_sha256"]:
        raise ValueError("checkpoint tensor payload does not match its manifest checksum")
    names = [t["name"] for t in manifest["tensors"]]
    arrays = load_tensors(tensor_path, names)
    params = {name: Tensor(arrays[name], requires_grad=True) for name in names}
    return params, cfg, manifest["vocab"], manifest.get("extra", {})


# ---------------------------------------------------------------------------
# episode files


def save_episode(prefix, arrays: dict, meta: dict) -> None:
    prefix = Path(prefix)
    index = save_tensors(prefix.with_suffix(".cavt"), arrays)
    write_json(prefix.with_suffix(".json"), {**meta, "tensors": index})


def load_episode(prefix) -> tuple[dict, dict]:
    prefix = Path(prefix)
    meta = read_json(prefix.with_suffix(".json"))
    names = [t["name"] for t in meta["tensors"]]
    arrays = load_tensors(prefix.with_suffix(".cavt"), names)
    return arrays, meta
