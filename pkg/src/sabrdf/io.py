"""Binary containers and checkpoints.

All containers are little-endian:

``SAEM`` (environment map)
    magic, u32 version, u32 H, u32 W, u32 C, f32 radiance row-major;
    sidecar ``<file>.json`` with ``{id, seed, white_balanced}``.
``SAIM`` (rendered image)
    magic, u32 version, u32 H, u32 W, u32 C, u32 flags (bit 0 clamped,
    bit 1 gamma-encoded), f32 pixels row-major, u8 mask;
    sidecar ``<file>.json`` with ``{exposure, provenance}``.
``SATN`` (tensor)
    magic, u32 version, u32 dtype code, u32 ndim, u32 dims..., raw data.

A checkpoint is a directory holding ``manifest.json`` (input shape,
architecture, tensor file names, free-form metadata) and one ``.satn``
file per parameter or buffer.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .lighting import EnvironmentMap
from .neural import LAYER_TYPES, LayerGraph
from .renderer import RenderedImage, gamma_encode

PathLike = Union[str, Path]
VERSION = 1

_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i4"), 4: np.dtype("<i8"), 5: np.dtype("u1")}
_DTYPE_CODES = {v: k for k, v in _DTYPES.items()}


class FormatError(ValueError):
    pass


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def _read_header(buf: bytes, magic: bytes, n_fields: int, path) -> tuple[tuple[int, ...], int]:
    size = 4 + 4 * n_fields
    if len(buf) < size or buf[:4] != magic:
        raise FormatError(f"{path}: not a {magic.decode()} file")
    fields = struct.unpack(f"<{n_fields}I", buf[4:size])
    if fields[0] != VERSION:
        raise FormatError(f"{path}: unsupported {magic.decode()} version {fields[0]}")
    return fields[1:], size


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- environment maps ---------------------------------------------------------


def save_env(env: EnvironmentMap, path: PathLike) -> Path:
    path = Path(path)
    h, w, c = env.shape
    data = env.radiance.astype("<f4")
    path.write_bytes(b"SAEM" + struct.pack("<4I", VERSION, h, w, c) + data.tobytes())
    _write_json(_sidecar(path), {"id": env.id, "seed": env.seed, "white_balanced": env.white_balanced})
    return path


def load_env(path: PathLike) -> EnvironmentMap:
    path = Path(path)
    buf = path.read_bytes()
    (h, w, c), off = _read_header(buf, b"SAEM", 4, path)
    expected = off + 4 * h * w * c
    if len(buf) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(buf)}")
    radiance = np.frombuffer(buf, dtype="<f4", offset=off).reshape(h, w, c).astype(np.float64)
    meta = json.loads(_sidecar(path).read_text()) if _sidecar(path).exists() else {}
    return EnvironmentMap(radiance, bool(meta.get("white_balanced", False)), meta.get("id", ""), meta.get("seed"))


# -- images ----------------------------------------------------------------


def save_image(image: RenderedImage, path: PathLike) -> Path:
    """Pixels are stored as float32; values already representable in f32 round-trip exactly."""
    path = Path(path)
    h, w, c = image.shape
    flags = int(image.clamped) | (int(image.gamma_encoded) << 1)
    payload = image.pixels.astype("<f4").tobytes() + image.mask.astype("u1").tobytes()
    path.write_bytes(b"SAIM" + struct.pack("<5I", VERSION, h, w, c, flags) + payload)
    _write_json(_sidecar(path), {"exposure": image.exposure, "provenance": image.provenance})
    return path


def load_image(path: PathLike) -> RenderedImage:
    path = Path(path)
    buf = path.read_bytes()
    (h, w, c, flags), off = _read_header(buf, b"SAIM", 5, path)
    n = h * w * c
    if len(buf) != off + 4 * n + h * w:
        raise FormatError(f"{path}: truncated or oversized image payload")
    pixels = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(h, w, c).astype(np.float64)
    mask = np.frombuffer(buf, dtype="u1", offset=off + 4 * n).reshape(h, w).astype(bool)
    meta = json.loads(_sidecar(path).read_text()) if _sidecar(path).exists() else {}
    return RenderedImage(pixels, mask, meta.get("exposure", 1.0), bool(flags & 1), bool(flags & 2), meta.get("provenance", {}))


def save_png(image: RenderedImage, path: PathLike) -> Path:
    """8-bit PNG for inspection; gamma-encodes linear images, background black."""
    from PIL import Image

    px = np.clip(image.pixels, 0.0, 1.0)
    if not image.gamma_encoded:
        px = gamma_encode(px)
    px = np.where(image.mask[..., None], px, 0.0)
    arr = np.rint(px * 255).astype(np.uint8)
    arr = arr[..., 0] if arr.shape[2] == 1 else arr
    Image.fromarray(arr).save(path, format="PNG")
    return Path(path)


# -- tensors ----------------------------------------------------------------


def save_tensor(array: np.ndarray, path: PathLike) -> Path:
    path = Path(path)
    arr = np.asarray(array)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder not in "|" else arr.dtype
    if dt not in _DTYPE_CODES:
        raise FormatError(f"unsupported tensor dtype {arr.dtype}")
    header = b"SATN" + struct.pack(f"<{3 + arr.ndim}I", VERSION, _DTYPE_CODES[dt], arr.ndim, *arr.shape)
    path.write_bytes(header + np.ascontiguousarray(arr, dtype=dt).tobytes())
    return path


def load_tensor(path: PathLike) -> np.ndarray:
    path = Path(path)
    buf = path.read_bytes()
    (code, ndim), off = _read_header(buf, b"SATN", 3, path)
    if code not in _DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    dims = struct.unpack(f"<{ndim}I", buf[off : off + 4 * ndim])
    off += 4 * ndim
    dt = _DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) != off + count * dt.itemsize:
        raise FormatError(f"{path}: payload size does not match {dims}")
    return np.frombuffer(buf, dtype=dt, offset=off).reshape(dims).astype(dt.newbyteorder("="))


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(graph: LayerGraph, directory: PathLike, metadata: Optional[dict] = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tensors = {}
    for i, (key, value) in enumerate(sorted(graph.state().items())):
        fname = f"{i:03d}_{key.replace('.', '_')}.satn"
        save_tensor(value, directory / fname)
        tensors[key] = fname
    manifest = {
        "format": "sabrdf-checkpoint",
        "version": VERSION,
        "input_shape": list(graph.input_shape),
        "architecture": graph.architecture(),
        "tensors": tensors,
        "metadata": metadata or {},
    }
    _write_json(directory / "manifest.json", manifest)
    return directory


def read_manifest(directory: PathLike) -> dict:
    path = Path(directory) / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if manifest.get("format") != "sabrdf-checkpoint":
        raise FormatError(f"{path}: not a checkpoint manifest")
    return manifest


def load_checkpoint(directory: PathLike) -> tuple[LayerGraph, dict]:
    """Rebuild the graph from its manifest and load every tensor; returns ``(graph, metadata)``."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    graph = LayerGraph(tuple(manifest["input_shape"]))
    for entry in manifest["architecture"]:
        if entry["type"] not in LAYER_TYPES:
            raise FormatError(f"unknown layer type {entry['type']!r}")
        graph.add(entry["name"], LAYER_TYPES[entry["type"]](**entry["config"]), entry["inputs"])
    state = {key: load_tensor(directory / fname) for key, fname in manifest["tensors"].items()}
    dtypes = {v.dtype for v in state.values()}
    if len(dtypes) == 1:
        graph.astype(dtypes.pop())
    graph.load_state(state)
    return graph, manifest["metadata"]
