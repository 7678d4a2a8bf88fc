"""File formats: Middlebury .flo flows, PNG/PGM grayscale images with JSON
spacing sidecars, label masks, and the binary model checkpoint container.

On disk a .flo stores interleaved (dx, dy) float32 pairs per the Middlebury
convention; in memory flows are (dy, dx). The IO layer converts.
"""

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .validation import check_flow, check_image, check_mask, check_spacing

FLO_MAGIC = 202021.25  # little-endian float32 bytes spell "PIEH"
CHECKPOINT_MAGIC = b"MPNC"
CHECKPOINT_VERSION = 1


def write_flo(path, flow):
    """Write a flow field to a Middlebury .flo file (float32, (dx, dy) pairs)."""
    flow = check_flow(flow)
    h, w = flow.shape[:2]
    data = np.empty((h, w, 2), dtype="<f4")
    data[..., 0] = flow[..., 1]  # dx first on disk
    data[..., 1] = flow[..., 0]
    with open(path, "wb") as f:
        f.write(np.float32(FLO_MAGIC).astype("<f4").tobytes())
        f.write(struct.pack("<ii", w, h))
        f.write(data.tobytes())


def read_flo(path):
    """Read a Middlebury .flo file and return an (H, W, 2) (dy, dx) float32 array."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != b"PIEH":
        raise ValueError(f"{path}: not a .flo file (bad magic)")
    w, h = struct.unpack("<ii", raw[4:12])
    if w <= 0 or h <= 0:
        raise ValueError(f"{path}: invalid dimensions {w}x{h}")
    data = np.frombuffer(raw[12:12 + 8 * h * w], dtype="<f4").reshape(h, w, 2)
    flow = np.empty((h, w, 2), dtype=np.float32)
    flow[..., 0] = data[..., 1]
    flow[..., 1] = data[..., 0]
    return flow


def _sidecar_path(path):
    return Path(path).with_suffix(".json")


def save_image(path, img, spacing_mm=None, bits=16):
    """Save a [0, 1] float image as 8- or 16-bit grayscale PNG/PGM.

    If ``spacing_mm`` is given a JSON sidecar is written next to the image.
    """
    img = check_image(img)
    if bits == 16:
        arr = np.clip(np.rint(img * 65535.0), 0, 65535).astype(np.uint16)
        pil = PILImage.fromarray(arr, mode="I;16")
    elif bits == 8:
        arr = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
        pil = PILImage.fromarray(arr, mode="L")
    else:
        raise ValueError(f"bits must be 8 or 16, got {bits}")
    pil.save(path)
    if spacing_mm is not None:
        spacing = check_spacing(spacing_mm)
        _sidecar_path(path).write_text(json.dumps({"spacing_mm": list(spacing)}))


def load_image(path):
    """Load a grayscale image, normalised to [0, 1].

    Returns (image, spacing_mm); spacing defaults to (1.0, 1.0) unless a JSON
    sidecar provides it.
    """
    pil = PILImage.open(path)
    arr = np.asarray(pil)
    if arr.ndim == 3:
        raise ValueError(f"{path}: expected grayscale, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        img = arr.astype(np.float64) / 255.0
    elif arr.dtype in (np.uint16, np.int32):  # PIL mode I;16 may load as I
        img = arr.astype(np.float64) / 65535.0
    else:
        img = arr.astype(np.float64)
    spacing = (1.0, 1.0)
    sidecar = _sidecar_path(path)
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        spacing = check_spacing(meta.get("spacing_mm", spacing))
    return img, spacing


def save_mask(path, mask):
    """Save a label mask as an 8-bit PNG with raw label values."""
    mask = check_mask(mask)
    PILImage.fromarray(mask.astype(np.uint8), mode="L").save(path)


def load_mask(path):
    """Load a label mask written by :func:`save_mask`."""
    arr = np.asarray(PILImage.open(path))
    return check_mask(arr.astype(np.int32), str(path))


def write_checkpoint(path, config: dict, tensors: dict):
    """Write the binary checkpoint container.

    Layout (little-endian): magic "MPNC", u32 version, u32 JSON length, the
    JSON-encoded architecture config, then for each named tensor sorted by
    name: u32 name length, name bytes, u32 rank, u32 dims, float32 data.
    """
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            nb = name.encode()
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def read_checkpoint(path):
    """Read a checkpoint container; returns (config_dict, {name: float32 array})."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    version, jlen = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    config = json.loads(raw[12:12 + jlen].decode())
    tensors = {}
    off = 12 + jlen
    while off < len(raw):
        (nlen,) = struct.unpack("<I", raw[off:off + 4])
        off += 4
        name = raw[off:off + nlen].decode()
        off += nlen
        (rank,) = struct.unpack("<I", raw[off:off + 4])
        off += 4
        dims = struct.unpack(f"<{rank}I", raw[off:off + 4 * rank])
        off += 4 * rank
        count = int(np.prod(dims, dtype=np.int64)) if rank else 1
        tensors[name] = np.frombuffer(
            raw[off:off + 4 * count], dtype="<f4").reshape(dims).copy()
        off += 4 * count
    return config, tensors
