"""Image file IO and quality metrics.

RGB and mask images are 8-bit PNG. Depth maps use a raw little-endian
float32 format: one JSON header line, then ``height * width`` values.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_png(path: str | Path, img: np.ndarray) -> None:
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = to_uint8(arr)
    Image.fromarray(arr).save(Path(path))


def load_png(path: str | Path) -> np.ndarray:
    return np.asarray(Image.open(Path(path)), dtype=np.float32) / 255.0


def save_depth(path: str | Path, depth: np.ndarray) -> None:
    depth = np.ascontiguousarray(depth, dtype="<f4")
    header = {
        "format": "splatview-depth",
        "version": 1,
        "height": int(depth.shape[0]),
        "width": int(depth.shape[1]),
        "dtype": "<f4",
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        f.write(depth.tobytes())


def load_depth(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        if header.get("format") != "splatview-depth":
            raise ValueError(f"{path}: not a depth file")
        data = np.frombuffer(f.read(), dtype="<f4")
    return data.reshape(header["height"], header["width"]).copy()


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB."""
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    if mse <= 0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)
