"""PNG reading and writing."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .imgcore import Frame


def list_frames(directory) -> list:
    """PNG files of a directory in lexicographic (= temporal) order."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() == ".png")


def load_frame(path, index: int = 0) -> Frame:
    with Image.open(path) as im:
        return Frame(np.asarray(im.convert("RGB")), index)


def read_frames(directory) -> list:
    return [load_frame(p, i) for i, p in enumerate(list_frames(directory))]


def save_rgb(path, rgb: np.ndarray) -> None:
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) array, got {rgb.shape}")
    Image.fromarray(rgb).save(path)


def save_gray(path, img: np.ndarray) -> None:
    """8-bit greyscale for uint8/bool input, 16-bit for uint16 input."""
    img = np.asarray(img)
    if img.dtype == bool:
        img = img.astype(np.uint8) * 255
    if img.dtype != np.uint16:
        img = img.astype(np.uint8)
    # Pillow maps uint8 to mode "L" and uint16 to "I;16"
    Image.fromarray(np.ascontiguousarray(img)).save(path)


def load_gray(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im)


def to_uint16(values: np.ndarray, vmax: float = 1.0) -> np.ndarray:
    """Scale ``[0, vmax]`` to the full uint16 range."""
    return np.rint(np.clip(values / vmax, 0.0, 1.0) * 65535.0).astype(np.uint16)
