"""PNG I/O and the [-1, 1] value mapping used by the model."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def load_image(path) -> np.ndarray:
    """8-bit RGB PNG -> float32 CHW in [-1, 1]."""
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32)
    return (arr / 127.5 - 1.0).transpose(2, 0, 1)


def to_uint8(chw: np.ndarray) -> np.ndarray:
    """[-1, 1] CHW -> 8-bit HWC with round-half-away quantization."""
    arr = np.clip((chw.transpose(1, 2, 0) + 1.0) * 127.5, 0.0, 255.0)
    return np.rint(arr).astype(np.uint8)


def save_image(chw: np.ndarray, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(chw)).save(path)


def save_grid(images: list[np.ndarray], path) -> None:
    """Horizontal side-by-side strip of [-1, 1] CHW images."""
    panels = [to_uint8(img) for img in images]
    h = max(p.shape[0] for p in panels)
    padded = []
    for p in panels:
        if p.shape[0] < h:
            p = np.pad(p, ((0, h - p.shape[0]), (0, 0), (0, 0)))
        padded.append(p)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.concatenate(padded, axis=1)).save(path)
