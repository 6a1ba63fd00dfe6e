"""Irregular free-form mask generation and the six-bin ratio protocol.

Masks are binary uint8 arrays where 1 marks a missing pixel. Hole ratio
bins are left-closed/right-open: [0.0,0.1), [0.1,0.2), ..., [0.5,0.6).
Half of each bin's corpus has holes touching the image border.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

BIN_NAMES = ("0-10", "10-20", "20-30", "30-40", "40-50", "50-60")
BIN_EDGES = tuple((i / 10.0, (i + 1) / 10.0) for i in range(6))


class MaskProtocolError(Exception):
    pass


@dataclass
class MaskSpec:
    mask: np.ndarray
    ratio_bin: str
    damaged_boundary: bool

    @property
    def ratio(self) -> float:
        return float(self.mask.mean())


def classify_mask_ratio(mask: np.ndarray) -> str:
    """Bin name for a binary mask; ratio >= 0.6 is out of protocol."""
    arr = np.asarray(mask)
    vals = np.unique(arr)
    if not np.all(np.isin(vals, (0, 1))):
        raise ValueError(f"mask must be binary 0/1, found values {vals[:5]}")
    ratio = float(arr.mean())
    for name, (lo, hi) in zip(BIN_NAMES, BIN_EDGES):
        if lo <= ratio < hi:
            return name
    raise MaskProtocolError(f"hole ratio {ratio:.3f} is outside the 0-60% protocol")


def apply_mask(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero out the missing pixels: image * (1 - mask)."""
    image = np.asarray(image)
    mask = np.asarray(mask)
    if mask.shape != image.shape[-2:]:
        raise ValueError(f"mask shape {mask.shape} does not match image spatial dims {image.shape[-2:]}")
    return image * (1 - mask)


def _draw_stroke(mask: np.ndarray, rng: np.random.Generator, allow_boundary: bool,
                 margin: int):
    """One random-walk brush stroke with varying thickness, drawn in place."""
    h, w = mask.shape
    lo_y, hi_y = (0, h) if allow_boundary else (margin, h - margin)
    lo_x, hi_x = (0, w) if allow_boundary else (margin, w - margin)
    y = rng.uniform(lo_y, hi_y)
    x = rng.uniform(lo_x, hi_x)
    angle = rng.uniform(0, 2 * np.pi)
    n_segments = rng.integers(4, 12)
    for _ in range(n_segments):
        angle += rng.uniform(-1.0, 1.0)
        length = rng.uniform(0.02, 0.08) * min(h, w)
        thickness = max(1, int(rng.uniform(0.005, 0.02) * min(h, w)))
        steps = max(2, int(length))
        for t in np.linspace(0.0, 1.0, steps):
            cy = y + t * length * np.sin(angle)
            cx = x + t * length * np.cos(angle)
            y0 = int(max(cy - thickness, lo_y))
            y1 = int(min(cy + thickness + 1, hi_y))
            x0 = int(max(cx - thickness, lo_x))
            x1 = int(min(cx + thickness + 1, hi_x))
            if y0 < y1 and x0 < x1:
                mask[y0:y1, x0:x1] = 1
        y = y + length * np.sin(angle)
        x = x + length * np.cos(angle)
        y = min(max(y, lo_y), hi_y - 1)
        x = min(max(x, lo_x), hi_x - 1)


def _touches_boundary(mask: np.ndarray) -> bool:
    return bool(mask[0, :].any() or mask[-1, :].any() or mask[:, 0].any() or mask[:, -1].any())


def gen_irregular_mask(ratio_bin: str, damaged_boundary: bool, seed: int,
                       size: int = 256, max_attempts: int = 200) -> MaskSpec:
    """Accumulate brush strokes until the hole ratio lands in the bin.

    Deterministic for a fixed (bin, boundary flag, seed, size).
    """
    if ratio_bin not in BIN_NAMES:
        raise ValueError(f"unknown ratio bin {ratio_bin!r}, expected one of {BIN_NAMES}")
    lo, hi = BIN_EDGES[BIN_NAMES.index(ratio_bin)]
    rng = np.random.default_rng([seed, BIN_NAMES.index(ratio_bin), int(damaged_boundary)])
    margin = max(2, size // 64)
    for _ in range(max_attempts):
        mask = np.zeros((size, size), dtype=np.uint8)
        # stop once inside the bin; overshooting past the bin restarts
        target = rng.uniform(max(lo, 0.01), hi)
        for _ in range(500):
            _draw_stroke(mask, rng, damaged_boundary, margin)
            ratio = mask.mean()
            if ratio >= target:
                break
        ratio = mask.mean()
        if not (lo <= ratio < hi):
            continue
        if damaged_boundary and not _touches_boundary(mask):
            # force a hole across the border
            edge_rng_side = rng.integers(0, 4)
            span = rng.integers(size // 16, size // 4)
            start = rng.integers(0, size - span)
            depth = rng.integers(2, max(3, size // 32))
            if edge_rng_side == 0:
                mask[:depth, start:start + span] = 1
            elif edge_rng_side == 1:
                mask[-depth:, start:start + span] = 1
            elif edge_rng_side == 2:
                mask[start:start + span, :depth] = 1
            else:
                mask[start:start + span, -depth:] = 1
            ratio = mask.mean()
            if not (lo <= ratio < hi):
                continue
        if not damaged_boundary and _touches_boundary(mask):
            continue
        return MaskSpec(mask=mask, ratio_bin=ratio_bin, damaged_boundary=damaged_boundary)
    raise MaskProtocolError(
        f"could not reach bin {ratio_bin} (boundary={damaged_boundary}) in {max_attempts} attempts")


def generate_corpus(out_dir, per_bin: int, seed: int, size: int = 256) -> list[Path]:
    """Write ``per_bin`` masks per ratio bin (half damaged-boundary) as PNGs.

    Layout: ``out_dir/<bin>/mask_<index>_<b|n>.png`` with 255 = missing.
    """
    from PIL import Image

    out_dir = Path(out_dir)
    written = []
    half = per_bin // 2
    for b, name in enumerate(BIN_NAMES):
        bin_dir = out_dir / name
        bin_dir.mkdir(parents=True, exist_ok=True)
        for idx in range(per_bin):
            damaged = idx < half
            spec = gen_irregular_mask(name, damaged, seed=seed * 100_000 + b * 10_000 + idx,
                                      size=size)
            tag = "b" if damaged else "n"
            path = bin_dir / f"mask_{idx:05d}_{tag}.png"
            Image.fromarray(spec.mask * 255).save(path)
            written.append(path)
    return written


def load_mask_png(path) -> np.ndarray:
    """Read a single-channel mask PNG (255 = missing) as binary 0/1."""
    from PIL import Image

    arr = np.asarray(Image.open(path).convert("L"))
    return (arr >= 128).astype(np.uint8)


def scan_mask_corpus(root) -> dict[str, list[Path]]:
    """Index an external or generated corpus binned by the six ratio names."""
    root = Path(root)
    corpus = {}
    for name in BIN_NAMES:
        bin_dir = root / name
        corpus[name] = sorted(bin_dir.glob("*.png")) if bin_dir.is_dir() else []
    return corpus
