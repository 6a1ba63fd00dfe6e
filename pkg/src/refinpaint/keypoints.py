"""Scale-space keypoint detection and descriptors for pair mining.

A compact difference-of-Gaussians pipeline: 3 octaves, extrema of the
DoG stack above a contrast threshold, quadratic sub-pixel refinement,
gradient-orientation assignment, and a 4x4-cell / 8-bin gradient
histogram descriptor (128-D, unit-normalized). It is a deliberately
simplified stand-in for a full SIFT implementation; it preserves the
matching semantics (repeatable keypoints with comparable descriptors)
at a fraction of the complexity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, maximum_filter, minimum_filter

NUM_OCTAVES = 3
SCALES_PER_OCTAVE = 4
BASE_SIGMA = 1.6
CONTRAST_THRESHOLD = 0.02
DESCR_CELLS = 4
DESCR_BINS = 8
DESCR_RADIUS = 8   # half-width of the 16x16 descriptor window


@dataclass
class Keypoint:
    y: float
    x: float
    scale: float
    orientation: float
    descriptor: np.ndarray


def _to_gray(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr @ np.array([0.299, 0.587, 0.114])
    if arr.max() > 1.5:
        arr = arr / 255.0
    return arr


def _gradients(img: np.ndarray):
    gy, gx = np.gradient(img)
    mag = np.hypot(gy, gx)
    ang = np.arctan2(gy, gx)
    return mag, ang


def _orientation(mag: np.ndarray, ang: np.ndarray, y: int, x: int) -> float:
    h, w = mag.shape
    r = 6
    y0, y1 = max(0, y - r), min(h, y + r + 1)
    x0, x1 = max(0, x - r), min(w, x + r + 1)
    hist, edges = np.histogram(ang[y0:y1, x0:x1], bins=36, range=(-np.pi, np.pi),
                               weights=mag[y0:y1, x0:x1])
    peak = int(hist.argmax())
    return float((edges[peak] + edges[peak + 1]) / 2.0)


def _descriptor(mag: np.ndarray, ang: np.ndarray, y: int, x: int,
                orientation: float) -> np.ndarray | None:
    h, w = mag.shape
    r = DESCR_RADIUS
    if y - r < 0 or y + r > h or x - r < 0 or x + r > w:
        return None
    m = mag[y - r:y + r, x - r:x + r]
    a = (ang[y - r:y + r, x - r:x + r] - orientation) % (2 * np.pi)
    bins = np.minimum((a / (2 * np.pi) * DESCR_BINS).astype(int), DESCR_BINS - 1)
    cell = 2 * r // DESCR_CELLS
    desc = np.zeros((DESCR_CELLS, DESCR_CELLS, DESCR_BINS))
    for cy in range(DESCR_CELLS):
        for cx in range(DESCR_CELLS):
            mm = m[cy * cell:(cy + 1) * cell, cx * cell:(cx + 1) * cell].ravel()
            bb = bins[cy * cell:(cy + 1) * cell, cx * cell:(cx + 1) * cell].ravel()
            desc[cy, cx] = np.bincount(bb, weights=mm, minlength=DESCR_BINS)
    vec = desc.ravel()
    norm = np.linalg.norm(vec)
    if norm < 1e-9:
        return None
    vec = np.minimum(vec / norm, 0.2)
    norm = np.linalg.norm(vec)
    if norm < 1e-9:
        return None
    return vec / norm


def _subpixel_offset(dog: np.ndarray, s: int, y: int, x: int) -> tuple[float, float]:
    def axis_offset(m1, c, p1):
        denom = m1 - 2 * c + p1
        if abs(denom) < 1e-12:
            return 0.0
        return float(np.clip(-0.5 * (p1 - m1) / denom, -0.5, 0.5))

    dy = axis_offset(dog[s, y - 1, x], dog[s, y, x], dog[s, y + 1, x])
    dx = axis_offset(dog[s, y, x - 1], dog[s, y, x], dog[s, y, x + 1])
    return dy, dx


def detect_and_describe(image: np.ndarray, max_keypoints: int = 500) -> list[Keypoint]:
    """Keypoints with unit descriptors; deterministic for a fixed input."""
    gray = _to_gray(image)
    keypoints: list[Keypoint] = []
    octave_img = gray
    for octave in range(NUM_OCTAVES):
        h, w = octave_img.shape
        if min(h, w) < 4 * DESCR_RADIUS:
            break
        sigmas = [BASE_SIGMA * (2.0 ** (i / 2.0)) for i in range(SCALES_PER_OCTAVE + 1)]
        gauss = np.stack([gaussian_filter(octave_img, s) for s in sigmas])
        dog = gauss[1:] - gauss[:-1]
        maxed = maximum_filter(dog, size=3, mode="constant")
        mined = minimum_filter(dog, size=3, mode="constant")
        is_ext = ((dog == maxed) | (dog == mined)) & (np.abs(dog) > CONTRAST_THRESHOLD)
        is_ext[0] = is_ext[-1] = False
        is_ext[:, :DESCR_RADIUS, :] = is_ext[:, -DESCR_RADIUS:, :] = False
        is_ext[:, :, :DESCR_RADIUS] = is_ext[:, :, -DESCR_RADIUS:] = False
        mag, ang = _gradients(gauss[1])
        for s, y, x in zip(*np.nonzero(is_ext)):
            ori = _orientation(mag, ang, y, x)
            desc = _descriptor(mag, ang, y, x, ori)
            if desc is None:
                continue
            dy, dx = _subpixel_offset(dog, s, y, x)
            factor = 2.0 ** octave
            keypoints.append(Keypoint(
                y=(y + dy) * factor, x=(x + dx) * factor,
                scale=sigmas[s] * factor, orientation=ori, descriptor=desc))
        octave_img = octave_img[::2, ::2]
    if len(keypoints) > max_keypoints:
        # keep the strongest by descriptor energy is arbitrary; prefer stable order
        keypoints = keypoints[:max_keypoints]
    return keypoints


def match_knn(desc_a: np.ndarray, desc_b: np.ndarray, ratio_threshold: float = 0.7,
              absolute_threshold: float = 0.5, cross_check: bool = False) -> list[tuple[int, int, float]]:
    """Lowe-style 2-NN ratio matching by Euclidean distance.

    Returns (index_a, index_b, distance) triples. With fewer than two
    candidate descriptors the ratio test degenerates to an absolute
    distance threshold.
    """
    desc_a = np.atleast_2d(np.asarray(desc_a, dtype=np.float64))
    desc_b = np.atleast_2d(np.asarray(desc_b, dtype=np.float64))
    if desc_a.size == 0 or desc_b.size == 0:
        raise ValueError("match_knn requires nonempty descriptor sets")
    from scipy.spatial.distance import cdist

    dists = cdist(desc_a, desc_b)
    matches = []
    for ia in range(dists.shape[0]):
        row = dists[ia]
        if row.size < 2:
            ib = int(row.argmin())
            if row[ib] < absolute_threshold:
                matches.append((ia, ib, float(row[ib])))
            continue
        order = np.argsort(row)
        ib, ib2 = int(order[0]), int(order[1])
        d1, d2 = row[ib], row[ib2]
        if d2 < 1e-12:
            accepted = d1 < 1e-12
        else:
            accepted = d1 / d2 < ratio_threshold
        if accepted:
            matches.append((ia, ib, float(d1)))
    if cross_check:
        best_for_b = dists.argmin(axis=0)
        matches = [m for m in matches if best_for_b[m[1]] == m[0]]
    return matches
