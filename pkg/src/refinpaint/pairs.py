"""Input/reference pair mining: subdivision, matching, cropping, manifest.

The manifest is JSON lines, one record per accepted crop pair with
relative paths and the matched-keypoint bookkeeping.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .keypoints import detect_and_describe, match_knn

MANIFEST_NAME = "manifest.jsonl"


class PairRejected(Exception):
    """Raised when a sub-image pair yields too few keypoint matches."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass
class ImagePairRecord:
    input: str
    reference: str
    matches: int
    cx_in: int
    cy_in: int
    cx_ref: int
    cy_ref: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @staticmethod
    def from_json(line: str) -> "ImagePairRecord":
        return ImagePairRecord(**json.loads(line))


def subdivide(image: np.ndarray) -> list[np.ndarray]:
    """Four corner quadrants plus a same-size center crop (five W/2 x H/2 views)."""
    h, w = image.shape[:2]
    if h % 2 or w % 2:
        raise ValueError(f"subdivide needs even dimensions, got {w}x{h}")
    hh, hw = h // 2, w // 2
    cy, cx = h // 4, w // 4
    return [
        image[:hh, :hw],
        image[:hh, hw:],
        image[hh:, :hw],
        image[hh:, hw:],
        image[cy:cy + hh, cx:cx + hw],
    ]


def _clamped_center(cy: float, cx: float, h: int, w: int, crop: int) -> tuple[int, int]:
    half = crop // 2
    cy = int(round(min(max(cy, half), h - (crop - half))))
    cx = int(round(min(max(cx, half), w - (crop - half))))
    return cy, cx


def crop_pair(image_a: np.ndarray, image_b: np.ndarray,
              matches: list[tuple[int, int, float]],
              kps_a, kps_b, crop_size: int = 256,
              min_matches: int = 4) -> tuple[np.ndarray, np.ndarray, dict]:
    """Crop both images around the matched-keypoint centroids.

    Returns (input crop, reference crop, centers dict); raises
    :class:`PairRejected` when there are too few matches or either image
    is smaller than the crop.
    """
    if len(matches) < min_matches:
        raise PairRejected(f"only {len(matches)} matches, need {min_matches}")
    ha, wa = image_a.shape[:2]
    hb, wb = image_b.shape[:2]
    if min(ha, wa) < crop_size or min(hb, wb) < crop_size:
        raise PairRejected(f"image smaller than crop size {crop_size}")
    ys_a = np.array([kps_a[ia].y for ia, _, _ in matches])
    xs_a = np.array([kps_a[ia].x for ia, _, _ in matches])
    ys_b = np.array([kps_b[ib].y for _, ib, _ in matches])
    xs_b = np.array([kps_b[ib].x for _, ib, _ in matches])
    cy_a, cx_a = _clamped_center(ys_a.mean(), xs_a.mean(), ha, wa, crop_size)
    cy_b, cx_b = _clamped_center(ys_b.mean(), xs_b.mean(), hb, wb, crop_size)
    half = crop_size // 2
    crop_a = image_a[cy_a - half:cy_a - half + crop_size, cx_a - half:cx_a - half + crop_size]
    crop_b = image_b[cy_b - half:cy_b - half + crop_size, cx_b - half:cx_b - half + crop_size]
    centers = {"cy_in": cy_a, "cx_in": cx_a, "cy_ref": cy_b, "cx_ref": cx_b}
    return crop_a, crop_b, centers


def mine_pairs(src_a, src_b, out_dir, crop_size: int = 256, min_matches: int = 4,
               ratio_threshold: float = 0.7, log=None) -> tuple[list[ImagePairRecord], int]:
    """Run the full mining pipeline over filename-aligned directories.

    Subdivides each source pair into five sub-image pairs, matches
    keypoints, and writes accepted 256x256 (or ``crop_size``) crops plus
    a JSONL manifest into ``out_dir``. Returns (records, rejected count).
    """
    from PIL import Image

    src_a, src_b, out_dir = Path(src_a), Path(src_b), Path(out_dir)
    names_a = {p.name: p for p in sorted(src_a.glob("*.png"))}
    names_b = {p.name: p for p in sorted(src_b.glob("*.png"))}
    common = sorted(set(names_a) & set(names_b))
    out_dir.mkdir(parents=True, exist_ok=True)
    records: list[ImagePairRecord] = []
    rejected = 0
    for name in common:
        img_a = np.asarray(Image.open(names_a[name]).convert("RGB"))
        img_b = np.asarray(Image.open(names_b[name]).convert("RGB"))
        subs_a = subdivide(img_a)
        subs_b = subdivide(img_b)
        for si, (sa, sb) in enumerate(zip(subs_a, subs_b)):
            kps_a = detect_and_describe(sa)
            kps_b = detect_and_describe(sb)
            if len(kps_a) == 0 or len(kps_b) == 0:
                rejected += 1
                if log:
                    log(f"{name}[{si}]: rejected (no keypoints)")
                continue
            matches = match_knn(np.stack([k.descriptor for k in kps_a]),
                                np.stack([k.descriptor for k in kps_b]),
                                ratio_threshold=ratio_threshold)
            try:
                crop_a, crop_b, centers = crop_pair(sa, sb, matches, kps_a, kps_b,
                                                    crop_size=crop_size,
                                                    min_matches=min_matches)
            except PairRejected as e:
                rejected += 1
                if log:
                    log(f"{name}[{si}]: rejected ({e.reason})")
                continue
            stem = f"{Path(name).stem}_s{si}"
            in_rel = f"input/{stem}.png"
            ref_rel = f"reference/{stem}.png"
            (out_dir / "input").mkdir(exist_ok=True)
            (out_dir / "reference").mkdir(exist_ok=True)
            Image.fromarray(crop_a).save(out_dir / in_rel)
            Image.fromarray(crop_b).save(out_dir / ref_rel)
            records.append(ImagePairRecord(
                input=in_rel, reference=ref_rel, matches=len(matches),
                cx_in=centers["cx_in"], cy_in=centers["cy_in"],
                cx_ref=centers["cx_ref"], cy_ref=centers["cy_ref"]))
    write_manifest(records, out_dir / MANIFEST_NAME)
    return records, rejected


def write_manifest(records: list[ImagePairRecord], path) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(rec.to_json() + "\n")


def read_manifest(path) -> list[ImagePairRecord]:
    with open(path) as f:
        return [ImagePairRecord.from_json(line) for line in f if line.strip()]
