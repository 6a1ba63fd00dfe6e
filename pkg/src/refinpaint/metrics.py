"""Image quality metrics and the stratified evaluation report.

PSNR runs on 8-bit quantized values (max 255), SSIM on luminance with
an 11-tap Gaussian window, and the Fréchet distance compares Gaussian
moments of pooled embeddings from the pluggable feature extractor (the
report labels that column "FD (pluggable)" — it is not comparable to
Inception-based FID numbers).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

from .masks import BIN_NAMES, classify_mask_ratio

LUMA = np.array([0.299, 0.587, 0.114])


def psnr(x: np.ndarray, y: np.ndarray, max_value: float = 255.0) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"psnr shape mismatch: {x.shape} vs {y.shape}")
    mse = np.mean((x - y) ** 2)
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(max_value ** 2 / mse))


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    k2 = np.outer(k, k)
    return k2 / k2.sum()


def ssim(x: np.ndarray, y: np.ndarray, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, max_value: float = 255.0) -> float:
    """Mean Gaussian-window SSIM on luminance; value in [-1, 1]."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"ssim shape mismatch: {x.shape} vs {y.shape}")
    if x.ndim == 3:
        x = x @ LUMA
        y = y @ LUMA
    c1 = (k1 * max_value) ** 2
    c2 = (k2 * max_value) ** 2
    if min(x.shape) < window:
        # single-window fallback: statistics over the whole image
        mx, my = x.mean(), y.mean()
        vx, vy = x.var(), y.var()
        cxy = ((x - mx) * (y - my)).mean()
        return float(((2 * mx * my + c1) * (2 * cxy + c2))
                     / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    kern = _gaussian_kernel(window, sigma)
    mu_x = convolve2d(x, kern, mode="valid")
    mu_y = convolve2d(y, kern, mode="valid")
    xx = convolve2d(x * x, kern, mode="valid")
    yy = convolve2d(y * y, kern, mode="valid")
    xy = convolve2d(x * y, kern, mode="valid")
    var_x = xx - mu_x ** 2
    var_y = yy - mu_y ** 2
    cov = xy - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return float((num / den).mean())


def _psd_sqrt(mat: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    if vals.min() < -tol * max(1.0, abs(vals.max())):
        raise ValueError(f"matrix is not PSD: min eigenvalue {vals.min():.3e}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(mu1: np.ndarray, cov1: np.ndarray,
                     mu2: np.ndarray, cov2: np.ndarray) -> float:
    """||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)) between two Gaussians.

    The cross-term square root is computed by eigendecomposition of the
    symmetrized product sqrt(S1) S2 sqrt(S1); small negative eigenvalues
    (down to -1e-8) are clipped to zero.
    """
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=np.float64))
    mu2 = np.atleast_1d(np.asarray(mu2, dtype=np.float64))
    cov1 = np.atleast_2d(np.asarray(cov1, dtype=np.float64))
    cov2 = np.atleast_2d(np.asarray(cov2, dtype=np.float64))
    s1_half = _psd_sqrt(cov1)
    inner = s1_half @ cov2 @ s1_half
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    if vals.min() < -1e-8 * max(1.0, abs(vals.max())):
        raise ValueError(f"cross term is not PSD: min eigenvalue {vals.min():.3e}")
    trace_sqrt = np.sqrt(np.clip(vals, 0.0, None)).sum()
    diff = mu1 - mu2
    return float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * trace_sqrt)


@dataclass
class BinResult:
    count: int = 0
    psnr: float = float("nan")
    ssim: float = float("nan")
    fd: float = float("nan")


@dataclass
class EvalReport:
    bins: dict[str, BinResult]
    average_psnr: float
    average_ssim: float
    average_fd: float
    total: int
    orphans: list[str] = field(default_factory=list)
    rows: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        payload = {
            "bins": {name: vars(r) for name, r in self.bins.items()},
            "average": {"psnr": self.average_psnr, "ssim": self.average_ssim,
                        "fd": self.average_fd},
            "total": self.total,
            "orphans": self.orphans,
        }
        return json.dumps(payload, indent=2)

    def to_text(self) -> str:
        lines = [f"{'bin':>8} {'n':>6} {'PSNR':>10} {'SSIM':>8} {'FD (pluggable)':>15}"]
        for name in BIN_NAMES:
            r = self.bins[name]
            lines.append(f"{name:>8} {r.count:>6} {r.psnr:>10.3f} {r.ssim:>8.4f} {r.fd:>15.4f}")
        lines.append(f"{'average':>8} {self.total:>6} {self.average_psnr:>10.3f} "
                     f"{self.average_ssim:>8.4f} {self.average_fd:>15.4f}")
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=["filename", "bin", "psnr", "ssim"])
            writer.writeheader()
            writer.writerows(self.rows)


def _weighted_mean(pairs: list[tuple[float, int]]) -> float:
    total = sum(n for _, n in pairs)
    if total == 0:
        return float("nan")
    return sum(v * n for v, n in pairs if n > 0) / total


def _moments(embeddings: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    arr = np.stack(embeddings)
    mu = arr.mean(axis=0)
    cov = np.cov(arr, rowvar=False) if arr.shape[0] > 1 else np.zeros((arr.shape[1],) * 2)
    return mu, np.atleast_2d(cov)


def evaluate_run(pred_dir, gt_dir, mask_dir, extractor=None) -> EvalReport:
    """Per-image metrics grouped by mask ratio bin, directories aligned by filename."""
    from PIL import Image
    from .autodiff import Tensor
    from .masks import load_mask_png

    if extractor is None:
        from .features import FeatureExtractor
        extractor = FeatureExtractor()
    pred_dir, gt_dir, mask_dir = Path(pred_dir), Path(gt_dir), Path(mask_dir)
    preds = {p.name: p for p in sorted(pred_dir.glob("*.png"))}
    gts = {p.name: p for p in sorted(gt_dir.glob("*.png"))}
    masks = {p.name: p for p in sorted(mask_dir.glob("*.png"))}
    common = sorted(set(preds) & set(gts) & set(masks))
    orphans = sorted((set(preds) | set(gts) | set(masks)) - set(common))

    per_bin: dict[str, dict] = {name: {"psnr": [], "ssim": [], "pred_emb": [], "gt_emb": []}
                                for name in BIN_NAMES}
    rows = []
    for name in common:
        pred = np.asarray(Image.open(preds[name]).convert("RGB"))
        gt = np.asarray(Image.open(gts[name]).convert("RGB"))
        mask = load_mask_png(masks[name])
        bin_name = classify_mask_ratio(mask)
        p = psnr(pred, gt, max_value=255.0)
        s = ssim(pred, gt)
        per_bin[bin_name]["psnr"].append(p)
        per_bin[bin_name]["ssim"].append(s)
        for key, img in (("pred_emb", pred), ("gt_emb", gt)):
            scaled = Tensor((img.astype(np.float32) / 127.5 - 1.0).transpose(2, 0, 1)[None])
            per_bin[bin_name][key].append(extractor.pooled_embedding(scaled)[0])
        rows.append({"filename": name, "bin": bin_name, "psnr": p, "ssim": s})

    bins = {}
    for name in BIN_NAMES:
        acc = per_bin[name]
        n = len(acc["psnr"])
        result = BinResult(count=n)
        if n:
            result.psnr = float(np.mean(acc["psnr"]))
            result.ssim = float(np.mean(acc["ssim"]))
            result.fd = frechet_distance(*_moments(acc["pred_emb"]), *_moments(acc["gt_emb"]))
        bins[name] = result

    total = len(common)
    return EvalReport(
        bins=bins,
        average_psnr=_weighted_mean([(bins[n].psnr, bins[n].count) for n in BIN_NAMES]),
        average_ssim=_weighted_mean([(bins[n].ssim, bins[n].count) for n in BIN_NAMES]),
        average_fd=_weighted_mean([(bins[n].fd, bins[n].count) for n in BIN_NAMES]),
        total=total, orphans=orphans, rows=rows)
