"""Training objective: pixel, perceptual, and style terms.

Default trade-off weights are 1 / 0.1 / 250 for the pixel, perceptual,
and style terms respectively.
"""

from __future__ import annotations

from dataclasses import dataclass

from .autodiff import Tensor, matmul


@dataclass
class LossWeights:
    l1: float = 1.0
    perceptual: float = 0.1
    style: float = 250.0

    def __post_init__(self):
        if min(self.l1, self.perceptual, self.style) < 0:
            raise ValueError("loss weights must be nonnegative")


def l1_loss(out: Tensor, target: Tensor) -> Tensor:
    if out.shape != target.shape:
        raise ValueError(f"l1_loss shape mismatch: {out.shape} vs {target.shape}")
    return (out - target).abs().mean()


def perceptual_loss(out: Tensor, target: Tensor, extractor) -> Tensor:
    """Mean absolute feature discrepancy, each stage normalized by its element count."""
    total = None
    for fo, ft in zip(extractor.stages(out), extractor.stages(target)):
        term = (fo - ft).abs().mean()
        total = term if total is None else total + term
    return total


def gram_matrix(feature: Tensor) -> Tensor:
    """Channel inner products of a CHW or NCHW feature map, normalized by C*H*W."""
    if feature.ndim == 3:
        c, h, w = feature.shape
        flat = feature.reshape(c, h * w)
        return matmul(flat, flat.transpose(1, 0)) * (1.0 / (c * h * w))
    n, c, h, w = feature.shape
    flat = feature.reshape(n, c, h * w)
    return matmul(flat, flat.transpose(0, 2, 1)) * (1.0 / (c * h * w))


def style_loss(out: Tensor, target: Tensor, extractor) -> Tensor:
    """Mean absolute Gram-matrix discrepancy across extractor stages."""
    total = None
    count = 0
    for fo, ft in zip(extractor.stages(out), extractor.stages(target)):
        term = (gram_matrix(fo) - gram_matrix(ft)).abs().mean()
        total = term if total is None else total + term
        count += 1
    return total * (1.0 / count)


def joint_loss(out: Tensor, target: Tensor, extractor,
               weights: LossWeights | None = None) -> tuple[Tensor, dict[str, float]]:
    """Weighted sum of the three terms plus a per-component breakdown."""
    weights = weights or LossWeights()
    pixel = l1_loss(out, target)
    perc = perceptual_loss(out, target, extractor)
    style = style_loss(out, target, extractor)
    total = pixel * weights.l1 + perc * weights.perceptual + style * weights.style
    breakdown = {
        "l1": pixel.item(),
        "perceptual": perc.item(),
        "style": style.item(),
        "joint": total.item(),
    }
    return total, breakdown
