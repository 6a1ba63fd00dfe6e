"""Pluggable multi-stage feature extractor for perceptual/style losses.

The default is a fixed, seeded, randomly initialized five-stage conv
pyramid: random projections still induce a usable discrepancy metric and
keep the loss machinery trainable end-to-end without bundled pretrained
weights. Externally trained stage weights can be supplied through the
checkpoint format.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, conv2d, gelu
from .checkpoint import load_checkpoint

NUM_STAGES = 5


class FeatureExtractor:
    """Five conv stages at 1/1, 1/2, 1/4, 1/8, 1/16 resolution.

    Stage weights are frozen (no gradient is taken with respect to them),
    but gradients flow through the stages to the images being compared.
    """

    def __init__(self, channels: tuple[int, ...] = (8, 16, 24, 32, 32), seed: int = 7):
        if len(channels) != NUM_STAGES:
            raise ValueError(f"extractor needs {NUM_STAGES} stages, got {len(channels)}")
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        in_ch = 3
        for i, out_ch in enumerate(channels):
            fan_in = in_ch * 9
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), (out_ch, in_ch, 3, 3))
            self.weights.append(Tensor(w.astype(np.float32)))
            self.biases.append(Tensor(np.zeros(out_ch, dtype=np.float32)))
            in_ch = out_ch

    @property
    def num_stages(self) -> int:
        return len(self.weights)

    def stages(self, image: Tensor) -> list[Tensor]:
        """All stage activations for an NCHW image batch."""
        feats = []
        x = image
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            stride = 1 if i == 0 else 2
            x = gelu(conv2d(x, w, b, stride=stride, padding=1))
            feats.append(x)
        return feats

    def pooled_embedding(self, image: Tensor) -> np.ndarray:
        """Spatially pooled final-stage feature, for distribution metrics."""
        final = self.stages(image)[-1]
        return final.data.mean(axis=(2, 3))

    @staticmethod
    def from_checkpoint(path) -> "FeatureExtractor":
        """Build an extractor from externally supplied stage weights.

        Expects parameters named ``stage{i}.weight`` / ``stage{i}.bias``
        for i in 0..4.
        """
        state = load_checkpoint(path)
        fx = FeatureExtractor.__new__(FeatureExtractor)
        fx.weights, fx.biases = [], []
        for i in range(NUM_STAGES):
            try:
                w = state[f"stage{i}.weight"]
                b = state[f"stage{i}.bias"]
            except KeyError as e:
                raise KeyError(f"extractor checkpoint missing {e.args[0]}") from None
            fx.weights.append(Tensor(w))
            fx.biases.append(Tensor(b))
        return fx


class IdentityExtractor:
    """Single identity stage; reduces perceptual loss to plain L1 in tests."""

    num_stages = 1

    def stages(self, image: Tensor) -> list[Tensor]:
        return [image]
