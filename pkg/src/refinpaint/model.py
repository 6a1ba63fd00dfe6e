"""Full reference-guided inpainting network.

A four-stage encoder tokenizes the masked image (RGB + mask channel) and
the reference image in parallel streams. At the first three stages the
reference features are warped toward the input by offset-driven
deformable convolution, harmonized channel-wise, refined at half
resolution with reference attention, and added to the self-attention
stream. The deepest feature passes through one transformer decoder layer
and a convolutional tail with five 2x upsamplings and four residual
blocks (skip concatenations at the 1/8 and 1/4 scales) to produce the
completed image. Known pixels are composited back exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from .autodiff import Tensor, concat, gelu, nearest_upsample2
from .blocks import (DeformableConv, DynamicOffsetEstimator, FeedForward,
                     MiniPatchEmbed, MultiHeadAttention, OverlapPatchEmbed,
                     PatchHarmonization, ResidualBlock, TransformerLayer,
                     UpsampleConv, to_map, to_tokens)
from .nn import Conv2d, Module, ModuleList

VARIANTS = ("full", "align_only", "basic")


@dataclass
class ModelConfig:
    embed_dims: tuple[int, ...] = (32, 64, 128, 160)
    num_heads: tuple[int, ...] = (1, 2, 4, 8)
    sr_ratios: tuple[int, ...] = (8, 4, 2, 1)
    depths: tuple[int, ...] = (2, 2, 2, 2)
    ref_scales: int = 3
    hidden_ratio: int = 4
    decoder_depth: int = 1
    variant: str = "full"
    in_channels: int = 4   # RGB + mask
    ref_channels: int = 3

    def __post_init__(self):
        n = len(self.embed_dims)
        if not (len(self.num_heads) == len(self.sr_ratios) == len(self.depths) == n):
            raise ValueError("per-stage config tuples must have equal length")
        if self.ref_scales > n:
            raise ValueError("ref_scales cannot exceed the number of stages")
        for d, h in zip(self.embed_dims, self.num_heads):
            if d % h:
                raise ValueError(f"embed dim {d} not divisible by head count {h}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")

    @property
    def num_stages(self) -> int:
        return len(self.embed_dims)

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("embed_dims", "num_heads", "sr_ratios", "depths"):
            if key in d:
                d[key] = tuple(int(v) for v in d[key])
        return ModelConfig(**d)


def toy_config(variant: str = "full") -> ModelConfig:
    return ModelConfig(variant=variant)


def full_config(variant: str = "full") -> ModelConfig:
    # paper-scale stage widths are unpublished; this is a plausible scaling
    return ModelConfig(embed_dims=(64, 128, 320, 512), num_heads=(1, 2, 5, 8),
                       sr_ratios=(8, 4, 2, 1), depths=(3, 4, 6, 3), variant=variant)


PRESETS = {"toy": toy_config, "full": full_config}


class AlignmentStage(Module):
    """Offset estimation + deformable warp + channel harmonization."""

    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__()
        self.offsets = DynamicOffsetEstimator(dim, kernel=3, rng=rng)
        self.warp = DeformableConv(dim, dim, kernel=3, rng=rng)
        self.harmonize = PatchHarmonization(dim, rng=rng)

    def align(self, feat: Tensor, ref: Tensor) -> Tensor:
        """Warped (coarsely aligned) reference features only."""
        return self.warp(ref, self.offsets(feat, ref))

    def forward(self, feat: Tensor, ref: Tensor) -> Tensor:
        return self.harmonize(feat, self.align(feat, ref))


class RefineStage(Module):
    """Half-resolution reference-attention refinement term.

    Both inputs are mini-patch embedded; queries come from the aligned
    stream, keys/values from the reference stream. The output is a pure
    refinement signal: it is upsampled back to the stage resolution
    through a zero-initialized projection, so it starts at exactly zero
    and fades in during training.
    """

    def __init__(self, dim: int, num_heads: int, sr_ratio: int, hidden_ratio: int,
                 rng: np.random.Generator):
        super().__init__()
        self.embed_aligned = MiniPatchEmbed(dim, dim, rng=rng)
        self.embed_ref = MiniPatchEmbed(dim, dim, rng=rng)
        self.attn = MultiHeadAttention(dim, num_heads, sr_ratio, rng=rng)
        self.ffb = FeedForward(dim, hidden_ratio, rng=rng)
        self.up_proj = Conv2d(dim, dim, 1, rng=rng, zero_init=True)

    def forward(self, aligned: Tensor, ref: Tensor) -> Tensor:
        n, c, h, w = aligned.shape
        mga = self.embed_aligned(aligned)
        mref = self.embed_ref(ref)
        hh, hw = h // 2, w // 2
        q = to_tokens(mga)
        kv = to_tokens(mref)
        tokens = self.attn(q, kv, kv_hw=(hh, hw)) + q
        tokens = self.ffb(tokens)
        return self.up_proj(nearest_upsample2(to_map(tokens, hh, hw)))


class Encoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        dims = cfg.embed_dims
        self.embeds = ModuleList()
        self.ref_embeds = ModuleList()
        self.main_stages = ModuleList()
        self.align_stages = ModuleList()
        self.refine_stages = ModuleList()
        self.align_projs = ModuleList()
        # refine stages draw from their own stream so the weights shared
        # between the full and align_only variants are seed-identical
        refine_rng = rng.spawn(1)[0]
        for i in range(cfg.num_stages):
            if i == 0:
                self.embeds.append(OverlapPatchEmbed(cfg.in_channels, dims[0], 7, 4, 3, rng))
            else:
                self.embeds.append(OverlapPatchEmbed(dims[i - 1], dims[i], 3, 2, 1, rng))
            self.main_stages.append(ModuleList(
                TransformerLayer(dims[i], cfg.num_heads[i], cfg.sr_ratios[i],
                                 cfg.hidden_ratio, rng)
                for _ in range(cfg.depths[i])))
            if cfg.variant != "basic" and i < cfg.ref_scales:
                if i == 0:
                    self.ref_embeds.append(OverlapPatchEmbed(cfg.ref_channels, dims[0], 7, 4, 3, rng))
                else:
                    self.ref_embeds.append(OverlapPatchEmbed(dims[i - 1], dims[i], 3, 2, 1, rng))
                self.align_stages.append(AlignmentStage(dims[i], rng))
                self.align_projs.append(Conv2d(dims[i], dims[i], 1, rng=rng))
                if cfg.variant == "full":
                    self.refine_stages.append(RefineStage(dims[i], cfg.num_heads[i],
                                                          cfg.sr_ratios[i], cfg.hidden_ratio,
                                                          refine_rng))

    def main_transform(self, i: int, x: Tensor) -> Tensor:
        for layer in self.main_stages[i]:
            x = layer(x)
        return x

    def forward(self, masked: Tensor, mask: Tensor, reference: Tensor) -> list[Tensor]:
        h, w = masked.shape[2], masked.shape[3]
        if h % 32 or w % 32:
            raise ValueError(f"input resolution {h}x{w} must be a multiple of 32")
        cfg = self.cfg
        x = concat([masked, mask], axis=1)
        ref = reference
        feats = []
        for i in range(cfg.num_stages):
            x = self.embeds[i](x if i == 0 else feats[-1])
            f_main = self.main_transform(i, x)
            use_ref = cfg.variant != "basic" and i < cfg.ref_scales
            if use_ref:
                ref = self.ref_embeds[i](ref)
                aligned = self.align_stages[i](x, ref)
                f_ref = self.align_projs[i](aligned)
                if cfg.variant == "full":
                    f_ref = f_ref + self.refine_stages[i](aligned, ref)
                feats.append(f_main + f_ref)
            else:
                feats.append(f_main)
        return feats


class Decoder(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        dims = cfg.embed_dims
        self.blocks = ModuleList(
            TransformerLayer(dims[-1], cfg.num_heads[-1], cfg.sr_ratios[-1],
                             cfg.hidden_ratio, rng)
            for _ in range(cfg.decoder_depth))
        c_mid = max(dims[0] // 2, 8)
        c_low = max(dims[0] // 4, 8)
        self.up1 = UpsampleConv(dims[3], dims[2], rng)
        self.up2 = UpsampleConv(dims[2], dims[1], rng)
        self.fuse1 = Conv2d(dims[1] * 2, dims[1], 1, rng=rng)
        self.res1 = ResidualBlock(dims[1], rng)
        self.up3 = UpsampleConv(dims[1], dims[0], rng)
        self.fuse2 = Conv2d(dims[0] * 2, dims[0], 1, rng=rng)
        self.res2 = ResidualBlock(dims[0], rng)
        self.up4 = UpsampleConv(dims[0], c_mid, rng)
        self.res3 = ResidualBlock(c_mid, rng)
        self.up5 = UpsampleConv(c_mid, c_low, rng)
        self.res4 = ResidualBlock(c_low, rng)
        # small head gain keeps the tanh out of saturation at init
        self.head = Conv2d(c_low, 3, 3, padding=1, rng=rng, init_scale=0.05)

    def forward(self, feats: list[Tensor]) -> Tensor:
        if len(feats) != 4:
            raise ValueError(f"decoder expects 4 scale features, got {len(feats)}")
        x = feats[3]
        for block in self.blocks:
            x = block(x)
        x = self.up1(x)
        x = self.up2(x)
        x = self.res1(gelu(self.fuse1(concat([x, feats[1]], axis=1))))
        x = self.up3(x)
        x = self.res2(gelu(self.fuse2(concat([x, feats[0]], axis=1))))
        x = self.res3(self.up4(x))
        x = self.res4(self.up5(x))
        return self.head(x).tanh()


class InpaintingModel(Module):
    """Encoder + decoder with exact known-pixel compositing."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.encoder = Encoder(cfg, rng)
        self.decoder = Decoder(cfg, rng)

    def encode(self, masked: Tensor, mask: Tensor, reference: Tensor) -> list[Tensor]:
        return self.encoder(masked, mask, reference)

    def generate(self, masked: Tensor, mask: Tensor, reference: Tensor) -> Tensor:
        """Raw network output in [-1, 1], before compositing."""
        return self.decoder(self.encode(masked, mask, reference))

    def inpaint(self, image: Tensor, mask: Tensor, reference: Tensor) -> tuple[Tensor, Tensor]:
        """Mask the image, fill the holes, and composite known pixels back.

        Returns (final, raw) where final equals the input exactly outside
        the mask.
        """
        masked = image * (1.0 - mask)
        raw = self.generate(masked, mask, reference)
        final = masked + raw * mask
        return final, raw
