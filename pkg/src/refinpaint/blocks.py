"""Reusable network components.

Feature maps travel as NCHW tensors; attention operates on a
(batch, tokens, channels) view. The two layouts are converted by
``to_tokens`` / ``to_map``, which are exact inverses.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (Tensor, concat, conv2d, gelu, grid_sample,
                       nearest_upsample2, softmax)
from .nn import Conv2d, LayerNorm, Linear, Module, ModuleList


def to_tokens(x: Tensor) -> Tensor:
    """NCHW -> (N, H*W, C)."""
    n, c, h, w = x.shape
    return x.reshape(n, c, h * w).transpose(0, 2, 1)


def to_map(tokens: Tensor, h: int, w: int) -> Tensor:
    """(N, H*W, C) -> NCHW."""
    n, t, c = tokens.shape
    if t != h * w:
        raise ValueError(f"token count {t} does not match {h}x{w}")
    return tokens.transpose(0, 2, 1).reshape(n, c, h, w)


class OverlapPatchEmbed(Module):
    """Strided conv tokenization with overlapping windows, then channel norm."""

    def __init__(self, in_ch: int, embed_dim: int, patch: int, stride: int,
                 padding: int, rng: np.random.Generator):
        super().__init__()
        if stride > patch:
            raise ValueError(f"stride {stride} exceeds patch size {patch}; windows must overlap")
        self.stride = stride
        self.proj = Conv2d(in_ch, embed_dim, patch, stride=stride, padding=padding, rng=rng)
        self.norm = LayerNorm(embed_dim)

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        if h % self.stride != 0:
            raise ValueError(f"height {h} not divisible by embedding stride {self.stride}")
        if w % self.stride != 0:
            raise ValueError(f"width {w} not divisible by embedding stride {self.stride}")
        y = self.proj(x)
        ho, wo = y.shape[2], y.shape[3]
        return to_map(self.norm(to_tokens(y)), ho, wo)


class MiniPatchEmbed(Module):
    """Fine-grained tokenization that halves the spatial resolution."""

    def __init__(self, in_ch: int, embed_dim: int, rng: np.random.Generator):
        super().__init__()
        self.proj = Conv2d(in_ch, embed_dim, 3, stride=2, padding=1, rng=rng)
        self.norm = LayerNorm(embed_dim)

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"mini-patch embedding needs even spatial dims, got {h}x{w}")
        y = self.proj(x)
        return to_map(self.norm(to_tokens(y)), h // 2, w // 2)


class MultiHeadAttention(Module):
    """Scaled dot-product attention; Q from one stream, K/V from another.

    ``sr_ratio`` > 1 downsamples the key/value tokens with a strided conv
    before projection, shrinking the attention matrix.
    """

    def __init__(self, dim: int, num_heads: int, sr_ratio: int, rng: np.random.Generator):
        super().__init__()
        if dim % num_heads:
            raise ValueError(f"embed dim {dim} not divisible by {num_heads} heads")
        if sr_ratio < 1:
            raise ValueError("spatial reduction ratio must be >= 1")
        self.dim = dim
        self.num_heads = num_heads
        self.sr_ratio = sr_ratio
        self.q_proj = Linear(dim, dim, rng=rng)
        self.k_proj = Linear(dim, dim, rng=rng)
        self.v_proj = Linear(dim, dim, rng=rng)
        self.out_proj = Linear(dim, dim, rng=rng)
        if sr_ratio > 1:
            self.sr = Conv2d(dim, dim, sr_ratio, stride=sr_ratio, rng=rng)
            self.sr_norm = LayerNorm(dim)

    def _split_heads(self, t: Tensor) -> Tensor:
        n, tok, _ = t.shape
        return t.reshape(n, tok, self.num_heads, self.dim // self.num_heads).transpose(0, 2, 1, 3)

    def forward(self, q_src: Tensor, kv_src: Tensor, kv_hw: tuple[int, int] | None = None,
                return_weights: bool = False):
        if q_src.shape[-1] != self.dim or kv_src.shape[-1] != self.dim:
            raise ValueError(
                f"token channel mismatch: expected {self.dim}, "
                f"got {q_src.shape[-1]} and {kv_src.shape[-1]}")
        kv = kv_src
        if self.sr_ratio > 1:
            if kv_hw is None:
                raise ValueError("kv_hw is required when spatial reduction is active")
            kv = self.sr(to_map(kv, *kv_hw))
            kv = self.sr_norm(to_tokens(kv))
        q = self._split_heads(self.q_proj(q_src))
        k = self._split_heads(self.k_proj(kv))
        v = self._split_heads(self.v_proj(kv))
        dh = self.dim // self.num_heads
        attn = softmax((q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh)), axis=-1)
        out = attn @ v
        n, _, tok, _ = out.shape
        out = out.transpose(0, 2, 1, 3).reshape(n, tok, self.dim)
        out = self.out_proj(out)
        if return_weights:
            return out, attn
        return out

    def self_attention(self, tokens: Tensor, hw: tuple[int, int] | None = None) -> Tensor:
        return self.forward(tokens, tokens, kv_hw=hw)


class FeedForward(Module):
    """norm -> expand -> GELU -> project, with a residual around the block."""

    def __init__(self, dim: int, hidden_ratio: int, rng: np.random.Generator):
        super().__init__()
        self.norm = LayerNorm(dim)
        self.expand = Linear(dim, dim * hidden_ratio, rng=rng)
        self.project = Linear(dim * hidden_ratio, dim, rng=rng)

    def forward(self, tokens: Tensor) -> Tensor:
        return tokens + self.project(gelu(self.expand(self.norm(tokens))))


class TransformerLayer(Module):
    """Self-attention with residual, then a feedforward block."""

    def __init__(self, dim: int, num_heads: int, sr_ratio: int, hidden_ratio: int,
                 rng: np.random.Generator):
        super().__init__()
        self.attn = MultiHeadAttention(dim, num_heads, sr_ratio, rng)
        self.ffb = FeedForward(dim, hidden_ratio, rng)

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        tokens = to_tokens(x)
        tokens = tokens + self.attn.self_attention(tokens, hw=(h, w))
        tokens = self.ffb(tokens)
        return to_map(tokens, h, w)


class DynamicOffsetEstimator(Module):
    """Predicts per-pixel sampling offsets from the concatenated streams.

    Three 3x3 conv levels with dilations 1/2/4 widen the receptive field
    from near to far; the final layer starts at zero so the downstream
    deformable conv begins as a plain convolution.
    """

    def __init__(self, dim: int, kernel: int, rng: np.random.Generator):
        super().__init__()
        self.c1 = Conv2d(2 * dim, dim, 3, padding=1, dilation=1, rng=rng)
        self.c2 = Conv2d(dim, dim, 3, padding=2, dilation=2, rng=rng)
        self.c3 = Conv2d(dim, 2 * kernel * kernel, 3, padding=4, dilation=4,
                         rng=rng, zero_init=True)

    def forward(self, feat: Tensor, ref: Tensor) -> Tensor:
        if feat.shape != ref.shape:
            raise ValueError(f"offset estimator inputs differ: {feat.shape} vs {ref.shape}")
        h = gelu(self.c1(concat([feat, ref], axis=1)))
        h = gelu(self.c2(h))
        return self.c3(h)


class DeformableConv(Module):
    """3x3 convolution whose taps sample at learned fractional offsets.

    Offset channels are ordered (dy, dx) per tap, taps in row-major order
    over the fixed grid (-r..r)^2. With all-zero offsets this reduces
    exactly to a standard zero-padded convolution.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: int = 3,
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.kernel = kernel
        fan_in = in_ch * kernel * kernel
        self.weight = Tensor(
            rng.normal(0.0, np.sqrt(2.0 / fan_in), (out_ch, in_ch, kernel, kernel)).astype(np.float32),
            requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch, dtype=np.float32), requires_grad=True)
        r = kernel // 2
        self.grid = [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]

    def forward(self, x: Tensor, offsets: Tensor) -> Tensor:
        k = self.kernel
        n, c, h, w = x.shape
        if offsets.shape != (n, 2 * k * k, h, w):
            raise ValueError(
                f"offset map shape {offsets.shape} != expected {(n, 2 * k * k, h, w)}")
        base_y = Tensor(np.broadcast_to(
            np.arange(h, dtype=x.dtype)[None, :, None], (n, h, w)).copy())
        base_x = Tensor(np.broadcast_to(
            np.arange(w, dtype=x.dtype)[None, None, :], (n, h, w)).copy())
        out = None
        for tap, (dy, dx) in enumerate(self.grid):
            ys = base_y + float(dy) + offsets[:, 2 * tap]
            xs = base_x + float(dx) + offsets[:, 2 * tap + 1]
            sampled = grid_sample(x, ys, xs)                     # [N,C,H,W]
            w_tap = self.weight[:, :, tap // k, tap % k]         # [F,C]
            contrib = to_map(to_tokens(sampled) @ w_tap.transpose(1, 0), h, w)
            out = contrib if out is None else out + contrib
        return out + self.bias.reshape(1, -1, 1, 1)


class PatchHarmonization(Module):
    """Squeeze-and-gate fusion of the input stream with aligned reference features."""

    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__()
        self.c1 = Conv2d(2 * dim, dim, 1, rng=rng)
        self.c2 = Conv2d(dim, dim, 1, rng=rng)
        self.fc = Linear(dim, dim, rng=rng)
        self.c3 = Conv2d(dim, dim, 1, rng=rng)

    def gate(self, pooled: Tensor) -> Tensor:
        return self.fc(pooled).sigmoid()

    def forward(self, feat: Tensor, aligned: Tensor) -> Tensor:
        if feat.shape != aligned.shape:
            raise ValueError(f"harmonization inputs differ: {feat.shape} vs {aligned.shape}")
        h = gelu(self.c1(concat([feat, aligned], axis=1)))
        h = gelu(self.c2(h))
        pooled = h.mean(axis=(2, 3))                             # [N,C]
        g = self.gate(pooled)
        n, c = g.shape
        gated = h * g.reshape(n, c, 1, 1)
        return gelu(self.c3(gated))


class ResidualBlock(Module):
    """Residual 3x3 conv pair; the branch starts at zero so deep tails keep
    unit-scale activations at initialization."""

    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__()
        self.c1 = Conv2d(dim, dim, 3, padding=1, rng=rng)
        self.c2 = Conv2d(dim, dim, 3, padding=1, rng=rng, zero_init=True)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.c2(gelu(self.c1(x)))


class UpsampleConv(Module):
    """Nearest 2x upsampling followed by a 3x3 conv."""

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator):
        super().__init__()
        self.conv = Conv2d(in_ch, out_ch, 3, padding=1, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(nearest_upsample2(x))
