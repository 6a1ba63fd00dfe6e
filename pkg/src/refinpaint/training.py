"""Training loop: deterministic single-worker optimization of the joint loss."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .checkpoint import save_checkpoint
from .features import FeatureExtractor
from .losses import LossWeights, joint_loss
from .masks import BIN_NAMES, gen_irregular_mask, load_mask_png, scan_mask_corpus
from .model import InpaintingModel, ModelConfig, PRESETS
from .optim import Adam
from .pairs import read_manifest, MANIFEST_NAME


@dataclass
class RunConfig:
    pairs_dir: str = ""
    out_dir: str = "runs/default"
    preset: str = "toy"
    variant: str = "full"
    lr: float = 2e-4
    batch_size: int = 4
    steps: int = 500
    seed: int = 0
    checkpoint_every: int = 0      # 0 = final only
    image_size: int = 64
    mask_dir: str = ""             # empty = generate masks on the fly
    loss_weights: LossWeights = field(default_factory=LossWeights)

    def model_config(self) -> ModelConfig:
        return PRESETS[self.preset](variant=self.variant)


@dataclass
class TrainResult:
    checkpoint_path: Path
    loss_log_path: Path
    first_joint: float
    final_joint: float
    steps: int


def _resize_nearest(chw: np.ndarray, size: int) -> np.ndarray:
    c, h, w = chw.shape
    ys = (np.arange(size) * h / size).astype(int)
    xs = (np.arange(size) * w / size).astype(int)
    return chw[:, ys][:, :, xs]


def load_pairs(pairs_dir, image_size: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Load (ground truth, reference) image arrays from a mined dataset.

    Accepts either a directory with a JSONL manifest or parallel
    ``input/`` and ``reference/`` subdirectories.
    """
    from .images import load_image

    pairs_dir = Path(pairs_dir)
    items = []
    manifest = pairs_dir / MANIFEST_NAME
    if manifest.is_file():
        for rec in read_manifest(manifest):
            items.append((pairs_dir / rec.input, pairs_dir / rec.reference))
    else:
        in_dir, ref_dir = pairs_dir / "input", pairs_dir / "reference"
        names = sorted(p.name for p in in_dir.glob("*.png")) if in_dir.is_dir() else []
        items = [(in_dir / n, ref_dir / n) for n in names if (ref_dir / n).is_file()]
    if not items:
        raise FileNotFoundError(f"no image pairs found under {pairs_dir}")
    out = []
    for in_path, ref_path in items:
        gt = load_image(in_path)
        ref = load_image(ref_path)
        if gt.shape[1] != image_size:
            gt = _resize_nearest(gt, image_size)
            ref = _resize_nearest(ref, image_size)
        out.append((gt, ref))
    return out


def _sample_mask(rng: np.random.Generator, size: int, mask_corpus) -> np.ndarray:
    bin_name = BIN_NAMES[rng.integers(0, len(BIN_NAMES))]
    if mask_corpus:
        paths = mask_corpus[bin_name]
        if paths:
            mask = load_mask_png(paths[rng.integers(0, len(paths))])
            if mask.shape != (size, size):
                mask = _resize_nearest(mask[None], size)[0]
            return mask
    damaged = bool(rng.integers(0, 2))
    return gen_irregular_mask(bin_name, damaged, seed=int(rng.integers(2 ** 31)),
                              size=size).mask


def masked_psnr(raw: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> float:
    """PSNR restricted to hole pixels, on the [-1, 1] scale (max diff 2)."""
    hole = mask.astype(bool)
    if not hole.any():
        return float("inf")
    diff = (raw - gt)[:, hole]
    mse = float(np.mean(diff ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(4.0 / mse)


def train(cfg: RunConfig, model: InpaintingModel | None = None,
          pairs: list[tuple[np.ndarray, np.ndarray]] | None = None,
          extractor: FeatureExtractor | None = None,
          progress=None) -> TrainResult:
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    if pairs is None:
        pairs = load_pairs(cfg.pairs_dir, cfg.image_size)
    if model is None:
        model = InpaintingModel(cfg.model_config(), seed=cfg.seed)
    extractor = extractor or FeatureExtractor()
    mask_corpus = scan_mask_corpus(cfg.mask_dir) if cfg.mask_dir else None
    opt = Adam(model.parameters(), lr=cfg.lr)

    log_path = out_dir / "loss_log.csv"
    ckpt_path = out_dir / "model.trkt"
    first_joint = final_joint = float("nan")
    with open(log_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "l1", "perceptual", "style", "joint"])
        for step in range(1, cfg.steps + 1):
            idx = rng.integers(0, len(pairs), size=cfg.batch_size)
            gts = np.stack([pairs[i][0] for i in idx])
            refs = np.stack([pairs[i][1] for i in idx])
            masks = np.stack([
                _sample_mask(rng, cfg.image_size, mask_corpus) for _ in range(cfg.batch_size)
            ]).astype(np.float32)[:, None]
            gt_t = Tensor(gts)
            mask_t = Tensor(masks)
            ref_t = Tensor(refs)
            masked = gt_t * (1.0 - mask_t)
            raw = model.generate(masked, mask_t, ref_t)
            loss, parts = joint_loss(raw, gt_t, extractor, cfg.loss_weights)
            opt.zero_grad()
            loss.backward()
            opt.step()
            writer.writerow([step, parts["l1"], parts["perceptual"],
                             parts["style"], parts["joint"]])
            if step == 1:
                first_joint = parts["joint"]
            final_joint = parts["joint"]
            if progress:
                progress(step, parts)
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                _save(model, cfg, out_dir / f"model_step{step}.trkt")
    _save(model, cfg, ckpt_path)
    return TrainResult(checkpoint_path=ckpt_path, loss_log_path=log_path,
                       first_joint=first_joint, final_joint=final_joint, steps=cfg.steps)


def _save(model: InpaintingModel, cfg: RunConfig, path: Path) -> None:
    save_checkpoint(model.state(), path)
    write_model_config(model.cfg, Path(path).with_suffix(".cfg"))


def write_model_config(mc: ModelConfig, path) -> None:
    """Plain-text key = value sidecar describing the architecture."""
    lines = ["[model]"]
    for key, value in mc.to_dict().items():
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_model_config(path) -> ModelConfig:
    import configparser

    parser = configparser.ConfigParser()
    parser.read(path)
    sec = parser["model"]
    return ModelConfig(
        embed_dims=tuple(int(v) for v in sec["embed_dims"].split(",")),
        num_heads=tuple(int(v) for v in sec["num_heads"].split(",")),
        sr_ratios=tuple(int(v) for v in sec["sr_ratios"].split(",")),
        depths=tuple(int(v) for v in sec["depths"].split(",")),
        ref_scales=sec.getint("ref_scales"),
        hidden_ratio=sec.getint("hidden_ratio"),
        decoder_depth=sec.getint("decoder_depth"),
        variant=sec.get("variant"),
        in_channels=sec.getint("in_channels"),
        ref_channels=sec.getint("ref_channels"),
    )
