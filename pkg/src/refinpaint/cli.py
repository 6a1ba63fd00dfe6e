"""Command-line surface: pair mining, mask corpora, training, inference, evaluation.

Exit codes: 0 success, 2 usage/config error, 1 runtime failure.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click
import numpy as np


@click.group()
def main():
    """Reference-guided image inpainting toolkit."""


@main.command()
@click.argument("src_a", type=click.Path(exists=True, file_okay=False))
@click.argument("src_b", type=click.Path(exists=True, file_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--crop-size", default=256, show_default=True)
@click.option("--min-matches", default=4, show_default=True)
@click.option("--ratio-threshold", default=0.7, show_default=True)
def mine(src_a, src_b, out_dir, crop_size, min_matches, ratio_threshold):
    """Mine input/reference crop pairs from two aligned image directories."""
    from .pairs import mine_pairs

    if not list(Path(src_a).glob("*.png")) or not list(Path(src_b).glob("*.png")):
        raise click.UsageError("no PNG images found in the source directories")
    records, rejected = mine_pairs(src_a, src_b, out_dir, crop_size=crop_size,
                                   min_matches=min_matches,
                                   ratio_threshold=ratio_threshold,
                                   log=lambda m: click.echo(m, err=True))
    click.echo(f"accepted {len(records)} pairs, rejected {rejected}")
    if not records:
        click.echo("warning: no pairs were accepted", err=True)


@main.command()
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--per-bin", default=10, show_default=True,
              help="masks per ratio bin (half with damaged boundaries)")
@click.option("--seed", default=0, show_default=True)
@click.option("--size", default=256, show_default=True)
def masks(out_dir, per_bin, seed, size):
    """Generate a stratified irregular-mask corpus."""
    from .masks import generate_corpus

    written = generate_corpus(out_dir, per_bin=per_bin, seed=seed, size=size)
    click.echo(f"wrote {len(written)} masks under {out_dir}")


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None, help="override the config seed")
@click.option("--preset", type=click.Choice(["toy", "full"]), default=None)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
def train(config_path, seed, preset, out_dir):
    """Train from a config file, logging the loss breakdown per step."""
    from .config import ConfigError, load_run_config
    from .training import train as run_train

    try:
        cfg = load_run_config(config_path)
    except ConfigError as e:
        raise click.UsageError(str(e)) from None
    if seed is not None:
        cfg.seed = seed
    if preset is not None:
        cfg.preset = preset
    if out_dir is not None:
        cfg.out_dir = out_dir

    def progress(step, parts):
        if step == 1 or step % 25 == 0:
            click.echo(f"step {step}: joint={parts['joint']:.5f} l1={parts['l1']:.5f}")

    result = run_train(cfg, progress=progress)
    click.echo(f"checkpoint: {result.checkpoint_path}")
    click.echo(f"loss log: {result.loss_log_path}")


@main.command()
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.argument("input_image", type=click.Path(exists=True, dir_okay=False))
@click.argument("mask_image", type=click.Path(exists=True, dir_okay=False))
@click.argument("reference_image", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_image", type=click.Path(dir_okay=False))
@click.option("--grid", "grid_path", type=click.Path(dir_okay=False), default=None,
              help="also write a reference|input|output side-by-side strip")
@click.option("--gt", "gt_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="append ground truth to the grid")
def infer(checkpoint, input_image, mask_image, reference_image, out_image,
          grid_path, gt_path):
    """Fill the masked region of INPUT_IMAGE guided by REFERENCE_IMAGE."""
    from .autodiff import Tensor
    from .checkpoint import load_checkpoint
    from .images import load_image, save_grid, save_image
    from .masks import load_mask_png
    from .model import InpaintingModel
    from .training import read_model_config

    cfg_path = Path(checkpoint).with_suffix(".cfg")
    if not cfg_path.is_file():
        raise click.UsageError(f"missing model config sidecar {cfg_path}")
    model = InpaintingModel(read_model_config(cfg_path))
    model.load_state(load_checkpoint(checkpoint))

    image = load_image(input_image)
    ref = load_image(reference_image)
    mask = load_mask_png(mask_image).astype(np.float32)
    final, _ = model.inpaint(Tensor(image[None]), Tensor(mask[None, None]),
                             Tensor(ref[None]))
    out = final.data[0]
    save_image(out, out_image)
    click.echo(f"wrote {out_image}")
    if grid_path:
        panels = [ref, image * (1.0 - mask), out]
        if gt_path:
            panels.append(load_image(gt_path))
        save_grid(panels, grid_path)
        click.echo(f"wrote {grid_path}")


@main.command("eval")
@click.argument("pred_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("gt_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("mask_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
def eval_cmd(pred_dir, gt_dir, mask_dir, out_dir):
    """Stratified PSNR/SSIM/FD report over aligned prediction directories."""
    from .metrics import evaluate_run

    report = evaluate_run(pred_dir, gt_dir, mask_dir)
    click.echo(report.to_text())
    if report.orphans:
        click.echo(f"warning: {len(report.orphans)} orphan files excluded: "
                   f"{', '.join(report.orphans[:5])}", err=True)
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(report.to_text() + "\n")
        (out / "report.json").write_text(report.to_json() + "\n")
        report.write_csv(out / "per_image.csv")
        click.echo(f"report written to {out}")
    if report.orphans:
        # orphans are excluded but the run is flagged
        sys.exit(1)


if __name__ == "__main__":
    main()
