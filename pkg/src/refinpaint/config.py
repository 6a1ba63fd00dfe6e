"""Run configuration file parsing (INI-style key = value with sections)."""

from __future__ import annotations

import configparser
from pathlib import Path

from .model import PRESETS, VARIANTS
from .training import RunConfig


class ConfigError(Exception):
    """Carries every invalid field at once."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in problems))


_FIELDS = {
    # section, key, type, RunConfig attribute
    ("model", "preset", str, "preset"),
    ("model", "variant", str, "variant"),
    ("train", "lr", float, "lr"),
    ("train", "batch_size", int, "batch_size"),
    ("train", "steps", int, "steps"),
    ("train", "seed", int, "seed"),
    ("train", "checkpoint_every", int, "checkpoint_every"),
    ("train", "image_size", int, "image_size"),
    ("data", "pairs_dir", str, "pairs_dir"),
    ("data", "mask_dir", str, "mask_dir"),
    ("data", "out_dir", str, "out_dir"),
}


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config file not found: {path}"])
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as e:
        raise ConfigError([f"parse error: {e}"]) from None

    cfg = RunConfig()
    problems = []
    for section, key, typ, attr in sorted(_FIELDS):
        if not parser.has_option(section, key):
            continue
        raw = parser.get(section, key)
        try:
            setattr(cfg, attr, typ(raw))
        except ValueError:
            problems.append(f"[{section}] {key} = {raw!r}: expected {typ.__name__}")

    if cfg.preset not in PRESETS:
        problems.append(f"[model] preset = {cfg.preset!r}: must be one of {sorted(PRESETS)}")
    if cfg.variant not in VARIANTS:
        problems.append(f"[model] variant = {cfg.variant!r}: must be one of {list(VARIANTS)}")
    if cfg.lr <= 0:
        problems.append(f"[train] lr = {cfg.lr}: must be positive")
    if cfg.batch_size < 1:
        problems.append(f"[train] batch_size = {cfg.batch_size}: must be >= 1")
    if cfg.steps < 1:
        problems.append(f"[train] steps = {cfg.steps}: must be >= 1")
    if cfg.image_size % 32:
        problems.append(f"[train] image_size = {cfg.image_size}: must be a multiple of 32")
    if cfg.pairs_dir and not Path(cfg.pairs_dir).is_dir():
        problems.append(f"[data] pairs_dir = {cfg.pairs_dir!r}: directory does not exist")
    if cfg.mask_dir and not Path(cfg.mask_dir).is_dir():
        problems.append(f"[data] mask_dir = {cfg.mask_dir!r}: directory does not exist")
    if not cfg.pairs_dir:
        problems.append("[data] pairs_dir is required")

    if problems:
        raise ConfigError(problems)
    return cfg
