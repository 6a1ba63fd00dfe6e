"""Reference-guided image inpainting toolkit.

Core pieces: a numpy-backed autodiff tensor (`autodiff`), the network
blocks and model (`blocks`, `model`), training losses (`losses`), the
dataset/mask pipeline (`pairs`, `masks`), evaluation metrics
(`metrics`), and a CLI (`cli`).
"""

from .autodiff import Tensor
from .model import InpaintingModel, ModelConfig, toy_config, full_config

__version__ = "0.1.0"

__all__ = ["Tensor", "InpaintingModel", "ModelConfig", "toy_config", "full_config"]
