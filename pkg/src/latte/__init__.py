"""Latent video diffusion with a spatio-temporal Transformer denoiser, on a numpy autograd core."""

from __future__ import annotations

from .backbone import LatteModel, ModelConfig, adapt_image_checkpoint, denoiser_forward, image_config
from .config import RunConfig, desk_config
from .diffusion import DiffusionSchedule, EmaState, ema_update, loss_simple, loss_vlb, p_sample_loop, q_sample
from .tensor import Tensor, backward, precision

__version__ = "0.1.0"
