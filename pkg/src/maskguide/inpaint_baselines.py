"""Training-free inpainting baselines: blended latent diffusion (hard mask) and soft inpainting.

After every reverse step the latent is overwritten outside the mask by the
original latent re-noised to the new timestep. A soft mask blends the two
convexly per pixel. The re-noising noise is drawn fresh from the run's
generator at each step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .diffusion_core import (
    LATENT_CHANNELS, NoiseSchedule, add_noise, decode_latent, embed_prompt, encode_image, reverse_loop,
    sampling_timesteps,
)
from .mask_ops import downsample_cubic


@dataclass
class BlendConfig:
    denoise_strength: float = 1.0
    mode: str = "hard"  # hard | soft
    steps: int = 20
    sampler: str = "ddim"
    seed: int = 0
    guidance_scale: float = 1.0

    def __post_init__(self):
        if self.mode not in ("hard", "soft"):
            raise ValueError(f"blend mode must be 'hard' or 'soft', got {self.mode!r}")
        if not 0.0 <= self.denoise_strength <= 1.0:
            raise ValueError(f"denoise strength must be in [0, 1], got {self.denoise_strength}")


def _mask_tensor(mask, like: torch.Tensor) -> torch.Tensor:
    m = torch.as_tensor(np.asarray(mask, dtype=np.float32))
    if m.shape[-2:] != like.shape[-2:]:
        raise ValueError(f"mask {tuple(m.shape)} does not match latent {tuple(like.shape)}")
    while m.dim() < like.dim():
        m = m.unsqueeze(0)
    return m


def blend(x_gen: torch.Tensor, x_ref: torch.Tensor, mask) -> torch.Tensor:
    m = _mask_tensor(mask, x_gen)
    return m * x_gen + (1.0 - m) * x_ref


def blended_step(x_t_gen: torch.Tensor, x0: torch.Tensor, mask, t: int, sched: NoiseSchedule,
                 rng: torch.Generator | None = None, return_noise: bool = False):
    """``mask * x_t_gen + (1 - mask) * add_noise(x0, eps, t)`` with fresh ``eps``.

    ``t = -1`` denotes the clean endpoint, where the reference is ``x0`` itself.
    """
    if x_t_gen.shape != x0.shape:
        raise ValueError(f"shape mismatch {tuple(x_t_gen.shape)} vs {tuple(x0.shape)}")
    eps = torch.randn(x0.shape, generator=rng, dtype=x0.dtype)
    ref = add_noise(x0, eps, t, sched) if t >= 0 else x0
    out = blend(x_t_gen, ref, mask)
    return (out, eps) if return_noise else out


def latent_mask(mask, latent_size: int, mode: str) -> np.ndarray:
    """Image-resolution mask -> latent-resolution blend mask.

    Hard mode keeps the mask binary (a latent cell is generated if any of its
    pixels is); soft mode uses cubic resampling of the grayscale mask.
    """
    m = np.asarray(mask, dtype=np.float32)
    if m.shape[0] == latent_size:
        lm = m
    elif mode == "hard":
        f = m.shape[0] // latent_size
        lm = m.reshape(latent_size, f, latent_size, f).max(axis=(1, 3))
    else:
        lm = downsample_cubic(m, latent_size, latent_size)
    if mode == "hard" and not np.isin(lm, (0.0, 1.0)).all():
        raise ValueError("hard blending needs a binary mask")
    return lm.astype(np.float32)


def blended_sample(models, img: torch.Tensor, mask, prompt, config: BlendConfig | None = None,
                   sched: NoiseSchedule | None = None, trace: list | None = None,
                   return_latent: bool = False):
    """img2img reverse loop with a blend after every step.

    ``trace`` (if a list) receives ``(t_prev, eps, latent_after_blend)`` per step so
    callers can reproduce each re-noising draw.
    """
    config = config or BlendConfig()
    sched = sched or models.schedule
    L = models.geometry.latent_size
    lm = latent_mask(mask, L, config.mode)
    text = embed_prompt(prompt) if isinstance(prompt, str) else prompt
    img4 = img if img.dim() == 4 else img[None]
    with torch.no_grad():
        x0 = encode_image(models.autoencoder, img4)
        timesteps = sampling_timesteps(sched.T, config.steps, config.denoise_strength)
        if not timesteps:
            z = x0
        else:
            rng = torch.Generator().manual_seed(int(config.seed))
            noise = torch.randn((1, LATENT_CHANNELS, L, L), generator=rng)
            x = add_noise(x0, noise, timesteps[0], sched)

            def post(x_prev, t_prev):
                out, eps = blended_step(x_prev, x0, lm, t_prev, sched, rng, return_noise=True)
                if trace is not None:
                    trace.append((t_prev, eps, out.clone()))
                return out

            z = reverse_loop(models.base, x, timesteps, sched, text, config.sampler, rng,
                             post_step=post, guidance_scale=config.guidance_scale)
        out = decode_latent(models.autoencoder, z)[0]
    return (out, z) if return_latent else out
