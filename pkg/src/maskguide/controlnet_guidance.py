"""Control branch and train-free mask guidance on its residuals.

The control branch is a trainable copy of the denoiser encoder + mid-block fed
with ``x_t`` plus an embedded condition map. Each of its 13 taps leaves through a
zero-initialized 1x1 convolution. Mask guidance multiplies every residual by the
product mask resampled to that residual's resolution before the frozen
denoiser adds it to its skip connections and mid-block.
"""
from __future__ import annotations

import copy
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .diffusion_core import (
    AE_FACTOR, CHANNELS, LATENT_CHANNELS, NUM_ENCODER_POINTS, Denoiser, Encoder, NoiseSchedule,
    embed_time_text, encoder_channels, reverse_loop, sample_step, sampling_timesteps, zero_module,
)
from .mask_ops import MaskPyramid

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]], dtype=np.float32)


def make_edge_condition(img: torch.Tensor, threshold: float = 0.1) -> torch.Tensor:
    """Sobel magnitude of the luma, max-normalized, zeroed below ``threshold``.

    Returns a (H, W) float32 map in [0, 1]. Borders are replicate-padded so a
    constant image gives an all-zero condition.
    """
    if img.dim() != 3 or img.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) image, got {tuple(img.shape)}")
    luma = (0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2])[None, None].float()
    padded = F.pad(luma, (1, 1, 1, 1), mode="replicate")
    kx = torch.from_numpy(SOBEL_X)[None, None]
    ky = torch.from_numpy(SOBEL_X.T.copy())[None, None]
    gx = F.conv2d(padded, kx)
    gy = F.conv2d(padded, ky)
    mag = torch.sqrt(gx * gx + gy * gy)[0, 0]
    peak = mag.max()
    if peak <= 0:
        return torch.zeros_like(mag)
    mag = (mag / peak).clamp(0.0, 1.0)
    return torch.where(mag >= threshold, mag, torch.zeros_like(mag))


class ControlBranch(nn.Module):
    """Trainable encoder copy with a condition stem and 13 zero-conv outputs."""

    def __init__(self, cond_channels: int = 1):
        super().__init__()
        self.time_mlp = nn.Sequential(nn.Linear(128, 128), nn.SiLU(), nn.Linear(128, 128))
        self.text_proj = nn.Sequential(nn.Linear(64, 128), nn.SiLU(), nn.Linear(128, 128))
        # three stride-2 convs take the image-resolution condition to latent resolution
        self.cond_stem = nn.Sequential(
            nn.Conv2d(cond_channels, 16, 3, padding=1), nn.SiLU(),
            nn.Conv2d(16, 16, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(32, 32, 3, stride=2, padding=1), nn.SiLU(),
            zero_module(nn.Conv2d(32, CHANNELS[0], 3, padding=1)),
        )
        self.encoder = Encoder(LATENT_CHANNELS, use_text=True)
        self.zero_convs = nn.ModuleList(zero_module(nn.Conv2d(c, c, 1)) for c in encoder_channels())

    @classmethod
    def from_denoiser(cls, base: Denoiser) -> "ControlBranch":
        branch = cls()
        branch.time_mlp.load_state_dict(base.time_mlp.state_dict())
        branch.text_proj.load_state_dict(base.text_proj.state_dict())
        branch.encoder.load_state_dict(copy.deepcopy(base.encoder.state_dict()))
        return branch

    def forward(self, cond, x_t, t, text=None, gate: MaskPyramid | None = None) -> list[torch.Tensor]:
        """Returns the 13 zero-conv residuals.

        With ``gate``, the condition embedding and every encoder layer output are
        multiplied by the resolution-matched mask before they propagate further.
        """
        b = x_t.shape[0]
        cond = _as_cond_batch(cond, b)
        if cond.shape[-1] != x_t.shape[-1] * AE_FACTOR or cond.shape[-2] != x_t.shape[-2] * AE_FACTOR:
            raise ValueError(
                f"condition {tuple(cond.shape[-2:])} does not match latent {tuple(x_t.shape[-2:])} "
                f"at factor {AE_FACTOR}")
        temb, ctx = embed_time_text(self.time_mlp, self.text_proj, t, b, text)
        stem = self.cond_stem(cond)
        gates = None
        if gate is not None:
            gates = [_mask_tensor(gate, i, stem.shape[-2] >> gate.index_map[i]) for i in range(NUM_ENCODER_POINTS)]
            stem = stem * gates[0]
        taps = self.encoder(self.encoder.conv_in(x_t) + stem, temb, ctx, gates)
        return [zc(f) for zc, f in zip(self.zero_convs, taps)]


def _mask_tensor(pyr: MaskPyramid, i: int, side: int) -> torch.Tensor:
    level = pyr.for_point(i)
    if tuple(level.shape) != (side, side):
        raise ValueError(
            f"injection point {i}: pyramid level {pyr.index_map[i]} has size {tuple(level.shape)}, "
            f"expected {(side, side)}")
    return torch.from_numpy(np.ascontiguousarray(level, dtype=np.float32))


def _as_cond_batch(cond: torch.Tensor, batch: int) -> torch.Tensor:
    cond = torch.as_tensor(cond, dtype=torch.float32)
    if cond.dim() == 2:
        cond = cond[None, None]
    elif cond.dim() == 3:
        cond = cond[:, None] if cond.shape[0] == batch and batch > 1 else cond[None]
    if cond.dim() != 4:
        raise ValueError(f"condition must be (H, W), (B, H, W) or (B, 1, H, W), got {tuple(cond.shape)}")
    if cond.shape[0] == 1 and batch > 1:
        cond = cond.expand(batch, -1, -1, -1)
    return cond


def control_forward(cond, x_t, t, text, params: ControlBranch, gate: MaskPyramid | None = None):
    return params(cond, x_t, t, text, gate)


def apply_mask_guidance(res: Sequence[torch.Tensor], pyr: MaskPyramid) -> list[torch.Tensor]:
    """Element-wise product of each residual with its resolution-matched mask level.

    The single-channel mask broadcasts over batch and channels. Inputs are not
    modified.
    """
    if len(res) != NUM_ENCODER_POINTS:
        raise ValueError(f"expected {NUM_ENCODER_POINTS} control residuals, got {len(res)}")
    out = []
    for i, r in enumerate(res):
        level = pyr.for_point(i)
        if tuple(level.shape) != tuple(r.shape[-2:]):
            raise ValueError(
                f"residual {i}: spatial size {tuple(r.shape[-2:])} does not match "
                f"pyramid level {pyr.index_map[i]} of size {tuple(level.shape)}")
        m = torch.from_numpy(np.ascontiguousarray(level, dtype=np.float32)).to(r.dtype)
        out.append(r * m)
    return out


GUIDANCE_MODES = ("layerwise", "residual")


def guided_residuals(control: ControlBranch, cond, x_t, t, text, pyr: MaskPyramid | None,
                     mode: str = "layerwise"):
    """Control residuals with mask guidance.

    ``layerwise`` gates every control-encoder layer as it propagates and then the
    emitted residuals; ``residual`` only masks the emitted residuals, which lets
    background condition content reach the product region through the
    receptive field and normalization statistics.
    """
    if mode not in GUIDANCE_MODES:
        raise ValueError(f"unknown guidance mode {mode!r}")
    if pyr is None:
        return control_forward(cond, x_t, t, text, control)
    gate = pyr if mode == "layerwise" else None
    return apply_mask_guidance(control_forward(cond, x_t, t, text, control, gate), pyr)


def guided_denoise_step(x_t, t, text, cond, pyr: MaskPyramid | None, base: Denoiser,
                        control: ControlBranch, sched: NoiseSchedule, mode: str = "ddim",
                        rng: torch.Generator | None = None, t_prev: int | None = None,
                        control_scale: float = 1.0, guidance_mode: str = "layerwise") -> torch.Tensor:
    """control -> mask guidance -> frozen denoiser (residuals at skips + mid) -> reverse step."""
    res = guided_residuals(control, cond, x_t, t, text, pyr, guidance_mode)
    eps, _ = base(x_t, t, text, control=res, control_scale=control_scale)
    return sample_step(x_t, t, eps, sched, mode, rng, t_prev)


def guided_sample(base: Denoiser, control: ControlBranch | None, sched: NoiseSchedule, text, cond,
                  pyr: MaskPyramid | None, latent_size: int, steps: int = 20, mode: str = "ddim",
                  seed: int = 0, control_scale: float = 1.0, guidance_mode: str = "layerwise") -> torch.Tensor:
    """Text-to-latent sampling with an optional (mask-guided) control branch.

    ``control=None`` runs the base denoiser alone. Returns the final latent.
    """
    rng = torch.Generator().manual_seed(int(seed))
    x = torch.randn((1, LATENT_CHANNELS, latent_size, latent_size), generator=rng)

    def residuals(x_t, t):
        res = guided_residuals(control, cond, x_t, t, text, pyr, guidance_mode)
        return res, None, control_scale, 1.0

    fn = residuals if control is not None else None
    return reverse_loop(base, x, sampling_timesteps(sched.T, steps), sched, text, mode, rng, fn)
