"""Dual-branch inpainting: a text-free denoiser copy on the 9-channel input.

Channels 0-3 carry the noisy latent, 4-7 the latent of the masked image and 8
the hole mask resampled to latent resolution. The branch runs its own encoder,
mid-block and decoder and hands one zero-conv output per block to the frozen
denoiser (13 encoder/mid points + 12 decoder points).
"""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
from scipy.ndimage import uniform_filter

from .controlnet_guidance import ControlBranch, guided_residuals
from .diffusion_core import (
    LATENT_CHANNELS, NUM_ENCODER_POINTS, TEMB_DIM, Autoencoder, Decoder, Denoiser,
    Encoder, NoiseSchedule, decode_latent, embed_prompt, embed_time_text, encode_image,
    decoder_channels, encoder_channels, reverse_loop, sampling_timesteps, zero_module,
)
from .mask_ops import MaskPyramid, as_binary, downsample_cubic

BRANCH_IN_CHANNELS = 2 * LATENT_CHANNELS + 1
HOLE_FILL = 0.5  # zero after the [-1, 1] normalization


class InpaintBranch(nn.Module):
    """Text-free copy of the denoiser consuming the 9-channel branch input."""

    def __init__(self):
        super().__init__()
        self.time_mlp = nn.Sequential(nn.Linear(TEMB_DIM, TEMB_DIM), nn.SiLU(), nn.Linear(TEMB_DIM, TEMB_DIM))
        self.encoder = Encoder(BRANCH_IN_CHANNELS, use_text=False)
        self.decoder = Decoder(use_text=False)
        chans = encoder_channels() + decoder_channels()
        self.zero_convs = nn.ModuleList(zero_module(nn.Conv2d(c, c, 1)) for c in chans)
        # ablation switch: inject only the 13 encoder/mid residuals
        self.encoder_only = False

    @classmethod
    def from_denoiser(cls, base: Denoiser) -> "InpaintBranch":
        branch = cls()
        branch.time_mlp.load_state_dict(base.time_mlp.state_dict())
        enc = copy.deepcopy(base.encoder.state_dict())
        w = enc.pop("conv_in.weight")
        conv_w = torch.zeros_like(branch.encoder.conv_in.weight)
        conv_w[:, :LATENT_CHANNELS] = w
        enc["conv_in.weight"] = conv_w
        _load_without_text(branch.encoder, enc)
        _load_without_text(branch.decoder, copy.deepcopy(base.decoder.state_dict()))
        return branch

    def forward(self, bi: torch.Tensor, t) -> list[torch.Tensor]:
        if bi.dim() != 4 or bi.shape[1] != BRANCH_IN_CHANNELS:
            raise ValueError(f"branch input must be (B, 9, L, L), got {tuple(bi.shape)}")
        temb, _ = embed_time_text(self.time_mlp, None, t, bi.shape[0])
        taps = self.encoder(self.encoder.conv_in(bi), temb)
        _, outs = self.decoder(taps[12], taps, temb, return_outputs=True)
        res = [zc(f) for zc, f in zip(self.zero_convs, taps + outs)]
        if self.encoder_only:
            res[NUM_ENCODER_POINTS:] = [torch.zeros_like(r) for r in res[NUM_ENCODER_POINTS:]]
        return res


def _load_without_text(module: nn.Module, state: dict) -> None:
    state = {k: v for k, v in state.items() if ".text_mod." not in k}
    module.load_state_dict(state, strict=True)


def branch_forward(bi: torch.Tensor, t, params: InpaintBranch) -> list[torch.Tensor]:
    return params(bi, t)


def _hole_tensor(hole, like: torch.Tensor) -> torch.Tensor:
    h = torch.as_tensor(np.asarray(hole), dtype=like.dtype)
    while h.dim() < like.dim():
        h = h.unsqueeze(-3) if h.dim() == 2 else h.unsqueeze(1)
    return h


def make_masked_image_latent(ae: Autoencoder, img: torch.Tensor, hole) -> torch.Tensor:
    """Encode the image with hole pixels replaced by mid-gray."""
    img4 = img if img.dim() == 4 else img[None]
    h = np.asarray(hole)
    if h.shape[-2:] != tuple(img4.shape[-2:]):
        raise ValueError(f"hole {h.shape} does not match image {tuple(img4.shape[-2:])}")
    ht = _hole_tensor(h, img4)
    masked = torch.where(ht > 0.5, torch.full_like(img4, HOLE_FILL), img4)
    return encode_image(ae, masked)


def build_branch_input(x_t: torch.Tensor, masked_latent: torch.Tensor, hole, L: int) -> torch.Tensor:
    """Concatenate [x_t | masked-image latent | cubic-downsampled hole] into 9 channels."""
    if x_t.shape != masked_latent.shape:
        raise ValueError(f"x_t {tuple(x_t.shape)} vs masked latent {tuple(masked_latent.shape)}")
    if x_t.dim() != 4 or x_t.shape[1] != LATENT_CHANNELS or tuple(x_t.shape[-2:]) != (L, L):
        raise ValueError(f"x_t must be (B, 4, {L}, {L}), got {tuple(x_t.shape)}")
    h = np.asarray(hole)
    holes = h[None] if h.ndim == 2 else h
    ds = np.stack([downsample_cubic(m, L, L) for m in holes])
    m = torch.from_numpy(ds)[:, None]
    if m.shape[0] == 1 and x_t.shape[0] > 1:
        m = m.expand(x_t.shape[0], -1, -1, -1)
    return torch.cat([x_t, masked_latent, m], dim=1)


def box_feather(hole, feather_px: int) -> np.ndarray:
    m = as_binary(hole).astype(np.float64)
    if feather_px <= 0:
        return m
    return uniform_filter(m, size=2 * feather_px + 1, mode="nearest")


def paste_back(generated: torch.Tensor, original: torch.Tensor, hole, feather_px: int = 2) -> torch.Tensor:
    """Keep generated pixels inside the (feathered) hole and original pixels elsewhere."""
    if generated.shape != original.shape:
        raise ValueError(f"size mismatch {tuple(generated.shape)} vs {tuple(original.shape)}")
    mf = torch.from_numpy(box_feather(hole, feather_px).astype(np.float32))
    mf = mf.expand_as(generated)
    blend = mf * generated + (1.0 - mf) * original
    return torch.where(mf == 0, original, torch.where(mf == 1, generated, blend))


@dataclass
class InpaintConfig:
    steps: int = 20
    mode: str = "ddim"
    seed: int = 0
    paste_back: bool = True
    feather_px: int = 2
    branch_scale: float = 1.0
    control_scale: float = 1.0
    guidance_scale: float = 1.0
    use_branch: bool = True
    guidance_mode: str = "layerwise"


def inpaint_sample(models, img: torch.Tensor, hole, prompt, config: InpaintConfig | None = None,
                   cond=None, guidance: MaskPyramid | None = None, sched: NoiseSchedule | None = None,
                   return_latent: bool = False):
    """Full reverse loop with the inpaint branch (and optionally the control branch) injected.

    ``models`` needs ``autoencoder``, ``base``, ``branch`` and, when ``cond`` is given,
    ``control``. ``guidance`` is the product-mask pyramid applied to control residuals.
    """
    config = config or InpaintConfig()
    sched = sched or models.schedule
    L = models.geometry.latent_size
    if tuple(img.shape[-2:]) != (models.geometry.image_size,) * 2:
        raise ValueError(f"image {tuple(img.shape[-2:])} does not match checkpoint geometry {models.geometry}")
    hole = as_binary(hole)
    text = embed_prompt(prompt) if isinstance(prompt, str) else prompt
    use_branch = config.use_branch and models.branch is not None
    control: ControlBranch | None = models.control if cond is not None else None
    if cond is not None and control is None:
        raise ValueError("a control condition was given but the checkpoint has no control branch")

    with torch.no_grad():
        masked_latent = make_masked_image_latent(models.autoencoder, img, hole) if use_branch else None
        rng = torch.Generator().manual_seed(int(config.seed))
        x = torch.randn((1, LATENT_CHANNELS, L, L), generator=rng)

        def residuals(x_t, t):
            branch_res = None
            if use_branch:
                branch_res = branch_forward(build_branch_input(x_t, masked_latent, hole, L), t, models.branch)
            control_res = guided_residuals(control, cond, x_t, t, text, guidance, config.guidance_mode) if control is not None else None
            return control_res, branch_res, config.control_scale, config.branch_scale

        fn = residuals if use_branch or control is not None else None

        z = reverse_loop(models.base, x, sampling_timesteps(sched.T, config.steps), sched, text,
                         config.mode, rng, fn, guidance_scale=config.guidance_scale)
        out = decode_latent(models.autoencoder, z)[0]
        if config.paste_back:
            out = paste_back(out, img if img.dim() == 3 else img[0], hole, config.feather_px)
    return (out, z) if return_latent else out


def text_to_image(models, prompt, steps: int = 20, mode: str = "ddim", seed: int = 0,
                  sched: NoiseSchedule | None = None, return_latent: bool = False):
    """Plain sampling of the frozen base with nothing attached."""
    sched = sched or models.schedule
    L = models.geometry.latent_size
    text = embed_prompt(prompt) if isinstance(prompt, str) else prompt
    with torch.no_grad():
        rng = torch.Generator().manual_seed(int(seed))
        x = torch.randn((1, LATENT_CHANNELS, L, L), generator=rng)
        z = reverse_loop(models.base, x, sampling_timesteps(sched.T, steps), sched, text, mode, rng)
        out = decode_latent(models.autoencoder, z)[0]
    return (out, z) if return_latent else out

