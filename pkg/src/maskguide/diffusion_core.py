"""Minimal latent-diffusion stack: schedule, sampler steps, toy autoencoder and denoiser.

The denoiser exposes 13 encoder/mid injection points (4 at L, 3 at L/2, 3 at
L/4, 3 at L/8) and 12 decoder-block injection points. Residual bundles from
attached branches are added at those points; nothing is added when no bundle
is supplied.
"""
from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .mask_ops import INDEX_MAP

LATENT_CHANNELS = 4
TEXT_DIM = 64
TEMB_DIM = 128
CHANNELS = (32, 64, 96, 128)
NUM_ENCODER_POINTS = 13
NUM_DECODER_POINTS = 12
# decoder block -> encoder tap consumed as its skip connection
DECODER_SKIPS = (11, 10, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0)
# decoder block -> level it runs at
DECODER_LEVELS = (3, 3, 2, 2, 2, 1, 1, 1, 0, 0, 0, 0)
AE_FACTOR = 8


@dataclass(frozen=True)
class Geometry:
    image_size: int
    latent_size: int

    def __post_init__(self):
        if self.image_size != self.latent_size * AE_FACTOR:
            raise ValueError(f"image size must be {AE_FACTOR}x latent size")
        if self.latent_size % 8:
            raise ValueError("latent size must be divisible by 8")

    @classmethod
    def named(cls, name: str) -> "Geometry":
        try:
            return GEOMETRIES[name]
        except KeyError:
            raise ValueError(f"unknown geometry {name!r}; choose from {sorted(GEOMETRIES)}") from None

    @property
    def name(self) -> str:
        for k, v in GEOMETRIES.items():
            if v == self:
                return k
        return f"{self.image_size}to{self.latent_size}"


GEOMETRIES = {"test": Geometry(128, 16), "paper": Geometry(512, 64)}


# ---------------------------------------------------------------- schedule


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas)


def make_schedule(T: int = 50, beta_start: float = 1e-4, beta_end: float = 0.2) -> NoiseSchedule:
    # beta_end is chosen so alpha_bars[-1] ~ 0.005: sampling starts from pure noise, so
    # the last training step must be (almost) pure noise as well
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    return NoiseSchedule(betas, alphas, np.cumprod(alphas))


def _check_t(t: int, sched: NoiseSchedule) -> int:
    t = int(t)
    if not 0 <= t < sched.T:
        raise ValueError(f"timestep {t} outside [0, {sched.T})")
    return t


def add_noise(x0: torch.Tensor, eps: torch.Tensor, t: int, sched: NoiseSchedule) -> torch.Tensor:
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: {tuple(x0.shape)} vs {tuple(eps.shape)}")
    ab = float(sched.alpha_bars[_check_t(t, sched)])
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def sample_step(x_t, t, eps_pred, sched: NoiseSchedule, mode: str = "ddim",
                rng: torch.Generator | None = None, t_prev: int | None = None) -> torch.Tensor:
    """One reverse step from timestep ``t`` to ``t_prev`` (default ``t - 1``; -1 means clean)."""
    t = _check_t(t, sched)
    t_prev = t - 1 if t_prev is None else int(t_prev)
    if not -1 <= t_prev < t:
        raise ValueError(f"t_prev {t_prev} must lie in [-1, {t})")
    ab = float(sched.alpha_bars[t])
    ab_prev = float(sched.alpha_bars[t_prev]) if t_prev >= 0 else 1.0
    x0_pred = (x_t - math.sqrt(1.0 - ab) * eps_pred) / math.sqrt(ab)
    if mode == "ddim":
        sigma = 0.0
    elif mode == "ddpm":
        sigma = math.sqrt((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev))
    else:
        raise ValueError(f"unknown sampler mode {mode!r}")
    x_prev = math.sqrt(ab_prev) * x0_pred + math.sqrt(max(1.0 - ab_prev - sigma * sigma, 0.0)) * eps_pred
    if sigma > 0.0:
        noise = torch.randn(x_t.shape, generator=rng, dtype=x_t.dtype)
        x_prev = x_prev + sigma * noise
    return x_prev


def sampling_timesteps(T: int, steps: int, strength: float = 1.0) -> list[int]:
    """Descending timesteps for a ``steps``-step run, truncated by denoise strength."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not 0.0 <= strength <= 1.0:
        raise ValueError(f"strength must be in [0, 1], got {strength}")
    full = np.unique(np.rint(np.linspace(0, T - 1, min(steps, T))).astype(int))[::-1]
    t_start = int(round(strength * T))
    return [int(t) for t in full if t < t_start]


# ---------------------------------------------------------------- prompts


def embed_prompt(text: str, dim: int = TEXT_DIM) -> torch.Tensor:
    """Hash-bucketed signed bag of tokens; order of tokens does not matter."""
    vec = np.zeros(dim, dtype=np.float32)
    for tok in re.findall(r"\w+", text.lower()):
        h = int.from_bytes(hashlib.blake2b(tok.encode("utf-8"), digest_size=8).digest(), "little")
        vec[h % dim] += 1.0 if (h >> 40) & 1 else -1.0
    return torch.from_numpy(vec)


# ---------------------------------------------------------------- networks


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


def zero_module(m: nn.Module) -> nn.Module:
    for p in m.parameters():
        nn.init.zeros_(p)
    return m


def _norm(c: int) -> nn.GroupNorm:
    return nn.GroupNorm(8, c)


def embed_time_text(time_mlp, text_proj, t, batch: int, text=None):
    t = torch.as_tensor(t, dtype=torch.float32).reshape(-1)
    if t.numel() == 1:
        t = t.expand(batch)
    temb = time_mlp(timestep_embedding(t, TEMB_DIM))
    if text is None or text_proj is None:
        return temb, None
    text = text if text.dim() == 2 else text[None].expand(batch, -1)
    return temb, text_proj(text)


class ResBlock(nn.Module):
    """GroupNorm/SiLU residual block with timestep shift and optional text FiLM."""

    def __init__(self, cin: int, cout: int, use_text: bool = True):
        super().__init__()
        self.norm1 = _norm(cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.temb = nn.Linear(TEMB_DIM, cout)
        self.text_mod = nn.Linear(TEMB_DIM, 2 * cout) if use_text else None
        self.norm2 = _norm(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, temb, ctx=None):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb(temb)[:, :, None, None]
        if self.text_mod is not None and ctx is not None:
            scale, shift = self.text_mod(ctx)[:, :, None, None].chunk(2, dim=1)
            h = h * (1.0 + scale) + shift
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


def encoder_channels() -> list[int]:
    c0, c1, c2, c3 = CHANNELS
    return [c0, c0, c0, c0, c1, c1, c1, c2, c2, c2, c3, c3, c3]


def decoder_channels() -> list[int]:
    return [CHANNELS[lv] for lv in DECODER_LEVELS]


def point_shapes(latent_size: int) -> list[tuple[int, int]]:
    """(channels, side) of all 25 injection points: 13 encoder/mid then 12 decoder."""
    enc = [(c, latent_size >> INDEX_MAP[i]) for i, c in enumerate(encoder_channels())]
    dec = [(c, latent_size >> lv) for c, lv in zip(decoder_channels(), DECODER_LEVELS)]
    return enc + dec


class Encoder(nn.Module):
    """Input conv + 3 x {2 res blocks, tapped conv downsampler} + 2 res blocks + mid."""

    def __init__(self, in_channels: int = LATENT_CHANNELS, use_text: bool = True):
        super().__init__()
        c = CHANNELS
        self.conv_in = nn.Conv2d(in_channels, c[0], 3, padding=1)
        blocks = []
        cin = c[0]
        for lv in range(4):
            blocks.append(ResBlock(cin, c[lv], use_text))
            blocks.append(ResBlock(c[lv], c[lv], use_text))
            if lv < 3:
                blocks.append(nn.Conv2d(c[lv], c[lv], 3, padding=1))
            cin = c[lv]
        blocks.append(ResBlock(c[3], c[3], use_text))  # mid-block
        self.blocks = nn.ModuleList(blocks)

    def forward(self, h, temb, ctx=None, gates=None) -> list[torch.Tensor]:
        """``h`` is the conv_in output (tap 0); returns all 13 taps.

        ``gates`` optionally holds one multiplicative map per tap; each tap is
        gated before it feeds the next layer.
        """
        if gates is not None:
            h = h * gates[0]
        taps = [h]
        for blk in self.blocks:
            if isinstance(blk, ResBlock):
                h = blk(h, temb, ctx)
            else:
                h = blk(h)
            if gates is not None:
                h = h * gates[len(taps)]
            taps.append(h)
            if not isinstance(blk, ResBlock):
                h = F.avg_pool2d(h, 2)
        return taps


class Decoder(nn.Module):
    def __init__(self, use_text: bool = True):
        super().__init__()
        enc_c = encoder_channels()
        blocks = []
        ups = []
        cur = CHANNELS[3]
        for j, (skip, lv) in enumerate(zip(DECODER_SKIPS, DECODER_LEVELS)):
            blocks.append(ResBlock(cur + enc_c[skip], CHANNELS[lv], use_text))
            cur = CHANNELS[lv]
            last_of_level = j + 1 == len(DECODER_LEVELS) or DECODER_LEVELS[j + 1] != lv
            ups.append(nn.Conv2d(cur, cur, 3, padding=1) if last_of_level and lv > 0 else None)
        self.blocks = nn.ModuleList(blocks)
        self.ups = nn.ModuleList([u if u is not None else nn.Identity() for u in ups])
        self._has_up = [u is not None for u in ups]

    def forward(self, h, skips, temb, ctx=None, residuals=None, scale: float = 1.0,
                return_outputs: bool = False):
        outs = []
        for j, blk in enumerate(self.blocks):
            h = blk(torch.cat([h, skips[DECODER_SKIPS[j]]], dim=1), temb, ctx)
            if residuals is not None:
                h = h + scale * residuals[j] if scale != 1.0 else h + residuals[j]
            outs.append(h)
            if self._has_up[j]:
                h = self.ups[j](F.interpolate(h, scale_factor=2.0, mode="nearest"))
        return (h, outs) if return_outputs else h


class Denoiser(nn.Module):
    """Toy text-conditioned U-Net predicting the added noise."""

    def __init__(self, text_dim: int = TEXT_DIM):
        super().__init__()
        self.time_mlp = nn.Sequential(nn.Linear(TEMB_DIM, TEMB_DIM), nn.SiLU(), nn.Linear(TEMB_DIM, TEMB_DIM))
        self.text_proj = nn.Sequential(nn.Linear(text_dim, TEMB_DIM), nn.SiLU(), nn.Linear(TEMB_DIM, TEMB_DIM))
        self.encoder = Encoder(LATENT_CHANNELS, use_text=True)
        self.decoder = Decoder(use_text=True)
        self.norm_out = _norm(CHANNELS[0])
        self.conv_out = nn.Conv2d(CHANNELS[0], LATENT_CHANNELS, 3, padding=1)

    def embed(self, t, batch: int, text):
        return embed_time_text(self.time_mlp, self.text_proj, t, batch, text)

    def forward(self, x_t, t, text=None, control=None, branch=None,
                control_scale: float = 1.0, branch_scale: float = 1.0):
        b = x_t.shape[0]
        temb, ctx = self.embed(t, b, text)
        taps = self.encoder(self.encoder.conv_in(x_t), temb, ctx)
        skips = list(taps)
        h = taps[12]
        for bundle, scale in ((control, control_scale), (branch, branch_scale)):
            if bundle is None:
                continue
            _check_bundle(bundle[:NUM_ENCODER_POINTS], taps, "encoder")
            for i in range(NUM_ENCODER_POINTS - 1):
                skips[i] = skips[i] + (bundle[i] if scale == 1.0 else scale * bundle[i])
            h = h + (bundle[12] if scale == 1.0 else scale * bundle[12])
        dec_res = None
        if branch is not None:
            if len(branch) != NUM_ENCODER_POINTS + NUM_DECODER_POINTS:
                raise ValueError(f"branch residuals need 25 entries, got {len(branch)}")
            dec_res = branch[NUM_ENCODER_POINTS:]
        h, outs = self.decoder(h, skips, temb, ctx, dec_res, branch_scale, return_outputs=True)
        if dec_res is not None:
            _check_bundle(dec_res, outs, "decoder")
        eps = self.conv_out(F.silu(self.norm_out(h)))
        return eps, taps


def _check_bundle(bundle: Sequence[torch.Tensor], reference: Sequence[torch.Tensor], what: str) -> None:
    if len(bundle) != len(reference):
        raise ValueError(f"{what} residuals: expected {len(reference)} entries, got {len(bundle)}")
    for i, (r, ref) in enumerate(zip(bundle, reference)):
        if r.shape[-3:] != ref.shape[-3:]:
            raise ValueError(
                f"{what} residual {i} has shape {tuple(r.shape)}, expected (*, {', '.join(map(str, ref.shape[-3:]))})")


def denoiser_forward(model: Denoiser, x_t, t, text=None, control=None, branch=None,
                     control_scale: float = 1.0, branch_scale: float = 1.0):
    """Returns ``(eps_pred, encoder_features)``; residual bundles are added when given."""
    return model(x_t, t, text, control, branch, control_scale, branch_scale)


class Autoencoder(nn.Module):
    """Deterministic convolutional autoencoder with an 8x spatial reduction."""

    def __init__(self):
        super().__init__()
        self.enc = nn.Sequential(
            nn.Conv2d(3, 32, 3, padding=1), nn.SiLU(),
            nn.Conv2d(32, 32, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(64, 64, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(64, LATENT_CHANNELS, 1),
        )
        self.dec = nn.Sequential(
            nn.Conv2d(LATENT_CHANNELS, 64, 3, padding=1), nn.SiLU(),
            nn.Upsample(scale_factor=2.0, mode="nearest"), nn.Conv2d(64, 64, 3, padding=1), nn.SiLU(),
            nn.Upsample(scale_factor=2.0, mode="nearest"), nn.Conv2d(64, 32, 3, padding=1), nn.SiLU(),
            nn.Upsample(scale_factor=2.0, mode="nearest"), nn.Conv2d(32, 16, 3, padding=1), nn.SiLU(),
            nn.Conv2d(16, 3, 3, padding=1),
        )
        # rescales latents to roughly unit variance; fitted after training
        self.register_buffer("latent_scale", torch.ones(()))

    def encode(self, img):
        return self.enc(img * 2.0 - 1.0) * self.latent_scale

    def decode(self, z):
        return (self.dec(z / self.latent_scale) + 1.0) * 0.5


def _check_image(img: torch.Tensor) -> torch.Tensor:
    if img.dim() == 3:
        img = img[None]
    if img.dim() != 4 or img.shape[1] != 3:
        raise ValueError(f"image must be (3, H, W) or (B, 3, H, W), got {tuple(img.shape)}")
    h, w = img.shape[-2:]
    if h % AE_FACTOR or w % AE_FACTOR:
        raise ValueError(f"image dims {h}x{w} not divisible by {AE_FACTOR}")
    return img


def encode_image(ae: Autoencoder, img: torch.Tensor) -> torch.Tensor:
    return ae.encode(_check_image(img))


def decode_latent(ae: Autoencoder, z: torch.Tensor) -> torch.Tensor:
    if z.dim() != 4 or z.shape[1] != LATENT_CHANNELS:
        raise ValueError(f"latent must be (B, 4, h, w), got {tuple(z.shape)}")
    return ae.decode(z).clamp(0.0, 1.0)


def tensor_digest(x: torch.Tensor) -> str:
    """sha256 of the float32 bytes with signed zeros folded together."""
    a = (x.detach().to(torch.float32) + 0.0).contiguous().numpy()
    return hashlib.sha256(a.tobytes()).hexdigest()


def reverse_loop(base: Denoiser, x: torch.Tensor, timesteps: Sequence[int], sched: NoiseSchedule,
                 text=None, mode: str = "ddim", rng: torch.Generator | None = None,
                 residual_fn=None, post_step=None, guidance_scale: float = 1.0) -> torch.Tensor:
    """Shared reverse-diffusion loop.

    ``residual_fn(x_t, t)`` returns ``(control, branch, control_scale, branch_scale)``
    bundles to inject, or ``None``; ``post_step(x_prev, t_prev)`` may replace the
    latent after each step (used by the blending baselines).
    """
    timesteps = list(timesteps)
    for k, t in enumerate(timesteps):
        t_prev = timesteps[k + 1] if k + 1 < len(timesteps) else -1
        inj = residual_fn(x, t) if residual_fn is not None else None
        kwargs = {}
        if inj is not None:
            control, branch, cs, bs = inj
            kwargs = dict(control=control, branch=branch, control_scale=cs, branch_scale=bs)
        eps, _ = base(x, t, text, **kwargs)
        if guidance_scale != 1.0:
            uncond = torch.zeros_like(text) if text is not None else None
            eps_u, _ = base(x, t, uncond, **kwargs)
            eps = eps_u + guidance_scale * (eps - eps_u)
        x = sample_step(x, t, eps, sched, mode, rng, t_prev)
        if post_step is not None:
            x = post_step(x, t_prev)
    return x
