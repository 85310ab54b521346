"""Synthetic product scenes, mask samplers, branch training and the overcompletion experiment."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np
import torch
import torch.nn.functional as F
from scipy.stats import binomtest

from .checkpoint import Models
from .controlnet_guidance import ControlBranch, make_edge_condition
from .diffusion_core import (
    Geometry, add_noise, embed_prompt, encode_image,
)
from .inpaint_brushnet import InpaintBranch, InpaintConfig, build_branch_input, inpaint_sample, make_masked_image_latent
from .mask_ops import StructuringElement, dilate

log = logging.getLogger(__name__)

BORDER_PX = 4
AREA_RANGE = (0.10, 0.40)
RANDOM_COVERAGE = (0.10, 0.60)
COLOR_SEPARATION = 0.5
MAX_TEXTURE_AMPLITUDE = 0.08
SHAPE_KINDS = ("disk", "rectangle", "capsule")
PALETTE = {
    "red": (0.85, 0.15, 0.15), "green": (0.15, 0.7, 0.2), "blue": (0.15, 0.25, 0.85),
    "yellow": (0.9, 0.85, 0.15), "purple": (0.55, 0.2, 0.7), "orange": (0.95, 0.55, 0.1),
    "cyan": (0.1, 0.8, 0.85), "white": (0.95, 0.95, 0.95), "black": (0.08, 0.08, 0.08),
    "gray": (0.5, 0.5, 0.5), "pink": (0.95, 0.55, 0.7), "brown": (0.5, 0.3, 0.15),
}
TEST_SEED_OFFSET = 1_000_000


# ---------------------------------------------------------------- scenes


@dataclass
class SyntheticScene:
    image: np.ndarray          # (3, H, W) float32 in [0, 1]
    instance_mask: np.ndarray  # (H, W) uint8, exact shape support
    shape_color: np.ndarray
    bg_color: np.ndarray
    kind: str
    bg_params: dict
    seed: int
    prompt: str

    def image_tensor(self) -> torch.Tensor:
        return torch.from_numpy(self.image)


def color_name(c) -> str:
    return min(PALETTE, key=lambda k: float(np.sum((np.asarray(PALETTE[k]) - c) ** 2)))


def _shape_mask(kind: str, params: dict, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[:h, :w].astype(np.float64)
    cy, cx = params["cy"], params["cx"]
    if kind == "disk":
        return ((yy - cy) ** 2 + (xx - cx) ** 2 <= params["r"] ** 2).astype(np.uint8)
    if kind == "rectangle":
        return ((np.abs(yy - cy) <= params["hh"]) & (np.abs(xx - cx) <= params["hw"])).astype(np.uint8)
    if kind == "capsule":
        r, half = params["r"], params["half"]
        if params["vertical"]:
            yy, xx = xx, yy
            cy, cx = cx, cy
        dx = np.clip(xx - cx, -half, half)
        return ((yy - cy) ** 2 + (xx - cx - dx) ** 2 <= r * r).astype(np.uint8)
    raise ValueError(f"unknown shape kind {kind!r}")


def _texture(rng: np.random.Generator, h: int, w: int) -> tuple[np.ndarray, dict]:
    kind = str(rng.choice(["stripes", "checker", "waves"]))
    amp = float(rng.uniform(0.03, MAX_TEXTURE_AMPLITUDE))
    yy, xx = np.mgrid[:h, :w].astype(np.float64)
    if kind == "stripes":
        period = float(rng.uniform(6, 20))
        angle = float(rng.uniform(0, np.pi))
        pat = np.sign(np.sin(2 * np.pi * (xx * np.cos(angle) + yy * np.sin(angle)) / period))
        params = {"period": period, "angle": angle}
    elif kind == "checker":
        cell = int(rng.integers(6, 17))
        pat = np.where(((yy // cell) + (xx // cell)) % 2 == 0, 1.0, -1.0)
        params = {"cell": cell}
    else:
        fy, fx = rng.uniform(0.02, 0.12, size=2)
        pat = np.sin(2 * np.pi * fy * yy) * np.cos(2 * np.pi * fx * xx)
        params = {"fy": float(fy), "fx": float(fx)}
    return amp * pat, {"texture": kind, "amplitude": amp, **params}


def gen_scene(seed: int, size: int = 128) -> SyntheticScene:
    """Deterministic scene: one solid shape on a low-amplitude textured background."""
    rng = np.random.default_rng([int(seed), 0x5CE7E])
    h = w = size
    bg = rng.uniform(0.1, 0.9, size=3)
    while True:
        fg = rng.uniform(0.0, 1.0, size=3)
        if np.linalg.norm(fg - bg) >= COLOR_SEPARATION:
            break
    kind = str(rng.choice(SHAPE_KINDS))
    frame = h * w
    lo = BORDER_PX
    while True:
        if kind == "disk":
            r = rng.uniform(math.sqrt(AREA_RANGE[0] * frame / math.pi), math.sqrt(AREA_RANGE[1] * frame / math.pi))
            params = {"r": float(r)}
            ext_y = ext_x = r
        elif kind == "rectangle":
            hh, hw = rng.uniform(0.12 * h, 0.40 * h, size=2)
            params = {"hh": float(hh), "hw": float(hw)}
            ext_y, ext_x = hh, hw
        else:
            r = rng.uniform(0.10 * h, 0.22 * h)
            half = rng.uniform(0.08 * w, 0.30 * w)
            vertical = bool(rng.integers(0, 2))
            params = {"r": float(r), "half": float(half), "vertical": vertical}
            ext_y, ext_x = (half + r, r) if vertical else (r, half + r)
        if 2 * ext_y + 1 > h - 2 * lo - 2 or 2 * ext_x + 1 > w - 2 * lo - 2:
            continue
        params["cy"] = float(rng.uniform(lo + ext_y + 1, h - lo - ext_y - 2))
        params["cx"] = float(rng.uniform(lo + ext_x + 1, w - lo - ext_x - 2))
        mask = _shape_mask(kind, params, h, w)
        area = mask.mean()
        inner = mask[lo:h - lo, lo:w - lo].sum() == mask.sum()
        if AREA_RANGE[0] <= area <= AREA_RANGE[1] and inner:
            break
    tex, tex_params = _texture(rng, h, w)
    img = np.clip(bg[:, None, None] + tex[None], 0.0, 1.0)
    img = np.where(mask[None] == 1, fg[:, None, None], img).astype(np.float32)
    prompt = f"{color_name(fg)} {kind}"
    return SyntheticScene(img, mask, fg.astype(np.float32), bg.astype(np.float32), kind,
                          {**tex_params, **params}, int(seed), prompt)


def recolor_background(scene: SyntheticScene, new_bg) -> SyntheticScene:
    """Same shape and texture on a different background base color."""
    new_bg = np.asarray(new_bg, dtype=np.float32)
    img = scene.image.copy()
    bgpix = scene.instance_mask == 0
    img[:, bgpix] = np.clip(img[:, bgpix] - scene.bg_color[:, None] + new_bg[:, None], 0.0, 1.0)
    return SyntheticScene(img, scene.instance_mask, scene.shape_color, new_bg, scene.kind,
                          dict(scene.bg_params), scene.seed, scene.prompt)


# ---------------------------------------------------------------- masks


def _segment_distance(yy, xx, p0, p1):
    d = p1 - p0
    denom = float(d @ d) or 1.0
    t = np.clip(((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / denom, 0.0, 1.0)
    return np.hypot(yy - (p0[0] + t * d[0]), xx - (p0[1] + t * d[1]))


def sample_random_mask(seed: int, h: int = 128, w: int = 128) -> np.ndarray:
    """Union of 1-4 rectangles, ellipses or thick strokes covering 10-60% of the frame."""
    rng = np.random.default_rng([int(seed), 0x3A5C])
    yy, xx = np.mgrid[:h, :w].astype(np.float64)
    while True:
        m = np.zeros((h, w), dtype=bool)
        for _ in range(int(rng.integers(1, 5))):
            kind = rng.integers(0, 3)
            if kind == 0:
                y0, x0 = rng.uniform(0, h), rng.uniform(0, w)
                hh, ww = rng.uniform(0.1 * h, 0.6 * h), rng.uniform(0.1 * w, 0.6 * w)
                m |= (yy >= y0) & (yy < y0 + hh) & (xx >= x0) & (xx < x0 + ww)
            elif kind == 1:
                cy, cx = rng.uniform(0, h), rng.uniform(0, w)
                ry, rx = rng.uniform(0.08 * h, 0.35 * h), rng.uniform(0.08 * w, 0.35 * w)
                m |= ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
            else:
                pts = rng.uniform(0, [h, w], size=(int(rng.integers(2, 5)), 2))
                half = rng.uniform(4, 12)
                for p0, p1 in zip(pts, pts[1:]):
                    m |= _segment_distance(yy, xx, p0, p1) <= half
        cov = m.mean()
        if RANDOM_COVERAGE[0] <= cov <= RANDOM_COVERAGE[1]:
            return m.astype(np.uint8)


def sample_instance_mask(scene: SyntheticScene, dilate_px: int = 2) -> np.ndarray:
    if dilate_px <= 0:
        return scene.instance_mask.copy()
    return dilate(scene.instance_mask, StructuringElement.square(2 * dilate_px + 1))


def truncates(mask: np.ndarray, instance: np.ndarray) -> bool:
    """True if the mask covers part, but not all, of the object."""
    overlap = int((mask.astype(bool) & instance.astype(bool)).sum())
    return 0 < overlap < int(instance.sum())


def training_hole(scene: SyntheticScene, sampler: str, seed: int, dilate_px: int = 2) -> np.ndarray:
    """Hole (region to generate) for one training example.

    ``instance`` keeps the whole (slightly dilated) object and generates the rest,
    so the object is never cut; ``random`` uses a random mask that may truncate it.
    """
    h, w = scene.instance_mask.shape
    if sampler == "random":
        return sample_random_mask(seed, h, w)
    if sampler == "instance":
        return (1 - sample_instance_mask(scene, dilate_px)).astype(np.uint8)
    raise ValueError(f"unknown mask sampler {sampler!r}")


# ---------------------------------------------------------------- metric


BACKGROUND_MODELS = ("generated", "scene")


def foreground(generated, scene: SyntheticScene, band_px: int = 2, background: str = "generated") -> np.ndarray:
    """Pixels nearer to the shape color than to the background model.

    ``generated`` takes the median color of the image outside the dilated object
    as the background; the generator never sees the original background, so the
    scene's own color (``scene``) only suits images that kept it.
    """
    if background not in BACKGROUND_MODELS:
        raise ValueError(f"background must be one of {BACKGROUND_MODELS}, got {background!r}")
    g = generated.detach().numpy() if isinstance(generated, torch.Tensor) else np.asarray(generated)
    g = g.astype(np.float64)
    outside = ~sample_instance_mask(scene, band_px).astype(bool)
    if background == "generated" and outside.any():
        bg = np.median(g[:, outside], axis=1)
    else:
        bg = scene.bg_color.astype(np.float64)
    d_fg = np.sum((g - scene.shape_color[:, None, None]) ** 2, axis=0)
    d_bg = np.sum((g - bg[:, None, None]) ** 2, axis=0)
    return d_fg < d_bg


def overcompletion_score(generated, scene: SyntheticScene, band_px: int = 2, background: str = "generated") -> float:
    """Share of predicted-foreground pixels that fall outside the dilated object."""
    if tuple(np.shape(generated)) != scene.image.shape:
        raise ValueError(f"generated {tuple(np.shape(generated))} vs scene {scene.image.shape}")
    fg = foreground(generated, scene, band_px, background)
    band = sample_instance_mask(scene, band_px).astype(bool)
    return float((fg & ~band).sum()) / max(int(fg.sum()), 1)


# ---------------------------------------------------------------- training


class MissingPrerequisite(Exception):
    pass


class TrainingDiverged(Exception):
    pass


BRANCHES = ("autoencoder", "base", "control", "inpaint")
COMPONENT_OF = {"autoencoder": "autoencoder", "base": "base", "control": "control", "inpaint": "branch"}
PREREQUISITES = {"autoencoder": (), "base": ("autoencoder",), "control": ("autoencoder", "base"),
                 "inpaint": ("autoencoder", "base")}


@dataclass
class TrainConfig:
    branch: str = "inpaint"
    steps: int = 200
    batch_size: int = 8
    lr: float = 1e-3
    optimizer: str = "adam"   # adam | sgd
    momentum: float = 0.9
    seed: int = 0
    geometry: str = "test"
    mask_sampler: str = "random"
    corpus_seed: int = 0
    corpus_size: int = 4096
    prompt_dropout: float = 0.1
    instance_dilate_px: int = 2
    grad_clip: float = 1.0

    def __post_init__(self):
        if self.branch not in BRANCHES:
            raise ValueError(f"branch must be one of {BRANCHES}, got {self.branch!r}")
        if self.steps < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("steps, batch size and learning rate must be positive")
        if self.mask_sampler not in ("random", "instance"):
            raise ValueError(f"mask sampler must be 'random' or 'instance', got {self.mask_sampler!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def scene_stream(config: TrainConfig, size: int) -> Iterator[list[SyntheticScene]]:
    """Batches drawn from a fixed corpus of ``corpus_size`` scenes; a pure function of the seeds."""
    rng = np.random.default_rng([config.corpus_seed, config.seed, 0xDA7A])
    cache: dict[int, SyntheticScene] = {}
    while True:
        idx = rng.integers(0, config.corpus_size, size=config.batch_size)
        batch = []
        for i in idx:
            s = int(config.corpus_seed) * 10_000_000 + int(i)
            if s not in cache:
                if len(cache) > 2048:
                    cache.clear()
                cache[s] = gen_scene(s, size)
            batch.append(cache[s])
        yield batch


def noise_prediction_loss(pred: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    return F.mse_loss(pred, eps)


class MicroDenoiser(torch.nn.Module):
    """Two-parameter affine noise predictor used to sanity-check gradients."""

    def __init__(self, w: float = 0.3, b: float = -0.1, dtype=torch.float64):
        super().__init__()
        self.w = torch.nn.Parameter(torch.tensor(w, dtype=dtype))
        self.b = torch.nn.Parameter(torch.tensor(b, dtype=dtype))

    def forward(self, x_t):
        return self.w * x_t + self.b


def micro_loss(model: MicroDenoiser, x0, eps, t, sched) -> torch.Tensor:
    return noise_prediction_loss(model(add_noise(x0, eps, t, sched)), eps)


def _trained(models: Models) -> set:
    return set(models.metadata.get("trained", []))


def _stack_images(scenes) -> torch.Tensor:
    return torch.from_numpy(np.stack([s.image for s in scenes]))


def train(models: Models, config: TrainConfig, stream: Iterator[list[SyntheticScene]] | None = None,
          log_every: int = 100) -> tuple[Models, list[float]]:
    """Optimize one component; everything else is frozen and hash-checked afterwards."""
    missing = [p for p in PREREQUISITES[config.branch] if p not in _trained(models)]
    if missing:
        raise MissingPrerequisite(f"training {config.branch!r} needs trained {', '.join(missing)} first")
    geometry = Geometry.named(config.geometry)
    if geometry != models.geometry:
        raise ValueError(f"config geometry {geometry} differs from models {models.geometry}")
    torch.manual_seed(config.seed)
    comp = COMPONENT_OF[config.branch]
    if config.branch == "control" and models.control is None:
        models.control = ControlBranch.from_denoiser(models.base)
    if config.branch == "inpaint" and models.branch is None:
        models.branch = InpaintBranch.from_denoiser(models.base)
    target = getattr(models, comp)
    frozen_before = {k: models.digests(k) for k in models.components() if k != comp}

    for name, module in models.components().items():
        module.train(name == comp)
        for p in module.parameters():
            p.requires_grad_(name == comp)
    params = [p for p in target.parameters()]
    if config.optimizer == "adam":
        opt = torch.optim.Adam(params, lr=config.lr)
    else:
        opt = torch.optim.SGD(params, lr=config.lr, momentum=config.momentum)

    stream = stream or scene_stream(config, geometry.image_size)
    rng = torch.Generator().manual_seed(config.seed)
    np_rng = np.random.default_rng([config.seed, 0x7EA1])
    step_fn = _STEP_FNS[config.branch]
    losses: list[float] = []
    t0 = time.time()
    for step in range(config.steps):
        scenes = next(stream)
        loss = step_fn(models, scenes, config, rng, np_rng)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingDiverged(f"{config.branch}: non-finite loss {value} at step {step}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        if config.grad_clip:
            torch.nn.utils.clip_grad_norm_(params, config.grad_clip)
        opt.step()
        losses.append(value)
        if log_every and (step + 1) % log_every == 0:
            log.info("%s step %d/%d loss %.5f (%.1fs)", config.branch, step + 1, config.steps,
                     float(np.mean(losses[-log_every:])), time.time() - t0)

    if config.branch == "autoencoder":
        _fit_latent_scale(models, config, geometry)
    models.eval()
    for k, before in frozen_before.items():
        if models.digests(k) != before:
            raise RuntimeError(f"frozen component {k!r} changed during {config.branch} training")
    trained = _trained(models) | {config.branch}
    history = list(models.metadata.get("history", [])) + [{**asdict(config), "final_loss": losses[-1]}]
    models.metadata = {**models.metadata, "trained": sorted(trained), "history": history}
    return models, losses


def _fit_latent_scale(models: Models, config: TrainConfig, geometry: Geometry) -> None:
    scenes = [gen_scene(config.corpus_seed * 10_000_000 + i, geometry.image_size) for i in range(64)]
    ae = models.autoencoder
    with torch.no_grad():
        ae.latent_scale.fill_(1.0)
        z = ae.encode(_stack_images(scenes))
        ae.latent_scale.fill_(1.0 / float(z.std()))


def _noised(models, z0, rng):
    b = z0.shape[0]
    t = torch.randint(0, models.schedule.T, (b,), generator=rng)
    eps = torch.randn(z0.shape, generator=rng)
    ab = torch.from_numpy(models.schedule.alpha_bars.astype(np.float32))[t][:, None, None, None]
    return ab.sqrt() * z0 + (1 - ab).sqrt() * eps, t, eps


def _texts(scenes, config, np_rng, dropout: bool = True):
    texts = torch.stack([embed_prompt(s.prompt) for s in scenes])
    if dropout and config.prompt_dropout > 0:
        drop = torch.from_numpy(np_rng.random(len(scenes)) < config.prompt_dropout)
        texts[drop] = 0.0
    return texts


def _step_autoencoder(models, scenes, config, rng, np_rng):
    img = _stack_images(scenes)
    z = models.autoencoder.enc(img * 2 - 1)
    rec = (models.autoencoder.dec(z) + 1) * 0.5
    return F.mse_loss(rec, img) + 1e-4 * z.pow(2).mean()


def _step_base(models, scenes, config, rng, np_rng):
    with torch.no_grad():
        z0 = encode_image(models.autoencoder, _stack_images(scenes))
    x_t, t, eps = _noised(models, z0, rng)
    pred, _ = models.base(x_t, t, _texts(scenes, config, np_rng))
    return noise_prediction_loss(pred, eps)


def _step_control(models, scenes, config, rng, np_rng):
    img = _stack_images(scenes)
    with torch.no_grad():
        z0 = encode_image(models.autoencoder, img)
    cond = torch.stack([make_edge_condition(im) for im in img])
    x_t, t, eps = _noised(models, z0, rng)
    text = _texts(scenes, config, np_rng)
    res = models.control(cond, x_t, t, text)
    pred, _ = models.base(x_t, t, text, control=res)
    return noise_prediction_loss(pred, eps)


def _step_inpaint(models, scenes, config, rng, np_rng):
    img = _stack_images(scenes)
    holes = np.stack([
        training_hole(s, config.mask_sampler, int(np_rng.integers(0, 2**31)), config.instance_dilate_px)
        for s in scenes])
    with torch.no_grad():
        z0 = encode_image(models.autoencoder, img)
        masked = make_masked_image_latent(models.autoencoder, img, holes)
    x_t, t, eps = _noised(models, z0, rng)
    bi = build_branch_input(x_t, masked, holes, models.geometry.latent_size)
    res = models.branch(bi, t)
    pred, _ = models.base(x_t, t, _texts(scenes, config, np_rng), branch=res)
    return noise_prediction_loss(pred, eps)


_STEP_FNS = {"autoencoder": _step_autoencoder, "base": _step_base, "control": _step_control,
             "inpaint": _step_inpaint}

VALIDATION_SEED_OFFSET = 2_000_000


def validation_losses(models: Models, branch: str, batches: int = 32, batch_size: int = 8,
                      seed: int = 0) -> np.ndarray:
    """Per-batch training objective on a fixed held-out stream (scenes, t, eps, masks all seeded).

    Two checkpoints evaluated with the same arguments see identical inputs, so their
    losses can be compared pairwise.
    """
    cfg = TrainConfig(branch=branch, batch_size=batch_size, seed=seed, prompt_dropout=0.0)
    rng = torch.Generator().manual_seed(seed)
    np_rng = np.random.default_rng([seed, 0x7EA1])
    size = models.geometry.image_size
    out = []
    with torch.no_grad():
        for b in range(batches):
            scenes = [gen_scene(VALIDATION_SEED_OFFSET + b * batch_size + i, size) for i in range(batch_size)]
            out.append(float(_STEP_FNS[branch](models, scenes, cfg, rng, np_rng)))
    return np.asarray(out)


def moving_average(losses, end: int, window: int = 20) -> float:
    lo = max(0, end - window + 1)
    return float(np.mean(losses[lo:end + 1]))


# ---------------------------------------------------------------- evaluation


@dataclass
class MetricReport:
    label: str
    scores: list[float]
    mean: float
    count: int
    config_fingerprint: str
    scene_seeds: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EvalConfig:
    steps: int = 20
    sampler: str = "ddim"
    band_px: int = 2
    instance_dilate_px: int = 2
    background: str = "generated"

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def held_out_seeds(n: int) -> list[int]:
    return [TEST_SEED_OFFSET + i for i in range(n)]


def evaluation_hole(scene: SyntheticScene, dilate_px: int = 2) -> np.ndarray:
    """Everything except the (dilated) product is regenerated."""
    return (1 - sample_instance_mask(scene, dilate_px)).astype(np.uint8)


def evaluate(models: Models, seeds, config: EvalConfig, label: str) -> MetricReport:
    scores = []
    cfg = InpaintConfig(steps=config.steps, mode=config.sampler, paste_back=False)
    for s in seeds:
        scene = gen_scene(s, models.geometry.image_size)
        cfg.seed = s
        out = inpaint_sample(models, scene.image_tensor(), evaluation_hole(scene, config.instance_dilate_px),
                             scene.prompt, cfg)
        scores.append(overcompletion_score(out, scene, config.band_px, config.background))
    mean = float(np.mean(scores)) if scores else 0.0
    return MetricReport(label, scores, mean, len(scores), config.fingerprint(), list(seeds))


@dataclass
class Comparison:
    a: MetricReport
    b: MetricReport
    mean_difference: float   # mean(a) - mean(b)
    wins: int                # scenes where a < b
    losses: int
    ties: int
    sign_test_p: float

    def to_dict(self) -> dict:
        return asdict(self)


def compare_reports(a: MetricReport, b: MetricReport) -> Comparison:
    sa, sb = np.asarray(a.scores), np.asarray(b.scores)
    wins = int((sa < sb).sum())
    losses = int((sa > sb).sum())
    ties = int((sa == sb).sum())
    n = wins + losses
    p = float(binomtest(wins, n, 0.5, alternative="greater").pvalue) if n else 1.0
    return Comparison(a, b, a.mean - b.mean, wins, losses, ties, p)


def eval_compare(ckpt_instance: Models, ckpt_random: Models, seeds, config: EvalConfig | None = None) -> Comparison:
    config = config or EvalConfig()
    if ckpt_instance.geometry != ckpt_random.geometry:
        raise ValueError(f"geometry mismatch {ckpt_instance.geometry} vs {ckpt_random.geometry}")
    a = evaluate(ckpt_instance, seeds, config, "instance")
    b = evaluate(ckpt_random, seeds, config, "random")
    return compare_reports(a, b)
