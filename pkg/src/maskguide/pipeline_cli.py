"""Command-line pipeline: mask refinement, pyramids, generation, training, evaluation and replay.

Exit codes: 0 success, 1 check failed, 2 bad configuration or input file,
3 missing or corrupt checkpoint, 4 geometry mismatch, 5 numeric failure.
``selfcheck`` uses 11-14 for its individual suites.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import __version__
from .checkpoint import (
    CheckpointError, GeometryMismatch, Models, default_checkpoint_root, fresh_models, load_checkpoint,
    save_checkpoint,
)
from .controlnet_guidance import ControlBranch, guided_sample, make_edge_condition
from .diffusion_core import GEOMETRIES, Geometry, embed_prompt, tensor_digest
from .finetune_harness import (
    EvalConfig, MissingPrerequisite, TrainConfig, TrainingDiverged, eval_compare, held_out_seeds, train,
)
from .inpaint_baselines import BlendConfig, blended_sample
from .inpaint_brushnet import InpaintBranch, InpaintConfig, inpaint_sample, paste_back, text_to_image
from .mask_ops import (
    MaskPyramid, RefineParams, build_mask_pyramid, load_mask_png, load_soft_mask_png, refine_mask, save_mask_png,
)

log = logging.getLogger("maskguide")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_CHECKPOINT, EXIT_GEOMETRY, EXIT_NUMERIC = 0, 1, 2, 3, 4, 5
SELFCHECK_CODES = {"identity": 11, "annihilation": 12, "zero_init": 13, "paste_back": 14}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------- configuration


@dataclass
class RunConfig:
    """Resolved settings for one ``generate`` call; JSON config files use the same keys."""

    image: str = ""
    mask: str = ""
    prompt: str = ""
    out: str = ""
    checkpoint: str = ""
    geometry: str | None = None
    method: str = "dualbranch"      # dualbranch | blended | soft
    sampler: str = "ddim"
    steps: int = 20
    seed: int = 0
    denoise: float = 1.0
    se_close: int = 3
    se_open: int = 3
    se_dilate: int = 5
    control_mode: str = "none"      # none | edge | file
    control_image: str | None = None
    guidance_mask: str = "product"  # product | none
    guidance_mode: str = "layerwise"
    control_scale: float = 1.0
    branch_scale: float = 1.0
    guidance_scale: float = 1.0
    paste_back: bool = True
    feather_px: int = 2

    def validate(self) -> "RunConfig":
        def bad(msg):
            raise CliError(EXIT_CONFIG, msg)

        for name in ("image", "mask", "out"):
            if not getattr(self, name):
                bad(f"missing required setting {name!r}")
        for name in ("image", "mask"):
            if not Path(getattr(self, name)).is_file():
                bad(f"{name} file not found: {getattr(self, name)}")
        if self.method not in ("dualbranch", "blended", "soft"):
            bad(f"unknown method {self.method!r}")
        if self.sampler not in ("ddim", "ddpm"):
            bad(f"unknown sampler {self.sampler!r}")
        if self.geometry is not None and self.geometry not in GEOMETRIES:
            bad(f"unknown geometry {self.geometry!r}")
        if self.steps < 1:
            bad(f"steps must be >= 1, got {self.steps}")
        if not 0.0 <= self.denoise <= 1.0:
            bad(f"denoise must be in [0, 1], got {self.denoise}")
        for name in ("se_close", "se_open", "se_dilate"):
            k = getattr(self, name)
            if k < 1 or k % 2 == 0:
                bad(f"{name} must be an odd size >= 1, got {k}")
        if self.feather_px < 0:
            bad("feather_px must be >= 0")
        if self.control_mode not in ("none", "edge", "file"):
            bad(f"unknown control mode {self.control_mode!r}")
        if self.control_mode == "file":
            if not self.control_image:
                bad("control mode 'file' needs a control image")
            if not Path(self.control_image).is_file():
                bad(f"control image file not found: {self.control_image}")
        if self.control_mode != "none" and self.method != "dualbranch":
            bad("control conditioning is only available with method 'dualbranch'")
        if self.guidance_mask not in ("product", "none"):
            bad(f"unknown guidance mask {self.guidance_mask!r}")
        if self.guidance_mode not in ("layerwise", "residual"):
            bad(f"unknown guidance mode {self.guidance_mode!r}")
        return self


def _load_config_file(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise CliError(EXIT_CONFIG, f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise CliError(EXIT_CONFIG, f"config file {p} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise CliError(EXIT_CONFIG, f"config file {p} must hold a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise CliError(EXIT_CONFIG, f"unknown config keys in {p}: {', '.join(unknown)}")
    return data


def resolve_run_config(args) -> RunConfig:
    """Defaults, then the JSON file, then explicit flags."""
    values = _load_config_file(args.config) if args.config else {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    if getattr(args, "no_paste_back", False):
        values["paste_back"] = False
    if values.get("control_image") and "control_mode" not in values:
        values["control_mode"] = "file"
    try:
        cfg = RunConfig(**values)
    except TypeError as e:
        raise CliError(EXIT_CONFIG, f"bad config: {e}") from e
    return cfg.validate()


def resolve_checkpoint(path: str | None) -> Path:
    root = default_checkpoint_root()
    if not path:
        if root is None:
            raise CliError(EXIT_CHECKPOINT, "no checkpoint given and MASKGUIDE_CHECKPOINT_DIR is not set")
        return root
    p = Path(path)
    if not p.exists() and root is not None and not p.is_absolute() and (root / p).exists():
        return root / p
    return p


def open_checkpoint(path, geometry: str | None = None) -> Models:
    p = resolve_checkpoint(str(path) if path else None)
    if not (p / "manifest.json").is_file():
        raise CliError(EXIT_CHECKPOINT, f"checkpoint not found: {p}")
    try:
        return load_checkpoint(p, Geometry.named(geometry) if geometry else None)
    except GeometryMismatch as e:
        raise CliError(EXIT_GEOMETRY, str(e)) from e
    except (CheckpointError, OSError, ValueError, KeyError) as e:
        raise CliError(EXIT_CHECKPOINT, f"checkpoint {p}: {e}") from e


# ---------------------------------------------------------------- image I/O


def load_image(path) -> torch.Tensor:
    try:
        arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    except OSError as e:
        raise CliError(EXIT_CONFIG, f"cannot read image {path}: {e}") from e
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


def save_image(img: torch.Tensor, path) -> None:
    arr = np.rint(img.detach().clamp(0, 1).numpy().transpose(1, 2, 0) * 255.0).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(path)


def _read_mask(path, soft: bool = False) -> np.ndarray:
    try:
        return load_soft_mask_png(path) if soft else load_mask_png(path)
    except OSError as e:
        raise CliError(EXIT_CONFIG, f"cannot read mask {path}: {e}") from e


# ---------------------------------------------------------------- generate


def run_generate(cfg: RunConfig) -> dict:
    """Run the pipeline for a validated config; returns the RunRecord (also written to disk)."""
    t0 = time.time()
    models = open_checkpoint(cfg.checkpoint, cfg.geometry)
    g = models.geometry
    img = load_image(cfg.image)
    if tuple(img.shape[-2:]) != (g.image_size, g.image_size):
        raise CliError(EXIT_GEOMETRY, f"image {cfg.image} is {tuple(img.shape[-2:])}, checkpoint expects "
                                      f"{g.image_size}x{g.image_size}")
    soft = cfg.method == "soft"
    mask = _read_mask(cfg.mask, soft)
    if mask.shape != (g.image_size, g.image_size):
        raise CliError(EXIT_GEOMETRY, f"mask {cfg.mask} is {mask.shape}, checkpoint expects "
                                      f"{g.image_size}x{g.image_size}")

    # the input mask marks the product; the hole is everything else
    if soft:
        product = mask
        hole = 1.0 - mask
    else:
        product = refine_mask(mask, RefineParams.from_sizes(cfg.se_close, cfg.se_open, cfg.se_dilate))
        hole = (1 - product).astype(np.uint8)

    if cfg.method == "dualbranch":
        if models.branch is None:
            raise CliError(EXIT_CHECKPOINT, "checkpoint has no inpaint branch (needed for method 'dualbranch')")
        cond = None
        pyr = None
        if cfg.control_mode != "none":
            if models.control is None:
                raise CliError(EXIT_CHECKPOINT, "checkpoint has no control branch")
            if cfg.control_mode == "edge":
                cond = make_edge_condition(img)
            else:
                cond = torch.from_numpy(_read_mask(cfg.control_image, soft=True))
                if tuple(cond.shape) != (g.image_size, g.image_size):
                    raise CliError(EXIT_GEOMETRY, f"control image {cfg.control_image} is {tuple(cond.shape)}")
            if cfg.guidance_mask == "product":
                pyr = build_mask_pyramid(product, g.latent_size)
        icfg = InpaintConfig(steps=cfg.steps, mode=cfg.sampler, seed=cfg.seed, paste_back=cfg.paste_back,
                             feather_px=cfg.feather_px, branch_scale=cfg.branch_scale,
                             control_scale=cfg.control_scale, guidance_scale=cfg.guidance_scale,
                             guidance_mode=cfg.guidance_mode)
        out = inpaint_sample(models, img, hole, cfg.prompt, icfg, cond=cond, guidance=pyr)
    else:
        bcfg = BlendConfig(denoise_strength=cfg.denoise, mode="soft" if soft else "hard", steps=cfg.steps,
                           sampler=cfg.sampler, seed=cfg.seed, guidance_scale=cfg.guidance_scale)
        out = blended_sample(models, img, hole, cfg.prompt, bcfg)

    if not torch.isfinite(out).all():
        raise CliError(EXIT_NUMERIC, "generation produced non-finite pixels")
    save_image(out, cfg.out)
    inputs = {"image": sha256_file(cfg.image), "mask": sha256_file(cfg.mask),
              "checkpoint_manifest": sha256_file(resolve_checkpoint(cfg.checkpoint) / "manifest.json")}
    if cfg.control_mode == "file":
        inputs["control_image"] = sha256_file(cfg.control_image)
    record = {
        "tool": "maskguide", "version": __version__, "command": "generate",
        "config": asdict(cfg), "inputs": inputs,
        "output": {"path": str(cfg.out), "sha256": sha256_file(cfg.out), "tensor_digest": tensor_digest(out)},
        "wall_time_s": round(time.time() - t0, 3),
    }
    record_path(cfg.out).write_text(json.dumps(record, indent=1))
    return record


def record_path(out) -> Path:
    p = Path(out)
    return p.with_name(p.stem + ".run.json")


def cmd_generate(args) -> int:
    if args.upscale is not None:
        raise CliError(EXIT_CONFIG, "--upscale is reserved and not supported")
    cfg = resolve_run_config(args)
    rec = run_generate(cfg)
    print(f"wrote {rec['output']['path']} sha256={rec['output']['sha256']}")
    return EXIT_OK


def cmd_replay(args) -> int:
    rp = Path(args.record)
    if not rp.is_file():
        raise CliError(EXIT_CONFIG, f"run record not found: {rp}")
    try:
        rec = json.loads(rp.read_text())
        cfg = RunConfig(**rec["config"])
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise CliError(EXIT_CONFIG, f"unreadable run record {rp}: {e}") from e
    out = Path(args.out) if args.out else Path(cfg.out).with_name(Path(cfg.out).stem + ".replay.png")
    cfg.out = str(out)
    cfg.validate()
    for key, path in (("image", cfg.image), ("mask", cfg.mask), ("control_image", cfg.control_image)):
        if key in rec["inputs"] and sha256_file(path) != rec["inputs"][key]:
            raise CliError(EXIT_CONFIG, f"input {key} ({path}) changed since the recorded run")
    new = run_generate(cfg)
    same = new["output"]["sha256"] == rec["output"]["sha256"]
    print(f"{'MATCH' if same else 'MISMATCH'} {new['output']['sha256']} vs recorded {rec['output']['sha256']}")
    return EXIT_OK if same else EXIT_FAILED


# ---------------------------------------------------------------- masks


def cmd_refine_mask(args) -> int:
    if not Path(args.mask).is_file():
        raise CliError(EXIT_CONFIG, f"mask file not found: {args.mask}")
    for k in (args.se_close, args.se_open, args.se_dilate):
        if k < 1 or k % 2 == 0:
            raise CliError(EXIT_CONFIG, f"structuring element sizes must be odd and >= 1, got {k}")
    refined = refine_mask(_read_mask(args.mask), RefineParams.from_sizes(args.se_close, args.se_open, args.se_dilate))
    save_mask_png(refined, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_make_pyramid(args) -> int:
    if not Path(args.mask).is_file():
        raise CliError(EXIT_CONFIG, f"mask file not found: {args.mask}")
    mask = _read_mask(args.mask)
    latent = args.latent_size or mask.shape[0] // 8
    try:
        pyr = build_mask_pyramid(mask, latent)
    except ValueError as e:
        raise CliError(EXIT_CONFIG, str(e)) from e
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for k, lv in enumerate(pyr.levels):
        name = f"level{k}_{lv.shape[0]}.png"
        save_mask_png(lv, out / name)
        files.append(name)
    (out / "index_map.json").write_text(json.dumps(
        {"index_map": list(pyr.index_map), "sizes": pyr.sizes, "files": files}, indent=1))
    print(f"wrote {len(files)} levels to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- selfcheck


def selfcheck_suites(models: Models, steps: int = 20) -> dict[str, bool]:
    """Exact invariants on a loaded checkpoint; returns suite -> passed."""
    g = models.geometry
    L = g.latent_size
    text = embed_prompt("red disk")
    yy, xx = np.mgrid[:g.image_size, :g.image_size]
    c = g.image_size / 2
    product = (((yy - c) ** 2 + (xx - c) ** 2) <= (g.image_size / 4) ** 2).astype(np.uint8)
    cond = make_edge_condition(torch.from_numpy(
        np.stack([product * 0.8, product * 0.2, 1 - product * 0.5]).astype(np.float32)))
    results = {}
    with torch.no_grad():
        if models.control is not None:
            ones = guided_sample(models.base, models.control, models.schedule, text, cond,
                                 MaskPyramid.constant(L, 1.0), L, steps)
            plain = guided_sample(models.base, models.control, models.schedule, text, cond, None, L, steps)
            zeros = guided_sample(models.base, models.control, models.schedule, text, cond,
                                  MaskPyramid.constant(L, 0.0), L, steps)
            base = guided_sample(models.base, None, models.schedule, text, cond, None, L, steps)
            results["identity"] = tensor_digest(ones) == tensor_digest(plain)
            results["annihilation"] = tensor_digest(zeros) == tensor_digest(base)
            log.info("identity %s / %s", tensor_digest(ones)[:16], tensor_digest(plain)[:16])
            log.info("annihilation %s / %s", tensor_digest(zeros)[:16], tensor_digest(base)[:16])
        else:
            base = guided_sample(models.base, None, models.schedule, text, cond, None, L, steps)

        fresh_control = ControlBranch.from_denoiser(models.base).eval()
        with_fresh = guided_sample(models.base, fresh_control, models.schedule, text, cond, None, L, steps)
        probe = Models(g, models.schedule, models.autoencoder, models.base,
                       branch=InpaintBranch.from_denoiser(models.base).eval())
        img = torch.from_numpy(np.stack([product * 0.9, product * 0.1, np.full(product.shape, 0.3)]).astype(np.float32))
        _, z_inp = inpaint_sample(probe, img, 1 - product, text, InpaintConfig(steps=steps, paste_back=False),
                                  return_latent=True)
        _, z_t2i = text_to_image(probe, text, steps=steps, return_latent=True)
        results["zero_init"] = (tensor_digest(with_fresh) == tensor_digest(base)
                                and tensor_digest(z_inp) == tensor_digest(z_t2i))

        gen = torch.rand(3, g.image_size, g.image_size, generator=torch.Generator().manual_seed(0))
        pasted = paste_back(gen, img, 1 - product, feather_px=0)
        keep = torch.from_numpy(product == 1).expand_as(img)
        results["paste_back"] = bool(torch.equal(pasted[keep], img[keep]))
    return results


def cmd_selfcheck(args) -> int:
    models = open_checkpoint(args.checkpoint, args.geometry)
    results = selfcheck_suites(models, args.steps)
    code = EXIT_OK
    for name, ok in results.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
        if not ok and code == EXIT_OK:
            code = SELFCHECK_CODES[name]
    return code


# ---------------------------------------------------------------- training and evaluation


def cmd_train(args) -> int:
    geometry = args.geometry or "test"
    if args.init:
        models = open_checkpoint(args.init, args.geometry)
        geometry = models.geometry.name
    else:
        models = fresh_models(Geometry.named(geometry), args.seed, control=False, branch=False)
    try:
        cfg = TrainConfig(branch=args.branch, steps=args.steps, batch_size=args.batch_size, lr=args.lr,
                          optimizer=args.optimizer, seed=args.seed, geometry=geometry,
                          mask_sampler=args.mask_sampler)
    except ValueError as e:
        raise CliError(EXIT_CONFIG, str(e)) from e
    try:
        models, losses = train(models, cfg, log_every=args.log_every)
    except MissingPrerequisite as e:
        raise CliError(EXIT_CHECKPOINT, f"{e} (pass --init with a checkpoint that has them)") from e
    except TrainingDiverged as e:
        raise CliError(EXIT_NUMERIC, str(e)) from e
    out = Path(args.out)
    save_checkpoint(models, out, {"losses": [round(x, 6) for x in losses]})
    (out / "train_log.json").write_text(json.dumps({"config": asdict(cfg), "losses": losses}))
    print(f"trained {cfg.branch} for {cfg.steps} steps, final loss {losses[-1]:.5f} -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    a = open_checkpoint(args.ckpt_a)
    b = open_checkpoint(args.ckpt_b)
    if a.geometry != b.geometry:
        raise CliError(EXIT_GEOMETRY, f"checkpoints disagree on geometry: {a.geometry} vs {b.geometry}")
    if args.scenes < 1:
        raise CliError(EXIT_CONFIG, "--scenes must be >= 1")
    comp = eval_compare(a, b, held_out_seeds(args.scenes), EvalConfig(steps=args.steps, background=args.background))
    report = {**comp.to_dict(), "ckpt_a": str(args.ckpt_a), "ckpt_b": str(args.ckpt_b)}
    Path(args.report).parent.mkdir(parents=True, exist_ok=True)
    Path(args.report).write_text(json.dumps(report, indent=1))
    print(f"mean A {comp.a.mean:.4f}  mean B {comp.b.mean:.4f}  wins {comp.wins}  losses {comp.losses}  "
          f"p {comp.sign_test_p:.3g}")
    return EXIT_OK


# ---------------------------------------------------------------- argument parsing


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="maskguide", description="mask-guided inpainting pipeline")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="inpaint the background around a product")
    g.add_argument("--config", help="JSON file with RunConfig keys; flags override it")
    g.add_argument("--image")
    g.add_argument("--mask", help="product mask PNG (white = keep)")
    g.add_argument("--prompt")
    g.add_argument("--out")
    g.add_argument("--checkpoint")
    g.add_argument("--geometry", choices=sorted(GEOMETRIES))
    g.add_argument("--method", choices=["dualbranch", "blended", "soft"])
    g.add_argument("--sampler", choices=["ddim", "ddpm"])
    g.add_argument("--steps", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--denoise", type=float, help="denoise strength for blended/soft")
    g.add_argument("--se-close", dest="se_close", type=int)
    g.add_argument("--se-open", dest="se_open", type=int)
    g.add_argument("--se-dilate", dest="se_dilate", type=int)
    g.add_argument("--control-mode", dest="control_mode", choices=["none", "edge", "file"])
    g.add_argument("--control-image", dest="control_image")
    g.add_argument("--guidance-mask", dest="guidance_mask", choices=["product", "none"])
    g.add_argument("--guidance-mode", dest="guidance_mode", choices=["layerwise", "residual"])
    g.add_argument("--control-scale", dest="control_scale", type=float)
    g.add_argument("--branch-scale", dest="branch_scale", type=float)
    g.add_argument("--guidance-scale", dest="guidance_scale", type=float)
    g.add_argument("--feather", dest="feather_px", type=int)
    g.add_argument("--no-paste-back", dest="no_paste_back", action="store_true")
    g.add_argument("--upscale", nargs="?", const="", default=None, help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("refine-mask", help="close, open and dilate a binary mask")
    r.add_argument("--mask", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--se-close", type=int, default=3)
    r.add_argument("--se-open", type=int, default=3)
    r.add_argument("--se-dilate", type=int, default=5)
    r.set_defaults(func=cmd_refine_mask)

    p = sub.add_parser("make-pyramid", help="write the four guidance levels and the index map")
    p.add_argument("--mask", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--latent-size", type=int, default=None, help="defaults to mask side / 8")
    p.set_defaults(func=cmd_make_pyramid)

    s = sub.add_parser("selfcheck", help="run the exact invariant suites on a checkpoint")
    s.add_argument("--checkpoint")
    s.add_argument("--geometry", choices=sorted(GEOMETRIES))
    s.add_argument("--steps", type=int, default=20)
    s.set_defaults(func=cmd_selfcheck)

    t = sub.add_parser("train", help="train one component")
    t.add_argument("--branch", required=True, choices=["autoencoder", "base", "control", "inpaint"])
    t.add_argument("--mask-sampler", choices=["random", "instance"], default="random")
    t.add_argument("--steps", type=int, default=200)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    t.add_argument("--init", help="checkpoint holding the prerequisite components")
    t.add_argument("--geometry", choices=sorted(GEOMETRIES))
    t.add_argument("--log-every", type=int, default=50)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval-overcompletion", help="compare two inpaint checkpoints")
    e.add_argument("--ckpt-a", required=True)
    e.add_argument("--ckpt-b", required=True)
    e.add_argument("--scenes", type=int, default=100)
    e.add_argument("--steps", type=int, default=20)
    e.add_argument("--background", choices=["generated", "scene"], default="generated",
                   help="reference color for the foreground classifier")
    e.add_argument("--report", required=True)
    e.set_defaults(func=cmd_eval)

    rp = sub.add_parser("replay", help="re-run a RunRecord and compare output hashes")
    rp.add_argument("record")
    rp.add_argument("--out")
    rp.set_defaults(func=cmd_replay)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if os.environ.get("MASKGUIDE_THREADS"):
        torch.set_num_threads(int(os.environ["MASKGUIDE_THREADS"]))
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except FloatingPointError as e:
        print(f"error: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
