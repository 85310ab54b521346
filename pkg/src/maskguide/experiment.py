"""Staged, cached training of the toy stack and the instance- vs random-mask comparison.

Each stage writes a checkpoint directory named after its fingerprint, which
chains the fingerprints of every earlier stage. Re-running with the same
configuration loads the cached checkpoints instead of retraining.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .checkpoint import CheckpointError, Models, fresh_models, load_checkpoint, save_checkpoint
from .diffusion_core import Geometry, make_schedule
from .finetune_harness import (Comparison, EvalConfig, MetricReport, TrainConfig, eval_compare, held_out_seeds,
                               train)

log = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    geometry: str = "test"
    seed: int = 0
    autoencoder_steps: int = 1200
    autoencoder_lr: float = 2e-3
    base_steps: int = 3000
    base_lr: float = 1e-3
    control_steps: int = 600
    control_lr: float = 2e-4
    inpaint_lr: float = 2e-4
    stage1_steps: int = 1000      # random masks, shared by both arms
    stage2_steps: int = 1000      # random (control arm) or instance (treatment arm)
    batch_size: int = 8
    eval: EvalConfig = field(default_factory=EvalConfig)
    eval_scenes: int = 100

    @property
    def arm_steps(self) -> int:
        return self.stage1_steps + self.stage2_steps


def _fp(*parts) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True, default=str).encode()).hexdigest()[:12]


class StageCache:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, name: str, fingerprint: str) -> Path:
        return self.root / f"{name}-{fingerprint}"

    def load(self, name: str, fingerprint: str) -> Models | None:
        p = self.path(name, fingerprint)
        if not (p / "manifest.json").exists():
            return None
        try:
            return load_checkpoint(p)
        except CheckpointError as e:
            log.warning("ignoring unusable cached stage %s: %s", p, e)
            return None

    def run(self, name: str, fingerprint: str, build) -> tuple[Models, Path]:
        cached = self.load(name, fingerprint)
        p = self.path(name, fingerprint)
        if cached is not None:
            log.info("stage %s: cached at %s", name, p)
            return cached, p
        t0 = time.time()
        models, losses = build()
        save_checkpoint(models, p, {"stage": name, "stage_fingerprint": fingerprint,
                                    "stage_seconds": round(time.time() - t0, 1),
                                    "losses": [round(x, 6) for x in losses]})
        log.info("stage %s: trained in %.0fs -> %s", name, time.time() - t0, p)
        return load_checkpoint(p), p


def _train_cfg(cfg: ExperimentConfig, **kw) -> TrainConfig:
    return TrainConfig(batch_size=cfg.batch_size, geometry=cfg.geometry, **kw)


def build_stack(cfg: ExperimentConfig, cache_root, with_control: bool = True) -> dict[str, Path]:
    """Train autoencoder, base, optionally control, and both inpaint arms; return checkpoint paths."""
    cache = StageCache(cache_root)
    geometry = Geometry.named(cfg.geometry)
    paths: dict[str, Path] = {}

    ae_cfg = _train_cfg(cfg, branch="autoencoder", steps=cfg.autoencoder_steps, lr=cfg.autoencoder_lr, seed=cfg.seed)
    sched = make_schedule()
    fp = _fp(cfg.geometry, cfg.seed, asdict(ae_cfg), [sched.T, sched.betas[0], sched.betas[-1]])
    models, paths["autoencoder"] = cache.run(
        "autoencoder", fp,
        lambda: train(fresh_models(geometry, cfg.seed, control=False, branch=False), ae_cfg))

    base_cfg = _train_cfg(cfg, branch="base", steps=cfg.base_steps, lr=cfg.base_lr, seed=cfg.seed)
    fp = _fp(fp, asdict(base_cfg))
    base_models, paths["base"] = cache.run("base", fp, lambda: train(models, base_cfg))
    base_fp = fp

    if with_control:
        ctl_cfg = _train_cfg(cfg, branch="control", steps=cfg.control_steps, lr=cfg.control_lr, seed=cfg.seed)
        _, paths["control"] = cache.run(
            "control", _fp(base_fp, asdict(ctl_cfg)),
            lambda: train(load_checkpoint(paths["base"]), ctl_cfg))

    s1_cfg = _train_cfg(cfg, branch="inpaint", steps=cfg.stage1_steps, lr=cfg.inpaint_lr, seed=cfg.seed,
                        mask_sampler="random")
    s1_fp = _fp(base_fp, asdict(s1_cfg))
    _, paths["stage1"] = cache.run("inpaint-stage1", s1_fp, lambda: train(load_checkpoint(paths["base"]), s1_cfg))

    # both arms continue from the same stage-1 weights with the same batch stream;
    # only the hole sampler differs
    for arm in ("random", "instance"):
        s2_cfg = _train_cfg(cfg, branch="inpaint", steps=cfg.stage2_steps, lr=cfg.inpaint_lr, seed=cfg.seed + 1,
                            mask_sampler=arm)
        _, paths[arm] = cache.run(f"inpaint-{arm}", _fp(s1_fp, asdict(s2_cfg)),
                                  lambda c=s2_cfg: train(load_checkpoint(paths["stage1"]), c))
    return paths


def run_overcompletion_experiment(cfg: ExperimentConfig, cache_root, report_path=None) -> Comparison:
    paths = build_stack(cfg, cache_root, with_control=False)
    report_file = Path(cache_root) / f"comparison-{_fp(str(paths['instance']), str(paths['random']), asdict(cfg.eval), cfg.eval_scenes)}.json"
    if report_file.exists():
        comp = comparison_from_dict(json.loads(report_file.read_text()))
    else:
        comp = eval_compare(load_checkpoint(paths["instance"]), load_checkpoint(paths["random"]),
                            held_out_seeds(cfg.eval_scenes), cfg.eval)
        report_file.write_text(json.dumps({**comp.to_dict(), "experiment": asdict(cfg)}, indent=1))
    if report_path is not None:
        Path(report_path).write_text(json.dumps({**comp.to_dict(), "experiment": asdict(cfg)}, indent=1))
    return comp


def comparison_from_dict(d: dict) -> Comparison:
    return Comparison(MetricReport(**d["a"]), MetricReport(**d["b"]), d["mean_difference"], d["wins"],
                      d["losses"], d["ties"], d["sign_test_p"])
