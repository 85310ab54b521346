"""Named-tensor checkpoints: one raw little-endian float32 file per tensor plus manifest.json."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .controlnet_guidance import ControlBranch
from .diffusion_core import Autoencoder, Denoiser, Geometry, NoiseSchedule, make_schedule
from .inpaint_brushnet import InpaintBranch

FORMAT = "maskguide-checkpoint/1"
MANIFEST = "manifest.json"
COMPONENTS = ("autoencoder", "base", "control", "branch")
PREFIX = {"autoencoder": "ae", "base": "base", "control": "control", "branch": "branch"}


class CheckpointError(Exception):
    """Missing, unreadable or corrupted checkpoint."""


class GeometryMismatch(Exception):
    """Checkpoint geometry differs from the one requested."""


@dataclass
class Models:
    geometry: Geometry
    schedule: NoiseSchedule = field(default_factory=make_schedule)
    autoencoder: Autoencoder | None = None
    base: Denoiser | None = None
    control: ControlBranch | None = None
    branch: InpaintBranch | None = None
    metadata: dict = field(default_factory=dict)

    def components(self) -> dict[str, torch.nn.Module]:
        return {k: getattr(self, k) for k in COMPONENTS if getattr(self, k) is not None}

    def eval(self) -> "Models":
        for m in self.components().values():
            m.eval()
            for p in m.parameters():
                p.requires_grad_(False)
        return self

    def named_tensors(self) -> dict[str, torch.Tensor]:
        out = {}
        for comp, module in self.components().items():
            for name, t in module.state_dict().items():
                out[f"{PREFIX[comp]}.{name}"] = t
        return out

    def digests(self, component: str) -> dict[str, str]:
        module = getattr(self, component)
        return {k: hashlib.sha256(_tensor_bytes(v)).hexdigest() for k, v in module.state_dict().items()}


def _tensor_bytes(t: torch.Tensor) -> bytes:
    return t.detach().to(torch.float32).contiguous().numpy().astype("<f4").tobytes()


def save_checkpoint(models: Models, directory, extra_metadata: dict | None = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, t in sorted(models.named_tensors().items()):
        data = _tensor_bytes(t)
        fname = f"{name}.bin"
        (d / fname).write_bytes(data)
        entries.append({
            "name": name, "shape": list(t.shape), "dtype": "float32", "file": fname,
            "sha256": hashlib.sha256(data).hexdigest(),
        })
    s = models.schedule
    manifest = {
        "format": FORMAT,
        "geometry": {"image_size": models.geometry.image_size, "latent_size": models.geometry.latent_size},
        "schedule": {"T": s.T, "beta_start": float(s.betas[0]), "beta_end": float(s.betas[-1])},
        "components": list(models.components()),
        "metadata": {**models.metadata, **(extra_metadata or {})},
        "tensors": entries,
    }
    (d / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return d


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST
    if not path.is_file():
        raise CheckpointError(f"no {MANIFEST} in {directory}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"unreadable manifest {path}: {e}") from e
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unknown format {manifest.get('format')!r}")
    return manifest


def verify_checkpoint(directory) -> dict:
    """Check every tensor file against the manifest's size, shape and sha256."""
    d = Path(directory)
    manifest = read_manifest(d)
    for e in manifest["tensors"]:
        f = d / e["file"]
        if not f.is_file():
            raise CheckpointError(f"missing tensor file {f}")
        data = f.read_bytes()
        if hashlib.sha256(data).hexdigest() != e["sha256"]:
            raise CheckpointError(f"sha256 mismatch for tensor {e['name']} ({f})")
        if len(data) != 4 * int(np.prod(e["shape"], dtype=np.int64)):
            raise CheckpointError(f"size mismatch for tensor {e['name']}")
    return manifest


def load_checkpoint(directory, geometry: Geometry | None = None) -> Models:
    d = Path(directory)
    manifest = verify_checkpoint(d)
    g = manifest["geometry"]
    ckpt_geometry = Geometry(int(g["image_size"]), int(g["latent_size"]))
    if geometry is not None and geometry != ckpt_geometry:
        raise GeometryMismatch(f"checkpoint {d} has geometry {ckpt_geometry}, requested {geometry}")
    s = manifest["schedule"]
    models = Models(ckpt_geometry, make_schedule(s["T"], s["beta_start"], s["beta_end"]),
                    metadata=manifest.get("metadata", {}))
    tensors = {}
    for e in manifest["tensors"]:
        arr = np.frombuffer((d / e["file"]).read_bytes(), dtype="<f4").reshape(e["shape"])
        tensors[e["name"]] = torch.from_numpy(arr.astype(np.float32))
    factories = {"autoencoder": Autoencoder, "base": Denoiser, "control": ControlBranch, "branch": InpaintBranch}
    for comp in manifest["components"]:
        module = factories[comp]()
        prefix = PREFIX[comp] + "."
        state = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
        expected = module.state_dict()
        if set(state) != set(expected):
            raise CheckpointError(f"{comp}: tensor names do not match the model layout")
        for k, v in state.items():
            if tuple(v.shape) != tuple(expected[k].shape):
                raise CheckpointError(f"{comp}.{k}: shape {tuple(v.shape)} != {tuple(expected[k].shape)}")
        module.load_state_dict(state)
        setattr(models, comp, module)
    return models.eval()


def default_checkpoint_root() -> Path | None:
    root = os.environ.get("MASKGUIDE_CHECKPOINT_DIR")
    return Path(root) if root else None


def fresh_models(geometry: Geometry, seed: int = 0, control: bool = True, branch: bool = True) -> Models:
    """Randomly initialized base/autoencoder with zero-initialized branches attached."""
    torch.manual_seed(seed)
    ae = Autoencoder()
    base = Denoiser()
    models = Models(geometry, make_schedule(), ae, base)
    if control:
        models.control = ControlBranch.from_denoiser(base)
    if branch:
        models.branch = InpaintBranch.from_denoiser(base)
    return models.eval()


def perturb_zero_convs(models: Models, seed: int = 1, std: float = 0.05) -> Models:
    """Replace the zero-initialized branch outputs with small random weights.

    Gives fixtures whose branches actually inject something without training.
    """
    g = torch.Generator().manual_seed(seed)
    mods = []
    if models.control is not None:
        mods += list(models.control.zero_convs) + [models.control.cond_stem[-1]]
    if models.branch is not None:
        mods += list(models.branch.zero_convs)
    with torch.no_grad():
        for m in mods:
            for p in m.parameters():
                p.copy_(torch.randn(p.shape, generator=g) * std)
    return models
