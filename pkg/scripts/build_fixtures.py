"""Write the test-geometry fixture checkpoint used by ``maskguide selfcheck``.

The fixture is untrained: random base and autoencoder weights, with the
control and inpaint output convolutions perturbed away from zero so the
exact-equality suites compare non-trivial trajectories.
"""
import argparse
from pathlib import Path

from maskguide.checkpoint import default_checkpoint_root, fresh_models, perturb_zero_convs, save_checkpoint
from maskguide.diffusion_core import GEOMETRIES


def main():
    root = default_checkpoint_root() or Path(__file__).resolve().parent.parent / ".cache" / "checkpoints"
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=root / "fixture")
    ap.add_argument("--geometry", choices=sorted(GEOMETRIES), default="test")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    models = perturb_zero_convs(fresh_models(GEOMETRIES[args.geometry], seed=args.seed), seed=args.seed + 1)
    save_checkpoint(models, args.out, {"fixture": True, "seed": args.seed})
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
