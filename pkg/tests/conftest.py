import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from maskguide.checkpoint import fresh_models, perturb_zero_convs, save_checkpoint  # noqa: E402
from maskguide.diffusion_core import GEOMETRIES  # noqa: E402

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def geometry():
    return GEOMETRIES["test"]


@pytest.fixture(scope="session")
def fresh(geometry):
    """Random base/autoencoder with freshly (zero-)initialized branches."""
    return fresh_models(geometry, seed=0)


@pytest.fixture(scope="session")
def active(geometry):
    """Random weights everywhere, including the branch output convolutions."""
    return perturb_zero_convs(fresh_models(geometry, seed=0))


@pytest.fixture(scope="session")
def fixture_checkpoint(tmp_path_factory, geometry):
    """On-disk test-geometry checkpoint with non-zero branch outputs."""
    path = tmp_path_factory.mktemp("ckpt") / "fixture"
    save_checkpoint(perturb_zero_convs(fresh_models(geometry, seed=0)), path)
    return path


_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def verdict():
    """Record a one-line PASS/FAIL verdict; the lines are repeated in the terminal summary."""
    def record(number: int, name: str, ok: bool, detail: str = "") -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {name}" + (f" ({detail})" if detail else "")
        _ACCEPTANCE.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
