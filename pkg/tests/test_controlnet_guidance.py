import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from maskguide.controlnet_guidance import (
    ControlBranch, apply_mask_guidance, control_forward, guided_denoise_step, guided_sample, make_edge_condition,
)
from maskguide.diffusion_core import INDEX_MAP, embed_prompt, point_shapes, sample_step, tensor_digest
from maskguide.mask_ops import MaskPyramid, build_mask_pyramid

TEXT = embed_prompt("green disk")


def _disk(cy, cx, r, n=128):
    yy, xx = np.mgrid[:n, :n]
    return (((yy - cy) ** 2 + (xx - cx) ** 2) <= r * r).astype(np.uint8)


def all_levels_zero(pyr, n=128):
    zero = np.ones((n, n), bool)
    for lv in pyr.levels:
        s = n // lv.shape[0]
        zero &= np.kron(lv == 0, np.ones((s, s), bool))
    return zero


# ---------------------------------------------------------------- edge condition


def test_edge_constant_image_is_zero():
    assert (make_edge_condition(torch.full((3, 32, 32), 0.3)) == 0).all()


def test_edge_vertical_step():
    img = torch.zeros(3, 16, 16)
    img[:, :, 8:] = 1.0
    e = make_edge_condition(img)
    # central-difference Sobel: columns 7 and 8 see the full step (|gx| = 4), others nothing
    assert (e[:, 7] == 1).all() and (e[:, 8] == 1).all()
    e[:, 7:9] = 0
    assert (e == 0).all()


def test_edge_range_random_images():
    g = torch.Generator().manual_seed(0)
    for _ in range(100):
        e = make_edge_condition(torch.rand(3, 24, 24, generator=g))
        assert e.min() >= 0 and e.max() <= 1


# ---------------------------------------------------------------- control branch


def test_fresh_control_residuals_zero(fresh, geometry):
    x = torch.randn(1, 4, 16, 16)
    with torch.no_grad():
        res = control_forward(torch.rand(128, 128), x, 10, TEXT, fresh.control)
    assert len(res) == 13
    assert all((r == 0).all() for r in res)
    for i, (r, (c, s)) in enumerate(zip(res, point_shapes(geometry.latent_size))):
        assert r.shape == (1, c, s, s)
        assert s == geometry.latent_size >> INDEX_MAP[i]


def test_control_deterministic(active):
    x = torch.randn(1, 4, 16, 16)
    cond = torch.rand(128, 128)
    with torch.no_grad():
        a = control_forward(cond, x, 10, TEXT, active.control)
        b = control_forward(cond, x, 10, TEXT, active.control)
    assert all(torch.equal(p, q) for p, q in zip(a, b))
    assert any((p != 0).any() for p in a)


def test_control_rejects_bad_condition(active):
    with pytest.raises(ValueError):
        control_forward(torch.rand(64, 64), torch.randn(1, 4, 16, 16), 3, TEXT, active.control)


def test_from_denoiser_copies_encoder(fresh):
    ctl = ControlBranch.from_denoiser(fresh.base)
    for k, v in fresh.base.encoder.state_dict().items():
        assert torch.equal(ctl.encoder.state_dict()[k], v)
    assert all((p == 0).all() for zc in ctl.zero_convs for p in zc.parameters())


# ---------------------------------------------------------------- apply_mask_guidance


def _residuals(channels=2, seed=0):
    g = torch.Generator().manual_seed(seed)
    return [torch.randn(1, channels, 16 >> INDEX_MAP[i], 16 >> INDEX_MAP[i], generator=g) for i in range(13)]


def test_identity_and_annihilation():
    res = _residuals()
    one = apply_mask_guidance(res, MaskPyramid.constant(16, 1.0))
    zero = apply_mask_guidance(res, MaskPyramid.constant(16, 0.0))
    assert all(torch.equal(a, b) for a, b in zip(one, res))
    assert all((z == 0).all() for z in zero)


def test_half_plane_elementwise_oracle():
    m = np.zeros((128, 128), np.uint8)
    m[:, :64] = 1
    pyr = build_mask_pyramid(m, 16)
    res = _residuals()
    out = apply_mask_guidance(res, pyr)
    # point 7 sits on the 4x4 level
    r, o, lv = res[7], out[7], pyr.levels[2]
    assert lv.shape == (4, 4)
    for c in range(2):
        for y in range(4):
            for x in range(4):
                w = float(lv[y, x])
                if w == 1.0:
                    assert o[0, c, y, x] == r[0, c, y, x]
                elif w == 0.0:
                    assert o[0, c, y, x] == 0
                else:
                    assert float(o[0, c, y, x]) == pytest.approx(float(r[0, c, y, x]) * w, rel=1e-6)
    assert 0 < lv[0, 1] < 1 and 0 < lv[0, 2] < 1


def test_guidance_does_not_mutate():
    res = _residuals()
    before = [r.clone() for r in res]
    apply_mask_guidance(res, build_mask_pyramid(_disk(64, 64, 30), 16))
    assert all(torch.equal(a, b) for a, b in zip(res, before))


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_guidance_linear(a, b, seed):
    pyr = build_mask_pyramid(_disk(50, 70, 25), 16)
    r1, r2 = _residuals(seed=seed), _residuals(seed=seed + 1)
    lhs = apply_mask_guidance([a * x + b * y for x, y in zip(r1, r2)], pyr)
    g1, g2 = apply_mask_guidance(r1, pyr), apply_mask_guidance(r2, pyr)
    for i, l in enumerate(lhs):
        m = torch.from_numpy(pyr.for_point(i))
        assert torch.equal(l, (a * r1[i] + b * r2[i]) * m)
        torch.testing.assert_close(l, a * g1[i] + b * g2[i], atol=1e-5, rtol=1e-5)


def test_guidance_size_mismatch_names_index():
    res = _residuals()
    res[5] = torch.zeros(1, 2, 4, 4)
    with pytest.raises(ValueError, match="residual 5"):
        apply_mask_guidance(res, MaskPyramid.constant(16, 1.0))
    with pytest.raises(ValueError):
        apply_mask_guidance(_residuals()[:12], MaskPyramid.constant(16, 1.0))


# ---------------------------------------------------------------- guided steps and sampling


def test_guided_step_identity_and_annihilation(active):
    x = torch.randn(1, 4, 16, 16)
    cond = torch.rand(128, 128)
    m = active
    with torch.no_grad():
        one = guided_denoise_step(x, 30, TEXT, cond, MaskPyramid.constant(16, 1.0), m.base, m.control, m.schedule)
        unguided = guided_denoise_step(x, 30, TEXT, cond, None, m.base, m.control, m.schedule)
        zero = guided_denoise_step(x, 30, TEXT, cond, MaskPyramid.constant(16, 0.0), m.base, m.control, m.schedule)
        eps, _ = m.base(x, 30, TEXT)
    assert tensor_digest(one) == tensor_digest(unguided)
    assert tensor_digest(zero) == tensor_digest(sample_step(x, 30, eps, m.schedule))
    assert tensor_digest(one) != tensor_digest(zero)


def test_guided_five_step_reproducible(active):
    pyr = build_mask_pyramid(_disk(64, 64, 30), 16)
    cond = torch.rand(128, 128, generator=torch.Generator().manual_seed(0))
    with torch.no_grad():
        a = guided_sample(active.base, active.control, active.schedule, TEXT, cond, pyr, 16, steps=5, seed=3)
        b = guided_sample(active.base, active.control, active.schedule, TEXT, cond, pyr, 16, steps=5, seed=3)
    assert tensor_digest(a) == tensor_digest(b)


@pytest.mark.parametrize("disk", [(24, 24, 14), (20, 20, 10), (64, 20, 14)])
def test_layerwise_locality(active, disk):
    pyr = build_mask_pyramid(_disk(*disk), 16)
    zero = torch.from_numpy(all_levels_zero(pyr))
    assert zero.float().mean() > 0.2
    g = torch.Generator().manual_seed(5)
    cond = torch.rand(128, 128, generator=g)
    cond2 = cond.clone()
    cond2[zero] = torch.rand(int(zero.sum()), generator=g)
    with torch.no_grad():
        a = guided_sample(active.base, active.control, active.schedule, TEXT, cond, pyr, 16, steps=5)
        b = guided_sample(active.base, active.control, active.schedule, TEXT, cond2, pyr, 16, steps=5)
    assert tensor_digest(a) == tensor_digest(b)


def test_residual_only_masking_leaks(active):
    """Masking only the emitted residuals lets the background condition reach the product region."""
    pyr = build_mask_pyramid(_disk(24, 24, 14), 16)
    zero = torch.from_numpy(all_levels_zero(pyr))
    g = torch.Generator().manual_seed(5)
    cond = torch.rand(128, 128, generator=g)
    cond2 = cond.clone()
    cond2[zero] = torch.rand(int(zero.sum()), generator=g)
    with torch.no_grad():
        a = guided_sample(active.base, active.control, active.schedule, TEXT, cond, pyr, 16, steps=5,
                          guidance_mode="residual")
        b = guided_sample(active.base, active.control, active.schedule, TEXT, cond2, pyr, 16, steps=5,
                          guidance_mode="residual")
    assert not torch.equal(a, b)
    with pytest.raises(ValueError):
        guided_sample(active.base, active.control, active.schedule, TEXT, cond, pyr, 16, steps=1, guidance_mode="x")
