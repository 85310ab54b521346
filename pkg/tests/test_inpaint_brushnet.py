import inspect

import numpy as np
import pytest
import torch

from maskguide.diffusion_core import encode_image, point_shapes, tensor_digest
from maskguide.inpaint_brushnet import (
    HOLE_FILL, InpaintBranch, InpaintConfig, branch_forward, build_branch_input, inpaint_sample,
    make_masked_image_latent, paste_back, text_to_image,
)
from maskguide.mask_ops import build_mask_pyramid, downsample_cubic
from oracles import box_blur_1d_ref


@pytest.fixture(scope="module")
def img():
    return torch.rand(3, 128, 128, generator=torch.Generator().manual_seed(7))


def _left_half():
    h = np.zeros((128, 128), np.uint8)
    h[:, :64] = 1
    return h


def test_masked_latent_no_hole_and_full_hole(fresh, img):
    ae = fresh.autoencoder
    with torch.no_grad():
        assert torch.equal(make_masked_image_latent(ae, img, np.zeros((128, 128), np.uint8)), encode_image(ae, img))
        full = make_masked_image_latent(ae, img, np.ones((128, 128), np.uint8))
        assert torch.equal(full, encode_image(ae, torch.full_like(img, HOLE_FILL)))


def test_masked_latent_left_hole_receptive_field(fresh, img):
    # encoder receptive field spans latent column j -> pixels [8j-5, 8j+11]; j >= 9 never sees the hole
    with torch.no_grad():
        masked = make_masked_image_latent(fresh.autoencoder, img, _left_half())
        plain = encode_image(fresh.autoencoder, img)
    torch.testing.assert_close(masked[..., 9:], plain[..., 9:], atol=1e-6, rtol=0)
    assert not torch.allclose(masked[..., :7], plain[..., :7])
    with pytest.raises(ValueError):
        make_masked_image_latent(fresh.autoencoder, img, np.zeros((64, 64), np.uint8))


def test_branch_input_layout():
    x_t = torch.randn(1, 4, 16, 16)
    ml = torch.randn(1, 4, 16, 16)
    hole = _left_half()
    bi = build_branch_input(x_t, ml, hole, 16)
    assert bi.shape == (1, 9, 16, 16)
    assert torch.equal(bi[:, :4], x_t)
    assert torch.equal(bi[:, 4:8], ml)
    assert torch.equal(bi[0, 8], torch.from_numpy(downsample_cubic(hole, 16, 16)))
    with pytest.raises(ValueError):
        build_branch_input(x_t, torch.randn(1, 4, 8, 8), hole, 16)
    with pytest.raises(ValueError):
        build_branch_input(x_t, ml, hole, 8)


def test_fresh_branch_residuals_zero_and_shapes(fresh, geometry):
    bi = torch.randn(1, 9, 16, 16)
    with torch.no_grad():
        res = branch_forward(bi, 12, fresh.branch)
    assert len(res) == 25
    assert all((r == 0).all() for r in res)
    for r, (c, s) in zip(res, point_shapes(geometry.latent_size)):
        assert r.shape == (1, c, s, s)


def test_branch_deterministic(active):
    bi = torch.randn(1, 9, 16, 16)
    with torch.no_grad():
        a = branch_forward(bi, 12, active.branch)
        b = branch_forward(bi, 12, active.branch)
    assert all(torch.equal(p, q) for p, q in zip(a, b))


def test_branch_is_text_free(fresh):
    assert not any("text" in k for k in fresh.branch.state_dict())
    assert "text" not in inspect.signature(branch_forward).parameters
    assert "text" not in inspect.signature(InpaintBranch.forward).parameters


def test_branch_from_denoiser_layout(fresh):
    br = InpaintBranch.from_denoiser(fresh.base)
    w = br.encoder.conv_in.weight
    assert torch.equal(w[:, :4], fresh.base.encoder.conv_in.weight)
    assert (w[:, 4:] == 0).all()
    assert torch.equal(br.decoder.blocks[0].conv1.weight, fresh.base.decoder.blocks[0].conv1.weight)


def test_encoder_only_ablation(active):
    active.branch.encoder_only = True
    try:
        with torch.no_grad():
            res = branch_forward(torch.randn(1, 9, 16, 16), 3, active.branch)
    finally:
        active.branch.encoder_only = False
    assert all((r == 0).all() for r in res[13:])
    assert any((r != 0).any() for r in res[:13])


def test_paste_back_feather_zero():
    g = torch.rand(3, 32, 32)
    o = torch.rand(3, 32, 32)
    assert torch.equal(paste_back(g, o, np.ones((32, 32), np.uint8), 0), g)
    hole = (np.random.default_rng(0).random((32, 32)) < 0.4).astype(np.uint8)
    out = paste_back(g, o, hole, 0)
    keep = torch.from_numpy(hole == 0).expand_as(o)
    assert torch.equal(out[keep], o[keep])
    assert torch.equal(out[~keep], g[~keep])


def test_paste_back_feather_two_oracle():
    g = torch.ones(3, 16, 16)
    o = torch.zeros(3, 16, 16)
    hole = np.zeros((16, 16), np.uint8)
    hole[:, :8] = 1
    out = paste_back(g, o, hole, 2)
    ref = box_blur_1d_ref(hole[0].astype(float), 2)
    np.testing.assert_allclose(out[0, 5].numpy(), ref, atol=1e-6)
    band = ((ref > 0) & (ref < 1)).sum()
    assert band == 4
    np.testing.assert_allclose(ref[6:10], [0.8, 0.6, 0.4, 0.2])


def test_inpaint_empty_hole_returns_input(active, img):
    out = inpaint_sample(active, img, np.zeros((128, 128), np.uint8), "red disk", InpaintConfig(steps=3))
    assert torch.equal(out, img)


def test_inpaint_deterministic(active, img):
    cfg = InpaintConfig(steps=4, seed=9)
    a = inpaint_sample(active, img, _left_half(), "red disk", cfg)
    b = inpaint_sample(active, img, _left_half(), "red disk", cfg)
    assert tensor_digest(a) == tensor_digest(b)


def test_fresh_branch_equals_text_to_image(fresh, img):
    cfg = InpaintConfig(steps=20, seed=4, paste_back=False)
    _, z_inp = inpaint_sample(fresh, img, _left_half(), "blue capsule", cfg, return_latent=True)
    _, z_t2i = text_to_image(fresh, "blue capsule", steps=20, seed=4, return_latent=True)
    assert tensor_digest(z_inp) == tensor_digest(z_t2i)


def test_inpaint_with_guided_control_locality(active, img):
    yy, xx = np.mgrid[:128, :128]
    product = (((yy - 24) ** 2 + (xx - 24) ** 2) <= 14 * 14).astype(np.uint8)
    pyr = build_mask_pyramid(product, 16)
    zero = np.ones((128, 128), bool)
    for lv in pyr.levels:
        s = 128 // lv.shape[0]
        zero &= np.kron(lv == 0, np.ones((s, s), bool))
    cond = torch.rand(128, 128, generator=torch.Generator().manual_seed(2))
    cond2 = cond.clone()
    cond2[torch.from_numpy(zero)] = 1.0
    cfg = InpaintConfig(steps=4, paste_back=False)
    hole = 1 - product
    a = inpaint_sample(active, img, hole, "red disk", cfg, cond=cond, guidance=pyr)
    b = inpaint_sample(active, img, hole, "red disk", cfg, cond=cond2, guidance=pyr)
    c = inpaint_sample(active, img, hole, "red disk", cfg, cond=cond2, guidance=None)
    assert torch.equal(a, b)
    assert not torch.equal(a, c)


def test_inpaint_geometry_check(active):
    with pytest.raises(ValueError):
        inpaint_sample(active, torch.rand(3, 64, 64), np.zeros((64, 64), np.uint8), "x")
