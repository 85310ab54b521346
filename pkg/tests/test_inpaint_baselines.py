import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from maskguide.diffusion_core import add_noise, decode_latent, encode_image, make_schedule, tensor_digest
from maskguide.inpaint_baselines import BlendConfig, blend, blended_sample, blended_step, latent_mask

S = make_schedule()


def test_blended_step_pure_generation_and_reconstruction():
    x = torch.randn(1, 4, 8, 8)
    x0 = torch.randn(1, 4, 8, 8)
    out = blended_step(x, x0, np.ones((8, 8)), 20, S, torch.Generator().manual_seed(0))
    assert torch.equal(out, x)
    out, eps = blended_step(x, x0, np.zeros((8, 8)), 20, S, torch.Generator().manual_seed(0), return_noise=True)
    assert torch.equal(out, add_noise(x0, eps, 20, S))
    # the noise is the generator's next draw
    assert torch.equal(eps, torch.randn(x0.shape, generator=torch.Generator().manual_seed(0)))
    with pytest.raises(ValueError):
        blended_step(x, x0[..., :4], np.ones((8, 8)), 20, S)


def test_blended_step_half_mask_elementwise():
    g = torch.Generator().manual_seed(3)
    x = torch.randn(2, 2, 2, generator=g)
    x0 = torch.randn(2, 2, 2, generator=g)
    out, eps = blended_step(x, x0, np.full((2, 2), 0.5), 7, S, g, return_noise=True)
    ab = float(S.alpha_bars[7])
    for idx in np.ndindex(2, 2, 2):
        ref = ab ** 0.5 * float(x0[idx]) + (1 - ab) ** 0.5 * float(eps[idx])
        assert float(out[idx]) == pytest.approx(0.5 * float(x[idx]) + 0.5 * ref, abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_blend_monotone_in_mask(m1, m2):
    lo, hi = sorted((m1, m2))
    g = torch.Generator().manual_seed(0)
    a, b = torch.randn(1, 4, 4, 4, generator=g), torch.randn(1, 4, 4, 4, generator=g)
    o_lo = blend(a, b, np.full((4, 4), lo, np.float32))
    o_hi = blend(a, b, np.full((4, 4), hi, np.float32))
    up = a >= b
    assert (o_hi[up] >= o_lo[up] - 1e-6).all()
    assert (o_hi[~up] <= o_lo[~up] + 1e-6).all()


def test_latent_mask_modes():
    m = np.zeros((128, 128), np.float32)
    m[30:50, 70:90] = 1
    hard = latent_mask(m, 16, "hard")
    assert set(np.unique(hard)) == {0.0, 1.0}
    assert hard[3, 8] == 1 and hard[6, 11] == 1 and hard[3, 12] == 0
    soft = latent_mask(m, 16, "soft")
    assert ((soft > 0) & (soft < 1)).any()
    with pytest.raises(ValueError):
        latent_mask(np.full((16, 16), 0.5), 16, "hard")
    with pytest.raises(ValueError):
        BlendConfig(mode="medium")


@pytest.fixture(scope="module")
def scene_img():
    from maskguide.finetune_harness import gen_scene
    return gen_scene(3).image_tensor()


def test_zero_strength_is_roundtrip(fresh, scene_img):
    out = blended_sample(fresh, scene_img, np.ones((128, 128)), "x", BlendConfig(denoise_strength=0.0))
    with torch.no_grad():
        ref = decode_latent(fresh.autoencoder, encode_image(fresh.autoencoder, scene_img))[0]
    assert torch.equal(out, ref)


def test_hard_mask_preserved_every_step(active, scene_img):
    hole = np.zeros((128, 128), np.uint8)
    hole[32:96, 32:96] = 1
    lm = torch.from_numpy(latent_mask(hole, 16, "hard"))
    keep = (lm == 0).expand(1, 4, 16, 16)
    trace = []
    _, z = blended_sample(active, scene_img, hole, "red disk", BlendConfig(steps=10, seed=2), trace=trace,
                          return_latent=True)
    with torch.no_grad():
        x0 = encode_image(active.autoencoder, scene_img)
    assert len(trace) == 10
    for t_prev, eps, lat in trace:
        ref = add_noise(x0, eps, t_prev, active.schedule) if t_prev >= 0 else x0
        assert torch.equal(lat[keep], ref[keep])
    assert torch.equal(z[keep], x0[keep])
    assert not torch.equal(z[~keep], x0[~keep])


def test_soft_with_binary_mask_equals_hard(active, scene_img):
    hole = np.zeros((16, 16), np.float32)
    hole[4:12, 4:12] = 1
    a = blended_sample(active, scene_img, hole, "x", BlendConfig(steps=5, mode="hard"), return_latent=True)[1]
    b = blended_sample(active, scene_img, hole, "x", BlendConfig(steps=5, mode="soft"), return_latent=True)[1]
    assert tensor_digest(a) == tensor_digest(b)


def test_soft_band_between_branches(active, scene_img):
    m = np.zeros((16, 16), np.float32)
    m[:, 8:] = 1
    m[:, 6:8] = 0.5
    trace = []
    blended_sample(active, scene_img, m, "x", BlendConfig(steps=5, mode="soft"), trace=trace)
    with torch.no_grad():
        x0 = encode_image(active.autoencoder, scene_img)
    # rebuild the generated branch from the blend: gen = (out - 0.5 ref) / 0.5 in the band
    for t_prev, eps, lat in trace[:-1]:
        ref = add_noise(x0, eps, t_prev, active.schedule)
        band = lat[..., 6:8]
        gen = 2 * band - ref[..., 6:8]
        lo = torch.minimum(gen, ref[..., 6:8])
        hi = torch.maximum(gen, ref[..., 6:8])
        differs = (gen - ref[..., 6:8]).abs() > 1e-4
        assert ((band > lo) & (band < hi))[differs].all()
