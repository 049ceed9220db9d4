"""Quadrature weights, compositing, conservation, and the coarse/fine pipeline."""

import numpy as np
import pytest

from nerflab import autodiff as ad
from nerflab import field as F
from nerflab import rendering as R
from nerflab import scenes
from nerflab.geometry import ConeBatch, Intrinsics, pose_from_sphere, SphericalPose


def random_cones(rng, n=4):
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return ConeBatch(
        origins=rng.normal(size=(n, 3)),
        directions=d,
        base_radii=np.full(n, 0.01),
        near=2.0,
        far=6.0,
    )


# ------------------------------------------------------- weights_from_density


def test_zero_density_gives_zero_weights():
    sigma = np.zeros((2, 5))
    delta = np.full((2, 5), 0.3)
    w, t = R.weights_from_density(sigma, delta)
    np.testing.assert_allclose(ad._val(w), 0.0, atol=1e-15)
    np.testing.assert_allclose(ad._val(t), 1.0, atol=1e-15)


def test_single_sample_half_absorption():
    w, t = R.weights_from_density(np.array([[np.log(2.0)]]), np.array([[1.0]]))
    assert ad._val(w)[0, 0] == pytest.approx(0.5, abs=1e-12)
    assert ad._val(t)[0, -1] == pytest.approx(0.5, abs=1e-12)


def test_two_samples_hand_evaluation():
    sigma = np.array([[np.log(2.0), np.log(2.0)]])
    delta = np.ones((1, 2))
    w, t = R.weights_from_density(sigma, delta)
    np.testing.assert_allclose(ad._val(w)[0], [0.5, 0.25], atol=1e-12)
    assert ad._val(t)[0, -1] == pytest.approx(0.25, abs=1e-12)
    assert ad._val(w)[0].sum() + ad._val(t)[0, -1] == pytest.approx(1.0, abs=1e-15)


def test_negative_inputs_rejected():
    with pytest.raises(ValueError):
        R.weights_from_density(np.array([[-1.0]]), np.array([[1.0]]))


def test_conservation_and_monotonicity_random(rng):
    sigma = rng.uniform(0.0, 5.0, size=(500, 24))
    delta = rng.uniform(0.01, 0.5, size=(500, 24))
    w, t = R.weights_from_density(sigma, delta)
    wv, tv = ad._val(w), ad._val(t)
    np.testing.assert_allclose(wv.sum(axis=-1) + tv[:, -1], 1.0, atol=1e-9)
    assert np.all(np.diff(tv, axis=-1) <= 1e-15)
    assert np.all((wv >= 0.0) & (wv <= 1.0))


def test_monotone_occlusion(rng):
    sigma = rng.uniform(0.1, 2.0, size=(1, 10))
    delta = np.full((1, 10), 0.2)
    _, t_before = R.weights_from_density(sigma, delta)
    bumped = sigma.copy()
    bumped[0, 3] += 1.0
    _, t_after = R.weights_from_density(bumped, delta)
    tb, ta = ad._val(t_before)[0], ad._val(t_after)[0]
    assert np.all(ta[4:] <= tb[4:] + 1e-15)
    np.testing.assert_allclose(ta[: 4], tb[: 4], atol=1e-15)


# ----------------------------------------------------------------- composite


def test_empty_ray_is_background():
    sigma = np.zeros((1, 8))
    delta = np.full((1, 8), 0.5)
    w, t = R.weights_from_density(sigma, delta)
    t_mid = np.linspace(2.0, 6.0, 8)[None, :]
    c = np.full((1, 8, 3), 0.3)
    out = R.composite(w, c, t_mid, 6.0, t, background=np.ones(3))
    np.testing.assert_allclose(ad._val(out.color)[0], 1.0, atol=1e-12)
    assert ad._val(out.depth)[0] == pytest.approx(6.0, abs=1e-12)


def test_opaque_sample_dominates():
    sigma = np.array([[0.0, 1000.0, 0.0]])
    delta = np.ones((1, 3))
    w, t = R.weights_from_density(sigma, delta)
    t_mid = np.array([[2.5, 3.5, 4.5]])
    c = np.zeros((1, 3, 3))
    c[0, 1] = [0.2, 0.4, 0.6]
    out = R.composite(w, c, t_mid, 6.0, t, background=np.ones(3))
    np.testing.assert_allclose(ad._val(out.color)[0], [0.2, 0.4, 0.6], atol=1e-9)
    assert ad._val(out.depth)[0] == pytest.approx(3.5, abs=1e-9)


def test_composite_matches_scalar_loop_oracle(rng):
    m = 64
    sigma = rng.uniform(0.0, 3.0, size=(1, m))
    delta = rng.uniform(0.01, 0.2, size=(1, m))
    colors = rng.uniform(0.0, 1.0, size=(1, m, 3))
    t_mid = np.cumsum(delta, axis=-1) + 2.0
    w, t = R.weights_from_density(sigma, delta)
    out = R.composite(w, colors, t_mid, 6.0, t, background=np.ones(3))

    # independent scalar implementation
    trans = 1.0
    color = np.zeros(3)
    depth = 0.0
    for i in range(m):
        alpha = 1.0 - np.exp(-sigma[0, i] * delta[0, i])
        color += trans * alpha * colors[0, i]
        depth += trans * alpha * t_mid[0, i]
        trans *= 1.0 - alpha
    color += trans * 1.0
    depth += trans * 6.0
    np.testing.assert_allclose(ad._val(out.color)[0], color, atol=1e-12)
    assert ad._val(out.depth)[0] == pytest.approx(depth, abs=1e-12)


def test_color_stays_in_unit_cube(rng):
    sigma = rng.uniform(0.0, 5.0, size=(50, 16))
    delta = rng.uniform(0.01, 0.5, size=(50, 16))
    colors = rng.uniform(0.0, 1.0, size=(50, 16, 3))
    t_mid = np.cumsum(delta, axis=-1) + 2.0
    w, t = R.weights_from_density(sigma, delta)
    out = R.composite(w, colors, t_mid, 6.0, t, background=np.ones(3))
    c = ad._val(out.color)
    assert np.all((c >= -1e-12) & (c <= 1.0 + 1e-12))


def test_composite_gradients(rng):
    m = 8
    sigma0 = rng.uniform(0.1, 2.0, size=(2, m))
    delta = rng.uniform(0.05, 0.2, size=(2, m))
    colors0 = rng.uniform(0.1, 0.9, size=(2, m, 3))
    t_mid = np.cumsum(delta, axis=-1) + 2.0

    def f_sigma(s):
        w, t = R.weights_from_density(s, delta)
        out = R.composite(w, colors0, t_mid, 6.0, t, background=np.ones(3))
        return ad.asum(out.color * out.color) + ad.asum(out.depth)

    def f_color(c):
        w, t = R.weights_from_density(sigma0, delta)
        out = R.composite(w, c, t_mid, 6.0, t, background=np.ones(3))
        return ad.asum(out.color * out.color)

    assert ad.grad_check(f_sigma, sigma0) < 1e-4
    assert ad.grad_check(f_color, colors0) < 1e-4


# ---------------------------------------------------------------- the pipeline


def mlp_field(rng, cfg):
    spec = F.LayerSpec(in_dim=cfg.in_dim, dir_dim=cfg.dir_dim)
    return R.MLPField(F.ConstParams(F.init_params(spec, rng)), cfg)


def test_zeroed_offset_head_reduces_to_baseline(rng):
    cfg_on = R.RenderConfig(deformable=True, jitter=False)
    cfg_off = R.RenderConfig(deformable=False, jitter=False)
    spec = F.LayerSpec(in_dim=cfg_on.in_dim, dir_dim=cfg_on.dir_dim)
    params = F.init_params(spec, rng)
    params.tensors["offset.w"][:] = 0.0
    params.tensors["offset.b"][:] = 0.0
    cones = random_cones(rng, n=6)
    res_on = R.render_batch(
        R.MLPField(F.ConstParams(params), cfg_on), cones, cfg_on,
        np.random.default_rng(5),
    )
    res_off = R.render_batch(
        R.MLPField(F.ConstParams(params), cfg_off), cones, cfg_off,
        np.random.default_rng(5),
    )
    for attr in ("color", "depth", "weights"):
        a = ad._val(getattr(res_on.fine, attr))
        b = ad._val(getattr(res_off.fine, attr))
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_empty_scene_renders_background(rng):
    scene = scenes.AnalyticScene(primitives=[])
    cfg = R.RenderConfig(jitter=False, deformable=False)
    cones = random_cones(rng, n=5)
    res = R.render_batch(R.AnalyticField(scene), cones, cfg, rng)
    np.testing.assert_allclose(ad._val(res.fine.color), 1.0, atol=1e-12)


def test_render_image_shapes(rng, one_sphere):
    intr = Intrinsics(focal=24.0, width=16, height=16, near=2.0, far=6.0)
    cam = pose_from_sphere(SphericalPose(4.0, 0.5, 1.0), intr)
    cfg = R.RenderConfig(jitter=False, deformable=False, m_coarse=8, m_fine=16)
    img, depth = R.render_image(R.AnalyticField(one_sphere), cam, cfg, rng)
    assert img.shape == (16, 16, 3) and depth.shape == (16, 16)
    assert np.all((img >= 0.0) & (img <= 1.0))
    assert np.all((depth >= 2.0) & (depth <= 6.0))


def test_render_offsets_aligned_with_weights(rng):
    cfg = R.RenderConfig(deformable=True, jitter=False)
    field = mlp_field(np.random.default_rng(2), cfg)
    cones = random_cones(rng, n=3)
    res = R.render_batch(field, cones, cfg, rng)
    assert res.fine_offsets is not None
    assert ad._val(res.fine_offsets).shape == ad._val(res.fine.weights).shape
    assert res.coarse_offsets is None  # deformable_coarse defaults off
