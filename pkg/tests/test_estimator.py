import numpy as np
import pytest

from flowtrace import brdf, estimator as est, flow as flowmod, geom, tensorgrid
from flowtrace.errors import InsufficientSamples
from flowtrace.estimator import (
    RadianceEstimate,
    SamplerConfig,
    ShadingContext,
    StreamSpec,
    combine,
    estimate_diffuse,
    estimate_specular,
    luminance,
    sample_variance,
)
from flowtrace.geom import Frame, build_frame

from conftest import hemisphere_quadrature


def _ctx(n, albedo=(0.6, 0.4, 0.2), metallic=0.0, roughness=0.4, w_o=None):
    f = build_frame(np.array([[0.0, 0.0, 1.0]]))
    frame = Frame(*(np.repeat(getattr(f, k), n, axis=0) for k in ("tangent", "bitangent", "normal")))
    w_o = np.array([0.3, -0.2, 0.93]) if w_o is None else np.asarray(w_o, dtype=np.float64)
    w_o = np.repeat(geom.normalize(w_o)[None], n, axis=0)
    return ShadingContext(
        position=np.zeros((n, 3)),
        frame=frame,
        w_o=w_o,
        albedo=np.tile(np.asarray(albedo, dtype=np.float64), (n, 1)),
        metallic=np.full(n, float(metallic)),
        roughness=np.full(n, float(roughness)),
    )


def _streams(n, seed=11, iteration=0):
    return StreamSpec(seed=seed, pixel_ids=np.arange(n), iteration=iteration)


# -- sample_variance -----------------------------------------------------------


def test_sample_variance_hand_example():
    supp, _ = sample_variance(np.array([0.0, 2.0]), np.array([1.0, 1.0]))
    assert supp == pytest.approx(1.0)


def test_sample_variance_identical_integrands():
    supp, std = sample_variance(np.full(8, 0.7), np.full(8, 0.3))
    assert supp == 0.0
    assert std == 0.0


def test_sample_variance_proportional_sampler_zero_std(rng):
    I = rng.uniform(0.1, 2.0, 64)
    q = I / I.sum()  # q proportional to I: ratios constant
    _, std = sample_variance(I, q)
    assert std == 0.0


def test_sample_variance_insufficient():
    with pytest.raises(InsufficientSamples):
        sample_variance(np.array([1.0]), np.array([1.0]))


# -- diffuse estimator -----------------------------------------------------------


def test_diffuse_constant_light_matches_closed_form(rng):
    # constant L and m = 0: the estimate is exactly albedo * L per pixel
    n = 64
    ctx = _ctx(n, albedo=(0.6, 0.4, 0.2))
    L = np.array([1.3, 0.9, 0.4])
    cfg = SamplerConfig(diffuse="cosine", n_d_cos=64)
    out = estimate_diffuse(ctx, lambda x, w: np.tile(L, (x.shape[0], 1)), cfg, _streams(n))
    assert np.allclose(out.rgb, ctx.albedo * L, atol=1e-12)
    assert np.all(out.std_var == 0.0)


def test_diffuse_fully_metallic_exact_zero(rng):
    n = 8
    ctx = _ctx(n, metallic=1.0)
    cfg = SamplerConfig(diffuse="cosine", n_d_cos=16)
    out = estimate_diffuse(ctx, lambda x, w: np.ones((x.shape[0], 3)), cfg, _streams(n))
    assert np.all(out.rgb == 0.0)
    assert np.all(out.std_var == 0.0)


def _smooth_light(x, w):
    v = 1.0 + 0.6 * w[:, 2] + 0.3 * w[:, 0] - 0.2 * w[:, 1]
    return np.stack([v, 0.8 * v, 0.5 * v + 0.1], axis=1)


def _diffuse_reference(ctx):
    f_d = brdf.eval_diffuse(ctx.albedo[0], ctx.metallic[0])

    def f(d):
        return _smooth_light(np.zeros((d.shape[0], 3)), d) * (
            f_d[None] * np.maximum(d[:, 2], 0.0)[:, None]
        )

    return hemisphere_quadrature(f, 512, 512)


def test_diffuse_mis_matches_quadrature_and_single_sampler(rng):
    ref = _diffuse_reference(_ctx(1))
    runs = 100
    grid = tensorgrid.VMGrid.create(2, 4, [-1, -1, -1], [1, 1, 1], 0.1, rng)
    fl = flowmod.create_flow(grid.feature_dim + 3, rng, n_bins=8)
    for layer in fl.layers:
        layer.net.weights[-1] = rng.normal(0, 0.2, size=layer.net.weights[-1].shape)
    snap = flowmod.snapshot(fl, grid, 0)

    ctx = _ctx(runs)
    cfg_c = SamplerConfig(diffuse="cosine", n_d_cos=64)
    cfg_m = SamplerConfig(diffuse="mis", n_d_flow=32, n_d_cos=32)
    out_c = estimate_diffuse(ctx, _smooth_light, cfg_c, _streams(runs, seed=3))
    out_m = estimate_diffuse(ctx, _smooth_light, cfg_m, _streams(runs, seed=4), diffuse_flow=snap)
    for out in (out_c, out_m):
        mean = out.rgb.mean(axis=0)
        se = out.rgb.std(axis=0) / np.sqrt(runs)
        assert np.all(np.abs(mean - ref) < 3 * np.maximum(se, 1e-9))
    # and the two estimators agree with each other within combined errors
    diff = out_c.rgb.mean(axis=0) - out_m.rgb.mean(axis=0)
    se = np.sqrt(out_c.rgb.var(axis=0) / runs + out_m.rgb.var(axis=0) / runs)
    assert np.all(np.abs(diff) < 3 * np.maximum(se, 1e-9))


def test_mis_weights_sum_to_one(rng):
    # balance-heuristic weights at the same direction sum to 1 across strata
    n_f, n_c = 16, 48
    q_f = rng.uniform(0.01, 2.0, 100)
    q_c = rng.uniform(0.01, 2.0, 100)
    w_f = n_f * q_f / (n_f * q_f + n_c * q_c)
    w_c = n_c * q_c / (n_f * q_f + n_c * q_c)
    assert np.allclose(w_f + w_c, 1.0)


# -- specular estimator ---------------------------------------------------------


def test_specular_zero_radiance(rng):
    n = 8
    ctx = _ctx(n, roughness=0.3)
    cfg = SamplerConfig(specular="ggx", n_s=16)
    out = estimate_specular(ctx, lambda x, w: np.zeros((x.shape[0], 3)), cfg, _streams(n))
    assert np.all(out.rgb == 0.0)
    assert np.all(out.supp_var == 0.0)
    assert np.all(out.std_var == 0.0)


def test_specular_mirror_limit(rng):
    # roughness at the floor: the estimate approaches F * L(reflect(w_o, n))
    n = 200
    ctx = _ctx(n, albedo=(1.0, 1.0, 1.0), metallic=1.0, roughness=0.01)
    cfg = SamplerConfig(specular="ggx", n_s=64)
    out = estimate_specular(ctx, _smooth_light, cfg, _streams(n, seed=5))
    w_r = geom.reflect(ctx.w_o[:1], ctx.frame.normal[:1])
    cos_o = geom.dot(ctx.w_o[0], ctx.frame.normal[0])
    f = brdf.fresnel_schlick(np.array([cos_o]), brdf.fresnel_f0(np.ones((1, 3)), np.ones(1)))
    expected = f[0] * _smooth_light(np.zeros((1, 3)), w_r)[0]
    got = out.rgb.mean(axis=0)
    assert np.all(np.abs(got / expected - 1.0) < 0.1)


def test_specular_matches_quadrature(rng):
    runs = 100
    ctx = _ctx(runs, albedo=(0.9, 0.7, 0.5), metallic=0.8, roughness=0.4)

    def f(d):
        fs = brdf.eval_specular(
            d, ctx.w_o[:1], ctx.frame.normal[:1], ctx.albedo[:1],
            ctx.metallic[:1], ctx.roughness[:1],
        )
        return _smooth_light(np.zeros((d.shape[0], 3)), d) * fs * np.maximum(d[:, 2], 0.0)[:, None]

    ref = hemisphere_quadrature(f, 512, 512)
    cfg = SamplerConfig(specular="ggx", n_s=64)
    out = estimate_specular(ctx, _smooth_light, cfg, _streams(runs, seed=6))
    mean = out.rgb.mean(axis=0)
    se = out.rgb.std(axis=0) / np.sqrt(runs)
    assert np.all(np.abs(mean - ref) < 3 * se)


def test_specular_flow_sampler_unbiased(rng):
    runs = 100
    ctx = _ctx(runs, albedo=(0.9, 0.7, 0.5), metallic=0.8, roughness=0.4)
    grid = tensorgrid.VMGrid.create(2, 4, [-1, -1, -1], [1, 1, 1], 0.1, rng)
    fl = flowmod.create_flow(grid.feature_dim + 3, rng, n_bins=8, domain=flowmod.DOMAIN_HALF)
    for layer in fl.layers:
        layer.net.weights[-1] = rng.normal(0, 0.2, size=layer.net.weights[-1].shape)
    snap = flowmod.snapshot(fl, grid, 0)

    def f(d):
        fs = brdf.eval_specular(
            d, ctx.w_o[:1], ctx.frame.normal[:1], ctx.albedo[:1],
            ctx.metallic[:1], ctx.roughness[:1],
        )
        return _smooth_light(np.zeros((d.shape[0], 3)), d) * fs * np.maximum(d[:, 2], 0.0)[:, None]

    ref = hemisphere_quadrature(f, 512, 512)
    cfg = SamplerConfig(specular="flow", n_s=128)
    out = estimate_specular(ctx, _smooth_light, cfg, _streams(runs, seed=8), specular_flow=snap)
    mean = out.rgb.mean(axis=0)
    se = out.rgb.std(axis=0) / np.sqrt(runs)
    assert np.all(np.abs(mean - ref) < 3 * se)


def test_combine():
    a = RadianceEstimate(np.array([[1.0, 0.0, 2.0]]), np.array([0.1]), np.array([0.2]), 8)
    b = RadianceEstimate(np.array([[0.5, 1.0, 0.0]]), np.array([0.3]), np.array([0.1]), 4)
    c = combine(a, b)
    assert np.allclose(c.rgb, [[1.5, 1.0, 2.0]])
    assert c.supp_var[0] == pytest.approx(0.4)
    assert c.std_var[0] == pytest.approx(0.3)
    assert c.n_samples == 12


def test_combine_zero_specular_passthrough():
    d = RadianceEstimate(np.array([[0.3, 0.2, 0.1]]), np.array([0.05]), np.array([0.01]), 16)
    z = RadianceEstimate(np.zeros((1, 3)), np.zeros(1), np.zeros(1), 4)
    c = combine(d, z)
    assert np.array_equal(c.rgb, d.rgb)
    assert c.supp_var[0] == d.supp_var[0]
