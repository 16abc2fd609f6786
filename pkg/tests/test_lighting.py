import numpy as np
import pytest

from flowtrace import geom, lighting, nn, pfm
from flowtrace.geom import Geometry
from flowtrace.lighting import EnvMap, IndirectField, env_lookup

from conftest import hemisphere_quadrature, sphere_quadrature


def test_constant_map_everywhere(rng):
    env = EnvMap.constant([0.3, 0.7, 1.1])
    w = geom.normalize(rng.normal(size=(500, 3)))
    vals = env_lookup(env, w)
    assert np.all(vals == np.array([0.3, 0.7, 1.1]))


def test_pole_maps_to_top_row(rng):
    tex = rng.uniform(0.1, 1.0, (8, 16, 3))
    tex[0] = 5.0  # uniform top row so azimuth does not matter
    env = EnvMap.from_texels(tex)
    vals = env_lookup(env, np.array([[0.0, 0.0, 1.0]]))
    assert np.allclose(vals, 5.0)


def test_constant_map_integral_is_4pi():
    env = EnvMap.constant([1.0, 1.0, 1.0])
    assert np.allclose(lighting.env_integral(env), 4 * np.pi, rtol=1e-2)
    # quadrature agrees
    total = sphere_quadrature(lambda d: env_lookup(env, d)[:, 0], 128, 128)
    assert total == pytest.approx(4 * np.pi, rel=1e-2)


def test_incident_radiance_unoccluded_equals_env(rng):
    env = EnvMap.from_texels(rng.uniform(0.2, 2.0, (8, 16, 3)))
    geo = Geometry()
    w = geom.normalize(rng.normal(size=(100, 3)))
    x = np.zeros((100, 3))
    out = lighting.incident_radiance(w, x, geo, env)
    assert np.array_equal(out, env_lookup(env, w))


def test_incident_radiance_occluded_is_zero():
    env = EnvMap.constant([1.0, 1.0, 1.0])
    geo = Geometry(
        plane_point=np.array([[0.0, 0.0, 1.0]]),
        plane_normal=np.array([[0.0, 0.0, 1.0]]),
        material_id=np.zeros(1, dtype=np.int32),
    )
    out = lighting.incident_radiance(
        np.array([[0.0, 0.0, 1.0]]), np.zeros((1, 3)), geo, env
    )
    assert np.all(out == 0.0)


def test_shadowed_point_receives_less():
    env = EnvMap.constant([1.0, 1.0, 1.0])
    geo = Geometry(
        sphere_center=np.array([[0.0, 0.0, 1.5]]),
        sphere_radius=np.array([0.9]),
        material_id=np.zeros(1, dtype=np.int32),
    )

    def integrand(point):
        def f(d):
            return lighting.incident_radiance(d, np.tile(point, (d.shape[0], 1)), geo, env)[:, 0]
        return hemisphere_quadrature(f, 64, 64)

    shadowed = integrand(np.array([0.0, 0.0, 0.0]))
    open_sky = integrand(np.array([10.0, 0.0, 0.0]))
    assert shadowed < open_sky


def test_learnable_map_nonnegative(rng):
    env = EnvMap.from_texels(rng.uniform(0.0, 2.0, (4, 8, 3)), learnable=True)
    env.raw -= 10.0  # push preactivations very negative
    assert np.all(env.texels >= 0.0)


def test_indirect_zero_init_is_log2(rng):
    field = IndirectField(rng, enabled=True)
    x = rng.uniform(-1, 1, (10, 3))
    w = geom.normalize(rng.normal(size=(10, 3)))
    assert np.allclose(field.eval(x, w), np.log(2.0))


def test_indirect_finite_sweep(rng):
    field = IndirectField(rng, enabled=True)
    field.mlp.weights[-1] = rng.normal(0, 0.5, size=field.mlp.weights[-1].shape)
    x = rng.uniform(-2, 2, (10_000, 3))
    w = geom.normalize(rng.normal(size=(10_000, 3)))
    out = field.eval(x, w)
    assert np.all(np.isfinite(out)) and np.all(out >= 0.0)


def test_pfm_roundtrip_bit_exact(rng, tmp_path):
    img = rng.uniform(0, 10, (7, 5, 3)).astype(np.float32)
    path = tmp_path / "img.pfm"
    pfm.write_pfm(path, img)
    back = pfm.read_pfm(path)
    assert np.array_equal(back, img)


def test_ppm_preview(tmp_path):
    img = np.linspace(0, 2, 4 * 3 * 3).reshape(4, 3, 3)
    pfm.write_ppm(tmp_path / "img.ppm", img)
    raw = (tmp_path / "img.ppm").read_bytes()
    assert raw.startswith(b"P6\n3 4\n255\n")
    assert len(raw) == len(b"P6\n3 4\n255\n") + 4 * 3 * 3


def test_psnr_examples():
    a = np.zeros((4, 4, 3))
    assert pfm.psnr(a, a) == np.inf
    # post-tonemap difference of 0.1 -> mse 0.01 -> 20 dB
    b = np.full((4, 4, 3), srgb_inv(0.1))
    assert pfm.psnr(a, b) == pytest.approx(20.0, abs=1e-6)
    # post-tonemap difference of 0.5 -> 10 log10(4) = 6.02 dB
    c = np.full((4, 4, 3), srgb_inv(0.5))
    assert pfm.psnr(a, c) == pytest.approx(10 * np.log10(4.0), abs=1e-6)


def srgb_inv(y):
    if y <= 0.04045:
        return y / 12.92
    return ((y + 0.055) / 1.055) ** 2.4


def test_envmap_from_lobes_positive():
    env = lighting.envmap_from_lobes(
        16, 32, [([0, 0, 1], [2.0, 1.0, 0.5], 30.0), ([1, 0, 0], [0.5, 1.5, 1.0], 10.0)]
    )
    assert np.all(env.texels > 0.0)
    # brightest row should be near the +z pole for the sharp lobe
    lum = env.texels.sum(axis=2)
    assert lum[0].max() > lum[-1].max()
