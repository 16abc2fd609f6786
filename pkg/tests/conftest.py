"""Shared fixtures and quadrature oracles for the test suite.

The quadrature helpers integrate over direction space with uniform grids in
(theta, phi); they are deliberately independent of the sampling/warp code
they are used to check.
"""

import numpy as np
import pytest

from flowtrace import geom


def hemisphere_quadrature(f, n_theta=512, n_phi=512):
    """Midpoint-rule integral of f(dirs) over the z-up hemisphere.

    f maps (M, 3) world directions to (M,) or (M, C) values; returns the
    integral with the sin(theta) area factor applied.
    """
    theta = (np.arange(n_theta) + 0.5) / n_theta * (np.pi / 2.0)
    phi = (np.arange(n_phi) + 0.5) / n_phi * (2.0 * np.pi)
    t, p = np.meshgrid(theta, phi, indexing="ij")
    dirs = np.stack(
        [np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)], axis=-1
    ).reshape(-1, 3)
    vals = np.asarray(f(dirs))
    w = (np.sin(t).reshape(-1) * (np.pi / 2.0 / n_theta) * (2.0 * np.pi / n_phi))
    if vals.ndim == 1:
        return float(np.sum(vals * w))
    return np.sum(vals * w[:, None], axis=0)


def sphere_quadrature(f, n_theta=512, n_phi=512):
    theta = (np.arange(n_theta) + 0.5) / n_theta * np.pi
    phi = (np.arange(n_phi) + 0.5) / n_phi * (2.0 * np.pi)
    t, p = np.meshgrid(theta, phi, indexing="ij")
    dirs = np.stack(
        [np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)], axis=-1
    ).reshape(-1, 3)
    vals = np.asarray(f(dirs))
    w = np.sin(t).reshape(-1) * (np.pi / n_theta) * (2.0 * np.pi / n_phi)
    if vals.ndim == 1:
        return float(np.sum(vals * w))
    return np.sum(vals * w[:, None], axis=0)


def random_upper_directions(rng, n, n_axis=None):
    """Unit directions strictly above the z (or given) axis."""
    d = geom.normalize(rng.normal(size=(n, 3)))
    axis = np.array([0.0, 0.0, 1.0]) if n_axis is None else n_axis
    flip = d @ axis < 0
    d[flip] -= 2.0 * np.outer(d[flip] @ axis, axis)
    grazing = d @ axis < 1e-3
    d[grazing] = axis
    return d


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


GLOSSY_SPHERE_SCENE = """
[scene]
seed = 7
name = glossy-sphere

[envmap]
width = 64
height = 32
learnable = false
ambient = 0.08 0.08 0.1

[lobe a]
direction = 0.3 0.4 0.85
color = 6 5 4
sharpness = 40

[lobe b]
direction = -0.7 0.2 0.4
color = 1.5 3.5 1.0
sharpness = 25

[lobe c]
direction = 0.5 -0.6 0.2
color = 1.0 0.8 3.0
sharpness = 15

[material shiny]
albedo = 0.8 0.6 0.3
metallic = 0.9
roughness = 0.3

[sphere main]
center = 0 0 0
radius = 1.0
material = shiny

[camera front]
position = 0 -3.2 0.6
look_at = 0 0 0
up = 0 0 1
vfov = 38
width = 64
height = 64
"""
