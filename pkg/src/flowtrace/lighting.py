"""Incident radiance: a lat-long environment map for direct light (optionally
learnable), binary ray-traced visibility, and a small learned indirect field.

The v texture coordinate runs from the world +z pole (v = 0) to -z (v = 1);
u wraps in azimuth. Learnable maps store texels in softplus preactivation so
optimization can never produce negative radiance.
"""

import numpy as np

from flowtrace import geom, nn
from flowtrace.geom import Geometry

PE_OCTAVES_INDIRECT = 6


class EnvMap:
    """Equirectangular radiance map.

    `raw` holds linear radiance directly when not learnable, softplus
    preactivations otherwise.
    """

    def __init__(self, raw: np.ndarray, learnable: bool):
        raw = np.asarray(raw, dtype=np.float64)
        if raw.ndim != 3 or raw.shape[2] != 3 or raw.shape[0] < 2 or raw.shape[1] < 4:
            raise ValueError(f"bad envmap shape {raw.shape}")
        self.raw = raw
        self.learnable = bool(learnable)

    @classmethod
    def from_texels(cls, texels: np.ndarray, learnable: bool = False) -> "EnvMap":
        texels = np.maximum(np.asarray(texels, dtype=np.float64), 0.0)
        raw = nn.softplus_inv(texels) if learnable else texels
        return cls(raw, learnable)

    @classmethod
    def constant(cls, rgb, height: int = 32, width: int = 64, learnable: bool = False):
        tex = np.broadcast_to(np.asarray(rgb, dtype=np.float64), (height, width, 3))
        return cls.from_texels(np.array(tex), learnable)

    @property
    def height(self) -> int:
        return self.raw.shape[0]

    @property
    def width(self) -> int:
        return self.raw.shape[1]

    @property
    def texels(self) -> np.ndarray:
        return nn.softplus(self.raw) if self.learnable else self.raw

    def named_params(self, prefix: str) -> dict:
        return {f"{prefix}.raw": self.raw}

    def load_named(self, prefix: str, params: dict):
        self.raw = np.array(params[f"{prefix}.raw"], dtype=np.float64)


def _lookup_coords(env: EnvMap, w: np.ndarray):
    w = np.atleast_2d(np.asarray(w, dtype=np.float64))
    u = (np.arctan2(w[:, 1], w[:, 0]) + np.pi) / geom.TWO_PI
    v = np.arccos(np.clip(w[:, 2], -1.0, 1.0)) / np.pi
    fu = u * env.width - 0.5
    j0 = np.floor(fu).astype(np.int64)
    fu -= j0
    j0 %= env.width
    j1 = (j0 + 1) % env.width
    fv = np.clip(v * env.height - 0.5, 0.0, env.height - 1.0)
    i0 = np.minimum(fv.astype(np.int64), env.height - 2)
    fv -= i0
    i1 = i0 + 1
    idx = np.stack([i0 * env.width + j0, i0 * env.width + j1,
                    i1 * env.width + j0, i1 * env.width + j1], axis=1)
    wts = np.stack([(1 - fv) * (1 - fu), (1 - fv) * fu, fv * (1 - fu), fv * fu], axis=1)
    return idx, wts, fu, fv


def env_lookup(env: EnvMap, w: np.ndarray, aux: bool = False):
    """Bilinear radiance lookup; wraps in azimuth, clamps at the poles.

    Evaluated in lerp form so constant regions return bit-identical values.
    With aux=True also returns (flat texel indices (N, 4), weights (N, 4))
    for gradient scatter.
    """
    idx, wts, fu, fv = _lookup_coords(env, w)
    flat = env.texels.reshape(-1, 3)
    c00, c01, c10, c11 = flat[idx[:, 0]], flat[idx[:, 1]], flat[idx[:, 2]], flat[idx[:, 3]]
    top = c00 + fu[:, None] * (c01 - c00)
    bot = c10 + fu[:, None] * (c11 - c10)
    vals = top + fv[:, None] * (bot - top)
    if aux:
        return vals, idx, wts
    return vals


def env_lookup_backward(env: EnvMap, idx: np.ndarray, wts: np.ndarray,
                        upstream: np.ndarray, prefix: str = "env") -> dict:
    """Scatter d(upstream . radiance)/d(raw texels); chains the softplus
    when the map is learnable."""
    g = np.zeros_like(env.raw).reshape(-1, 3)
    np.add.at(g, idx.reshape(-1), (wts[..., None] * upstream[:, None, :]).reshape(-1, 3))
    g = g.reshape(env.raw.shape)
    if env.learnable:
        g *= nn.sigmoid(env.raw)
    return {f"{prefix}.raw": g}


def texel_solid_angles(height: int, width: int) -> np.ndarray:
    """Solid angle of each texel row, shape (height,)."""
    edges = np.linspace(0.0, np.pi, height + 1)
    return (np.cos(edges[:-1]) - np.cos(edges[1:])) * (geom.TWO_PI / width)


def env_integral(env: EnvMap) -> np.ndarray:
    """Solid-angle-weighted texel sum, i.e. total emitted radiance per channel."""
    w_row = texel_solid_angles(env.height, env.width)
    return np.einsum("h,hwc->c", w_row, env.texels)


def envmap_from_lobes(height: int, width: int, lobes, learnable: bool = False,
                      ambient=None) -> EnvMap:
    """Procedural smooth map: sum of exp(sharpness * (d . axis - 1)) lobes
    over an optional constant ambient floor.

    lobes is a list of (direction, rgb, sharpness).
    """
    v = (np.arange(height) + 0.5) / height * np.pi
    u = (np.arange(width) + 0.5) / width * geom.TWO_PI - np.pi
    theta, phi = np.meshgrid(v, u, indexing="ij")
    d = np.stack(
        [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=-1
    )
    tex = np.zeros((height, width, 3))
    if ambient is not None:
        tex += np.asarray(ambient, dtype=np.float64)
    for axis, rgb, sharp in lobes:
        axis = geom.normalize(np.asarray(axis, dtype=np.float64))
        tex += np.exp(sharp * (d @ axis - 1.0))[..., None] * np.asarray(rgb)
    return EnvMap.from_texels(tex, learnable)


class IndirectField:
    """Tiny MLP over (positional encoding of x, w_i) with a softplus output,
    so indirect radiance stays nonnegative. Disabled by default; single-bounce
    scenes cannot identify it."""

    def __init__(self, rng: np.random.Generator, enabled: bool = False, width: int = 64):
        in_dim = 3 + 6 * PE_OCTAVES_INDIRECT + 3
        self.mlp = nn.MLP((in_dim, width, width, 3), rng, zero_last=True)
        self.enabled = enabled

    def _inputs(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        pe = nn.positional_encoding(x, PE_OCTAVES_INDIRECT)
        return np.concatenate([pe, np.atleast_2d(w)], axis=-1)

    def eval(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        y, _ = self.mlp.forward(self._inputs(x, w))
        return nn.softplus(y)

    def eval_with_tape(self, x: np.ndarray, w: np.ndarray):
        y, tape = self.mlp.forward(self._inputs(x, w))
        return nn.softplus(y), (tape, y)

    def backward(self, aux, upstream: np.ndarray, prefix: str = "indirect") -> dict:
        tape, y = aux
        grads, _ = self.mlp.backward(tape, upstream * nn.sigmoid(y))
        return self.mlp.named_grads(prefix, grads)


def incident_radiance(
    w_i: np.ndarray,
    x: np.ndarray,
    geometry: Geometry,
    env: EnvMap,
    indirect: IndirectField | None = None,
) -> np.ndarray:
    """V(w_i, x) * L_dir(w_i) + L_ind(w_i, x); visibility via shadow rays."""
    w_i = np.atleast_2d(w_i)
    x = np.atleast_2d(x)
    vis = ~geom.occluded(x, w_i, geometry)
    out = env_lookup(env, w_i) * vis[:, None]
    if indirect is not None and indirect.enabled:
        out = out + indirect.eval(x, w_i)
    return out
