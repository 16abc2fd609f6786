"""Vector-Matrix tensor-decomposed feature grids over the scene bounding box.

Per axis the grid holds a component vector over that axis and a component
matrix over the complementary plane; a query multiplies the interpolated
vector and matrix samples elementwise and concatenates the three per-axis
products into a feature of length 3K. Queries outside the box clamp to it.

Storage layout puts the grid index first (vectors (R, K), matrices (R, R, K))
so scatter-accumulation in the backward pass adds whole K-rows at once.
"""

from dataclasses import dataclass

import numpy as np

from flowtrace._backend import njit, use_numba

# complementary plane (b, c) for each vector axis a
_PLANES = ((1, 2), (0, 2), (0, 1))


@dataclass
class VMGrid:
    n_components: int
    resolution: int
    box_min: np.ndarray  # (3,)
    box_max: np.ndarray  # (3,)
    vectors: list  # 3 arrays (R, K)
    matrices: list  # 3 arrays (R, R, K)

    @classmethod
    def create(
        cls,
        n_components: int,
        resolution: int,
        box_min,
        box_max,
        init_std: float,
        rng: np.random.Generator,
    ) -> "VMGrid":
        k, r = n_components, resolution
        vectors = [rng.normal(0.0, init_std, size=(r, k)) for _ in range(3)]
        matrices = [rng.normal(0.0, init_std, size=(r, r, k)) for _ in range(3)]
        return cls(
            n_components=k,
            resolution=r,
            box_min=np.asarray(box_min, dtype=np.float64),
            box_max=np.asarray(box_max, dtype=np.float64),
            vectors=vectors,
            matrices=matrices,
        )

    @property
    def feature_dim(self) -> int:
        return 3 * self.n_components

    def _grid_coords(self, x: np.ndarray):
        """Map points into grid space: lower cell index (N, 3) and the
        in-cell fraction (N, 3), clamped to the box."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        t = (x - self.box_min) / (self.box_max - self.box_min) * (self.resolution - 1)
        t = np.clip(t, 0.0, self.resolution - 1.0)
        i0 = np.minimum(t.astype(np.int64), self.resolution - 2)
        frac = t - i0
        return i0, frac

    def named_params(self, prefix: str) -> dict:
        out = {}
        for a, name in enumerate("xyz"):
            out[f"{prefix}.v{name}"] = self.vectors[a]
            out[f"{prefix}.m{name}"] = self.matrices[a]
        return out

    def load_named(self, prefix: str, params: dict):
        for a, name in enumerate("xyz"):
            self.vectors[a] = np.array(params[f"{prefix}.v{name}"], dtype=np.float64)
            self.matrices[a] = np.array(params[f"{prefix}.m{name}"], dtype=np.float64)


def _query_numpy(grid: VMGrid, i0, frac):
    n = i0.shape[0]
    feat = np.empty((n, grid.feature_dim))
    for a in range(3):
        b, c = _PLANES[a]
        v = grid.vectors[a]
        m = grid.matrices[a]
        ia, fa = i0[:, a], frac[:, a]
        vv = v[ia] * (1.0 - fa)[:, None] + v[ia + 1] * fa[:, None]
        ib, fb = i0[:, b], frac[:, b]
        ic, fc = i0[:, c], frac[:, c]
        w00 = (1.0 - fb) * (1.0 - fc)
        w01 = (1.0 - fb) * fc
        w10 = fb * (1.0 - fc)
        w11 = fb * fc
        mm = (
            m[ib, ic] * w00[:, None]
            + m[ib, ic + 1] * w01[:, None]
            + m[ib + 1, ic] * w10[:, None]
            + m[ib + 1, ic + 1] * w11[:, None]
        )
        feat[:, a * grid.n_components : (a + 1) * grid.n_components] = vv * mm
    return feat


@njit
def _query_axis_numba(v, m, ia, fa, ib, fb, ic, fc, out):  # pragma: no cover
    n = ia.shape[0]
    k = v.shape[1]
    for i in range(n):
        a0 = ia[i]
        w1 = fa[i]
        w0 = 1.0 - w1
        b0, c0 = ib[i], ic[i]
        wb1, wc1 = fb[i], fc[i]
        wb0, wc0 = 1.0 - wb1, 1.0 - wc1
        for j in range(k):
            vv = v[a0, j] * w0 + v[a0 + 1, j] * w1
            mm = (
                m[b0, c0, j] * wb0 * wc0
                + m[b0, c0 + 1, j] * wb0 * wc1
                + m[b0 + 1, c0, j] * wb1 * wc0
                + m[b0 + 1, c0 + 1, j] * wb1 * wc1
            )
            out[i, j] = vv * mm


def feature_query(grid: VMGrid, x: np.ndarray) -> np.ndarray:
    """Interpolated VM features at points x: (N, 3) -> (N, 3K)."""
    i0, frac = grid._grid_coords(x)
    if not use_numba():
        return _query_numpy(grid, i0, frac)
    n = i0.shape[0]
    feat = np.empty((n, grid.feature_dim))
    for a in range(3):
        b, c = _PLANES[a]
        _query_axis_numba(
            grid.vectors[a],
            grid.matrices[a],
            i0[:, a],
            frac[:, a],
            i0[:, b],
            frac[:, b],
            i0[:, c],
            frac[:, c],
            feat[:, a * grid.n_components : (a + 1) * grid.n_components],
        )
    return feat


@njit
def _backward_axis_numba(v, m, ia, fa, ib, fb, ic, fc, up, gv, gm):  # pragma: no cover
    n = ia.shape[0]
    k = v.shape[1]
    for i in range(n):
        a0 = ia[i]
        w1 = fa[i]
        w0 = 1.0 - w1
        b0, c0 = ib[i], ic[i]
        wb1, wc1 = fb[i], fc[i]
        wb0, wc0 = 1.0 - wb1, 1.0 - wc1
        for j in range(k):
            vv = v[a0, j] * w0 + v[a0 + 1, j] * w1
            mm = (
                m[b0, c0, j] * wb0 * wc0
                + m[b0, c0 + 1, j] * wb0 * wc1
                + m[b0 + 1, c0, j] * wb1 * wc0
                + m[b0 + 1, c0 + 1, j] * wb1 * wc1
            )
            g = up[i, j]
            gv[a0, j] += g * mm * w0
            gv[a0 + 1, j] += g * mm * w1
            gvm = g * vv
            gm[b0, c0, j] += gvm * wb0 * wc0
            gm[b0, c0 + 1, j] += gvm * wb0 * wc1
            gm[b0 + 1, c0, j] += gvm * wb1 * wc0
            gm[b0 + 1, c0 + 1, j] += gvm * wb1 * wc1


def feature_query_backward(
    grid: VMGrid, x: np.ndarray, upstream: np.ndarray, prefix: str = "grid"
) -> dict:
    """Accumulate d(upstream . feature)/d(grid entries).

    Only the interpolation stencil of each query point receives gradient:
    2 vector entries and 4 matrix entries per axis per point.
    Returns arrays keyed like named_params(prefix).
    """
    i0, frac = grid._grid_coords(x)
    upstream = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    out = {}
    for a, name in enumerate("xyz"):
        b, c = _PLANES[a]
        v = grid.vectors[a]
        m = grid.matrices[a]
        gv = np.zeros_like(v)
        gm = np.zeros_like(m)
        up = upstream[:, a * grid.n_components : (a + 1) * grid.n_components]
        ia, fa = i0[:, a], frac[:, a]
        ib, fb = i0[:, b], frac[:, b]
        ic, fc = i0[:, c], frac[:, c]
        if use_numba():
            _backward_axis_numba(
                v, m, ia, fa, ib, fb, ic, fc, np.ascontiguousarray(up), gv, gm
            )
        else:
            vv = v[ia] * (1.0 - fa)[:, None] + v[ia + 1] * fa[:, None]
            w00 = (1.0 - fb) * (1.0 - fc)
            w01 = (1.0 - fb) * fc
            w10 = fb * (1.0 - fc)
            w11 = fb * fc
            mm = (
                m[ib, ic] * w00[:, None]
                + m[ib, ic + 1] * w01[:, None]
                + m[ib + 1, ic] * w10[:, None]
                + m[ib + 1, ic + 1] * w11[:, None]
            )
            gmm = up * mm
            np.add.at(gv, ia, gmm * (1.0 - fa)[:, None])
            np.add.at(gv, ia + 1, gmm * fa[:, None])
            gvv = up * vv
            np.add.at(gm, (ib, ic), gvv * w00[:, None])
            np.add.at(gm, (ib, ic + 1), gvv * w01[:, None])
            np.add.at(gm, (ib + 1, ic), gvv * w10[:, None])
            np.add.at(gm, (ib + 1, ic + 1), gvv * w11[:, None])
        out[f"{prefix}.v{name}"] = gv
        out[f"{prefix}.m{name}"] = gm
    return out
