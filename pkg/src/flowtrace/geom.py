"""Vector math, shading frames, unit-square/hemisphere warps, and analytic
ray intersection against sphere/plane scenes.

Directions are float64 arrays of shape (..., 3). All functions are pure and
batched; scalar use is the (3,) / () special case.
"""

from dataclasses import dataclass, field

import numpy as np

from flowtrace._backend import njit, use_numba
from flowtrace.errors import BelowHorizon

SQUARE_EPS = 1e-6
SHADOW_EPS = 1e-4
TWO_PI = 2.0 * np.pi


def dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum(a * b, axis=-1)


def normalize(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def reflect(w_o: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Mirror w_o about n: 2(w_o.n)n - w_o. Caller guarantees w_o.n > 0."""
    return 2.0 * dot(w_o, n)[..., None] * n - w_o


@dataclass
class Frame:
    """Right-handed orthonormal shading frame; each field is (..., 3)."""

    tangent: np.ndarray
    bitangent: np.ndarray
    normal: np.ndarray

    def to_world(self, local: np.ndarray) -> np.ndarray:
        return (
            local[..., 0:1] * self.tangent
            + local[..., 1:2] * self.bitangent
            + local[..., 2:3] * self.normal
        )

    def to_local(self, world: np.ndarray) -> np.ndarray:
        return np.stack(
            [dot(world, self.tangent), dot(world, self.bitangent), dot(world, self.normal)],
            axis=-1,
        )


def build_frame(n: np.ndarray) -> Frame:
    """Branchless orthonormal basis about n (sign-flip construction), so the
    frame is deterministic and has no degenerate pole branch."""
    n = np.asarray(n, dtype=np.float64)
    s = np.where(n[..., 2] >= 0.0, 1.0, -1.0)
    a = -1.0 / (s + n[..., 2])
    b = n[..., 0] * n[..., 1] * a
    t = np.stack(
        [1.0 + s * n[..., 0] ** 2 * a, s * b, -s * n[..., 0]],
        axis=-1,
    )
    bt = np.stack(
        [b, s + n[..., 1] ** 2 * a, -n[..., 1]],
        axis=-1,
    )
    return Frame(t, bt, n)


def clamp_square(u: np.ndarray, eps: float = SQUARE_EPS) -> np.ndarray:
    """Clamp square coordinates into the open interval (eps, 1-eps)."""
    return np.clip(u, eps, 1.0 - eps)


def square_to_dir(u: np.ndarray, frame: Frame) -> tuple[np.ndarray, float]:
    """Cylindrical equal-area warp of the unit square onto the hemisphere
    about frame.normal: z = u1, phi = 2*pi*u2.

    Returns (world directions, jacobian) with the constant area jacobian
    d(omega)/d(u) = 2*pi, so a density q(u) on the square corresponds to
    q(u)/(2*pi) per steradian.
    """
    u = np.asarray(u, dtype=np.float64)
    z = u[..., 0]
    phi = TWO_PI * u[..., 1]
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    local = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
    return frame.to_world(local), TWO_PI


def dir_to_square(d: np.ndarray, frame: Frame) -> np.ndarray:
    """Inverse of square_to_dir with boundary clamping.

    Raises BelowHorizon if any direction has d.normal <= 0.
    """
    local = frame.to_local(np.asarray(d, dtype=np.float64))
    if np.any(local[..., 2] <= 0.0):
        raise BelowHorizon("direction below the shading-frame horizon")
    phi = np.arctan2(local[..., 1], local[..., 0])
    u2 = phi / TWO_PI
    u2 = u2 - np.floor(u2)
    u = np.stack([local[..., 2], u2], axis=-1)
    return clamp_square(u)


@dataclass
class Rays:
    origin: np.ndarray  # (N, 3)
    direction: np.ndarray  # (N, 3), unit
    t_min: float = 0.0
    t_max: float = np.inf


@dataclass
class SurfaceHits:
    """Struct-of-arrays hit record; rows with valid=False are misses."""

    valid: np.ndarray  # (N,) bool
    t: np.ndarray  # (N,)
    position: np.ndarray  # (N, 3)
    normal: np.ndarray  # (N, 3)
    prim_id: np.ndarray  # (N,) int32, spheres first then planes


@dataclass
class Geometry:
    """Analytic scene geometry: spheres then infinite planes.

    prim ids index spheres 0..S-1 and planes S..S+P-1; material_id maps each
    primitive to its material slot.
    """

    sphere_center: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    sphere_radius: np.ndarray = field(default_factory=lambda: np.zeros((0,)))
    plane_point: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    plane_normal: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    material_id: np.ndarray = field(default_factory=lambda: np.zeros((0,), dtype=np.int32))

    @property
    def n_spheres(self) -> int:
        return self.sphere_center.shape[0]

    @property
    def n_prims(self) -> int:
        return self.sphere_center.shape[0] + self.plane_point.shape[0]


@njit
def _trace_numba(orig, dirs, t_min, t_max, sc, sr, pp, pn, any_hit):  # pragma: no cover
    n = orig.shape[0]
    ns = sc.shape[0]
    npl = pp.shape[0]
    t_best = np.full(n, np.inf)
    pid = np.full(n, -1, dtype=np.int32)
    for i in range(n):
        ox, oy, oz = orig[i, 0], orig[i, 1], orig[i, 2]
        dx, dy, dz = dirs[i, 0], dirs[i, 1], dirs[i, 2]
        for s in range(ns):
            cx = ox - sc[s, 0]
            cy = oy - sc[s, 1]
            cz = oz - sc[s, 2]
            b = dx * cx + dy * cy + dz * cz
            c = cx * cx + cy * cy + cz * cz - sr[s] * sr[s]
            disc = b * b - c
            if disc < 0.0:
                continue
            sq = np.sqrt(disc)
            t0 = -b - sq
            t1 = -b + sq
            t = t0 if t0 >= t_min else t1
            if t_min <= t <= t_max and t < t_best[i]:
                t_best[i] = t
                pid[i] = s
                if any_hit:
                    break
        if any_hit and pid[i] >= 0:
            continue
        for p in range(npl):
            denom = dx * pn[p, 0] + dy * pn[p, 1] + dz * pn[p, 2]
            if abs(denom) < 1e-12:
                continue
            t = (
                (pp[p, 0] - ox) * pn[p, 0]
                + (pp[p, 1] - oy) * pn[p, 1]
                + (pp[p, 2] - oz) * pn[p, 2]
            ) / denom
            if t_min <= t <= t_max and t < t_best[i]:
                t_best[i] = t
                pid[i] = ns + p
                if any_hit:
                    break
    return t_best, pid


def _trace_numpy(orig, dirs, t_min, t_max, sc, sr, pp, pn, any_hit):
    n = orig.shape[0]
    t_best = np.full(n, np.inf)
    pid = np.full(n, -1, dtype=np.int32)
    if sc.shape[0]:
        oc = orig[:, None, :] - sc[None, :, :]  # (N, S, 3)
        b = np.sum(dirs[:, None, :] * oc, axis=-1)
        c = np.sum(oc * oc, axis=-1) - sr[None, :] ** 2
        disc = b * b - c
        ok = disc >= 0.0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t0 = -b - sq
        t1 = -b + sq
        t = np.where(t0 >= t_min, t0, t1)
        t = np.where(ok & (t >= t_min) & (t <= t_max), t, np.inf)
        s_idx = np.argmin(t, axis=1)
        s_t = t[np.arange(n), s_idx]
        better = s_t < t_best
        t_best = np.where(better, s_t, t_best)
        pid = np.where(better, s_idx.astype(np.int32), pid)
    if pp.shape[0]:
        denom = dirs @ pn.T  # (N, P)
        num = np.sum((pp[None, :, :] - orig[:, None, :]) * pn[None, :, :], axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / denom
        t = np.where((np.abs(denom) > 1e-12) & (t >= t_min) & (t <= t_max), t, np.inf)
        p_idx = np.argmin(t, axis=1)
        p_t = t[np.arange(n), p_idx]
        better = p_t < t_best
        t_best = np.where(better, p_t, t_best)
        pid = np.where(better, (sc.shape[0] + p_idx).astype(np.int32), pid)
    return t_best, pid


def _trace(orig, dirs, t_min, t_max, geo: Geometry, any_hit: bool):
    args = (
        np.ascontiguousarray(orig),
        np.ascontiguousarray(dirs),
        float(t_min),
        float(t_max),
        np.ascontiguousarray(geo.sphere_center),
        np.ascontiguousarray(geo.sphere_radius),
        np.ascontiguousarray(geo.plane_point),
        np.ascontiguousarray(geo.plane_normal),
        any_hit,
    )
    if use_numba():
        return _trace_numba(*args)
    return _trace_numpy(*args)


def intersect(rays: Rays, geo: Geometry) -> SurfaceHits:
    """Nearest hit per ray among all spheres and planes, or a miss.

    Sphere normals point outward; plane normals are flipped to face the ray
    origin side.
    """
    orig = np.atleast_2d(rays.origin).astype(np.float64)
    dirs = np.atleast_2d(rays.direction).astype(np.float64)
    t, pid = _trace(orig, dirs, rays.t_min, rays.t_max, geo, any_hit=False)
    valid = pid >= 0
    t_safe = np.where(valid, t, 0.0)
    pos = orig + t_safe[:, None] * dirs
    normal = np.zeros_like(pos)
    ns = geo.n_spheres
    is_sphere = valid & (pid < ns)
    if np.any(is_sphere):
        sid = pid[is_sphere]
        normal[is_sphere] = (pos[is_sphere] - geo.sphere_center[sid]) / geo.sphere_radius[
            sid, None
        ]
    is_plane = valid & (pid >= ns)
    if np.any(is_plane):
        pn = geo.plane_normal[pid[is_plane] - ns]
        flip = np.where(dot(dirs[is_plane], pn) > 0.0, -1.0, 1.0)
        normal[is_plane] = pn * flip[:, None]
    return SurfaceHits(valid=valid, t=t, position=pos, normal=normal, prim_id=pid)


def occluded(x: np.ndarray, w: np.ndarray, geo: Geometry) -> np.ndarray:
    """True where the shadow ray from x along w hits any primitive.

    Starts at t = SHADOW_EPS to avoid self-intersection (scenes are unit
    scale).
    """
    x = np.atleast_2d(x).astype(np.float64)
    w = np.atleast_2d(w).astype(np.float64)
    if geo.n_prims == 0:
        return np.zeros(x.shape[0], dtype=bool)
    _, pid = _trace(x, w, SHADOW_EPS, np.inf, geo, any_hit=True)
    return pid >= 0
