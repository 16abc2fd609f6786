"""Microfacet BRDF (diffuse + GGX specular) and the two pre-defined baseline
importance samplers (cosine-weighted and GGX half-vector).

Conventions: alpha = roughness^2, f0 = lerp(0.04, albedo, metallic),
separable Smith-Schlick geometry term. Material arrays broadcast against
direction batches; rgb values are (..., 3).
"""

from dataclasses import dataclass

import numpy as np

from flowtrace import geom
from flowtrace.errors import DegenerateHalfVector
from flowtrace.geom import Frame, dot, normalize, reflect

ROUGHNESS_FLOOR = 0.01
HALF_VECTOR_EPS = 1e-6


@dataclass
class Material:
    """Constant material record; components clamped to their valid ranges."""

    albedo: np.ndarray  # (3,) in [0, 1]
    metallic: float  # [0, 1]
    roughness: float  # [ROUGHNESS_FLOOR, 1]

    def __post_init__(self):
        self.albedo = np.clip(np.asarray(self.albedo, dtype=np.float64), 0.0, 1.0)
        self.metallic = float(np.clip(self.metallic, 0.0, 1.0))
        self.roughness = float(np.clip(self.roughness, ROUGHNESS_FLOOR, 1.0))


@dataclass
class DirSamples:
    """Batch of sampled directions with their PDF per steradian.

    Rows with valid=False carry no usable direction (e.g. GGX reflections
    below the horizon); estimators count them as zero-contribution samples.
    cos_over_pdf carries the analytic (n.w)/pdf ratio when the sampler knows
    it in closed form (cosine sampling: exactly pi), letting estimators
    cancel the cosine without rounding noise.
    """

    direction: np.ndarray  # (..., 3)
    pdf: np.ndarray  # (...,) > 0 where valid
    valid: np.ndarray  # (...,) bool
    cos_over_pdf: np.ndarray | None = None


def eval_diffuse(albedo: np.ndarray, metallic: np.ndarray) -> np.ndarray:
    """Lambertian diffuse lobe (1 - metallic) * albedo / pi."""
    metallic = np.asarray(metallic, dtype=np.float64)
    return (1.0 - metallic)[..., None] * np.asarray(albedo) / np.pi


def ggx_alpha(roughness: np.ndarray) -> np.ndarray:
    return np.asarray(roughness, dtype=np.float64) ** 2


def ggx_D(cos_nh: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Trowbridge-Reitz normal distribution; zero below the horizon."""
    cos_nh = np.asarray(cos_nh, dtype=np.float64)
    a2 = np.asarray(alpha, dtype=np.float64) ** 2
    t = cos_nh * cos_nh * (a2 - 1.0) + 1.0
    d = a2 / (np.pi * t * t)
    return np.where(cos_nh > 0.0, d, 0.0)


def fresnel_schlick(cos_theta: np.ndarray, f0: np.ndarray) -> np.ndarray:
    """f0 + (1 - f0)(1 - cos)^5, componentwise."""
    c = np.clip(np.asarray(cos_theta, dtype=np.float64), 0.0, 1.0)
    return f0 + (1.0 - f0) * (1.0 - c)[..., None] ** 5


def fresnel_f0(albedo: np.ndarray, metallic: np.ndarray) -> np.ndarray:
    metallic = np.asarray(metallic, dtype=np.float64)
    return 0.04 * (1.0 - metallic)[..., None] + np.asarray(albedo) * metallic[..., None]


def _g1(cos_nv: np.ndarray, k: np.ndarray) -> np.ndarray:
    return cos_nv / (cos_nv * (1.0 - k) + k)


def smith_G(cos_ni: np.ndarray, cos_no: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Separable Smith-Schlick-GGX shadowing/masking with k = alpha / 2."""
    k = np.asarray(alpha, dtype=np.float64) / 2.0
    return _g1(cos_ni, k) * _g1(cos_no, k)


def eval_specular(
    w_i: np.ndarray,
    w_o: np.ndarray,
    n: np.ndarray,
    albedo: np.ndarray,
    metallic: np.ndarray,
    roughness: np.ndarray,
) -> np.ndarray:
    """Microfacet specular lobe D*F*G / (4 cos_i cos_o); zero if either
    direction is below the horizon."""
    cos_i = dot(w_i, n)
    cos_o = dot(w_o, n)
    ok = (cos_i > 0.0) & (cos_o > 0.0)
    half_sum = w_i + w_o
    h = normalize(half_sum)
    alpha = ggx_alpha(roughness)
    d = ggx_D(dot(h, n), alpha)
    g = smith_G(np.maximum(cos_i, 1e-12), np.maximum(cos_o, 1e-12), alpha)
    # h.w_o == h.w_i == |w_i + w_o| / 2; this form is bitwise symmetric
    cos_half = 0.5 * np.linalg.norm(half_sum, axis=-1)
    f = fresnel_schlick(cos_half, fresnel_f0(albedo, metallic))
    denom = 4.0 * np.maximum(cos_i * cos_o, 1e-12)
    spec = (d * g / denom)[..., None] * f
    return np.where(ok[..., None], spec, 0.0)


def sample_cosine(u: np.ndarray, frame: Frame) -> DirSamples:
    """Cosine-weighted hemisphere sampler: z = sqrt(1 - u1), pdf = cos/pi."""
    u = np.asarray(u, dtype=np.float64)
    z = np.sqrt(1.0 - u[..., 0])
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    phi = geom.TWO_PI * u[..., 1]
    local = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
    d = frame.to_world(local)
    pdf = np.maximum(z, 1e-12) / np.pi
    return DirSamples(
        direction=d,
        pdf=pdf,
        valid=np.ones(z.shape, dtype=bool),
        cos_over_pdf=np.full(z.shape, np.pi),
    )


def cosine_pdf(w_i: np.ndarray, n: np.ndarray) -> np.ndarray:
    cos_i = dot(w_i, n)
    return np.where(cos_i > 0.0, cos_i / np.pi, 0.0)


def sample_ggx(
    u: np.ndarray,
    w_o: np.ndarray,
    frame: Frame,
    roughness: np.ndarray,
) -> DirSamples:
    """GGX NDF half-vector sampler, reflected into an incident direction.

    pdf(w_i) = D(h)(n.h) / (4 (h.w_o)). Samples whose reflection falls below
    the horizon (or with degenerate h.w_o) are flagged invalid.
    """
    u = np.asarray(u, dtype=np.float64)
    alpha = np.broadcast_to(ggx_alpha(roughness), u.shape[:-1]).astype(np.float64)
    a2 = alpha * alpha
    cos_h = np.sqrt((1.0 - u[..., 0]) / (1.0 + (a2 - 1.0) * u[..., 0]))
    sin_h = np.sqrt(np.maximum(1.0 - cos_h * cos_h, 0.0))
    phi = geom.TWO_PI * u[..., 1]
    local_h = np.stack([sin_h * np.cos(phi), sin_h * np.sin(phi), cos_h], axis=-1)
    h = frame.to_world(local_h)
    h_dot_o = dot(h, w_o)
    w_i = 2.0 * h_dot_o[..., None] * h - w_o
    cos_i = dot(w_i, frame.normal)
    valid = (cos_i > 0.0) & (h_dot_o > HALF_VECTOR_EPS)
    d = ggx_D(cos_h, alpha)
    pdf = np.where(valid, d * cos_h / np.maximum(4.0 * h_dot_o, 1e-12), 0.0)
    valid = valid & (pdf > 0.0)
    return DirSamples(direction=w_i, pdf=pdf, valid=valid)


def ggx_pdf(w_i: np.ndarray, w_o: np.ndarray, n: np.ndarray, roughness: np.ndarray) -> np.ndarray:
    """Density of sample_ggx at w_i (zero below horizon)."""
    h = normalize(w_i + w_o)
    cos_nh = dot(h, n)
    h_dot_o = dot(h, w_o)
    d = ggx_D(cos_nh, ggx_alpha(roughness))
    pdf = d * cos_nh / np.maximum(4.0 * h_dot_o, 1e-12)
    ok = (dot(w_i, n) > 0.0) & (h_dot_o > HALF_VECTOR_EPS) & (cos_nh > 0.0)
    return np.where(ok, pdf, 0.0)


def half_vector_pdf_transform(q_h: np.ndarray, w_h: np.ndarray, w_o: np.ndarray) -> np.ndarray:
    """Change of variables from a half-vector density to an incident-direction
    density: q_i = q_h / (4 (w_h . w_o)).

    Raises DegenerateHalfVector for near-grazing configurations where the
    transform blows up.
    """
    h_dot_o = dot(w_h, w_o)
    if np.any(h_dot_o < HALF_VECTOR_EPS):
        raise DegenerateHalfVector("w_h . w_o below threshold")
    return np.asarray(q_h) / (4.0 * h_dot_o)
