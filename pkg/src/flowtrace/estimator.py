"""Monte Carlo evaluation of the rendering equation: separate diffuse and
specular estimators, multiple importance sampling of the diffuse term, and
the per-pixel sample-variance diagnostic.

Estimators operate on batches of shading points; light arrives through a
`light_fn(x, w) -> rgb` callable so the same code runs against environment
maps, learned light models, or test stand-ins. Per-sample randomness comes
from counter-based streams keyed by (pixel, iteration, stratum), so results
do not depend on batch chunking.
"""

from dataclasses import dataclass

import numpy as np

from flowtrace import brdf, flow as flowmod, rng
from flowtrace.errors import InsufficientSamples
from flowtrace.geom import Frame, dot

STRATUM_SPECULAR = 0
STRATUM_DIFFUSE_FLOW = 1
STRATUM_DIFFUSE_COS = 2

LUMA = np.array([0.2126, 0.7152, 0.0722])


def luminance(rgb: np.ndarray) -> np.ndarray:
    return rgb @ LUMA


@dataclass
class ShadingContext:
    """Per-ray quantities at the hit points being shaded."""

    position: np.ndarray  # (N, 3)
    frame: Frame  # fields (N, 3)
    w_o: np.ndarray  # (N, 3), toward the camera
    albedo: np.ndarray  # (N, 3)
    metallic: np.ndarray  # (N,)
    roughness: np.ndarray  # (N,)
    prim_id: np.ndarray | None = None  # (N,) primitive hit, for material routing

    @property
    def n(self) -> int:
        return self.position.shape[0]


@dataclass
class StreamSpec:
    """Addresses the random streams of one estimation pass."""

    seed: int
    pixel_ids: np.ndarray  # (N,)
    iteration: int = 0


@dataclass
class SamplerConfig:
    specular: str = "ggx"  # "ggx" | "flow"
    diffuse: str = "cosine"  # "cosine" | "mis"
    n_s: int = 128
    n_d_flow: int = 64
    n_d_cos: int = 512


@dataclass
class RadianceEstimate:
    rgb: np.ndarray  # (N, 3)
    supp_var: np.ndarray  # (N,) supplement-formula variance, luminance
    std_var: np.ndarray  # (N,) variance of the MC mean, luminance ratios
    n_samples: int


@dataclass
class SampleBatch:
    """Per-sample record of one stratum, kept for training reuse."""

    w_i: np.ndarray  # (N, S, 3)
    pdf: np.ndarray  # (N, S)
    valid: np.ndarray  # (N, S)
    radiance: np.ndarray  # (N, S, 3)
    mis_weight: np.ndarray  # (N, S); 1 outside MIS


def draw_square_points(streams: StreamSpec, stratum: int, n_samples: int) -> np.ndarray:
    """(N, S, 2) uniforms from the per-pixel streams of one stratum."""
    u = rng.stream_uniforms_2d(
        streams.seed, streams.pixel_ids, streams.iteration, stratum, 2 * n_samples
    )
    return u.reshape(-1, n_samples, 2)


def _tile_frame(frame: Frame, s: int) -> Frame:
    return Frame(
        np.repeat(frame.tangent, s, axis=0),
        np.repeat(frame.bitangent, s, axis=0),
        np.repeat(frame.normal, s, axis=0),
    )


def sample_variance(I, q):
    """Per-pixel variance diagnostics from per-sample integrand values and
    their PDFs.

    Returns (supplement, standard). Both work on the importance-weighted
    sample values v = I / q. The supplement form additionally divides each
    squared deviation by q, so its expectation is the chi-square-style
    divergence between the integrand shape and the sampler (zero exactly when
    q is proportional to I); the standard form is the usual unbiased variance
    of the MC mean (exactly zero when all sample values coincide).
    """
    I = np.asarray(I, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    n = I.shape[0]
    if n < 2:
        raise InsufficientSamples(f"variance needs at least 2 samples, got {n}")
    v = I / q
    dev2 = (v - v.mean()) ** 2
    supp = np.sum(dev2 / q) / (n * (n - 1))
    std = 0.0 if np.ptp(v) == 0.0 else np.sum(dev2) / (n * (n - 1))
    return supp, std


def _variance_rows(q: np.ndarray, valid: np.ndarray, ratios: np.ndarray):
    """Batched variance diagnostics over (N, S) sample values (= I/q,
    luminance, with MIS weights folded in where applicable).

    The supplement form runs over valid samples only (its 1/q weight needs
    q > 0); the standard form runs over all S samples since invalid ones
    really do contribute zeros to the estimator.
    """
    n, s = q.shape
    nv = valid.sum(axis=1)
    nv_safe = np.maximum(nv, 1)
    r = np.where(valid, ratios, 0.0)
    mean_v = r.sum(axis=1) / nv_safe
    dev2 = np.where(valid, (r - mean_v[:, None]) ** 2, 0.0)
    supp_terms = dev2 / np.where(valid, q, 1.0)
    supp = np.where(nv >= 2, supp_terms.sum(axis=1) / (nv_safe * np.maximum(nv_safe - 1, 1)), 0.0)
    rbar = r.mean(axis=1)
    std = np.sum((r - rbar[:, None]) ** 2, axis=1) / (s * (s - 1))
    std = np.where(np.ptp(r, axis=1) == 0.0, 0.0, std)
    return supp, std


def _finalize(contrib_rgb, q, valid, n_samples) -> RadianceEstimate:
    rgb = contrib_rgb.sum(axis=1) / n_samples
    supp, std = _variance_rows(q, valid, luminance(contrib_rgb))
    return RadianceEstimate(rgb=rgb, supp_var=supp, std_var=std, n_samples=n_samples)


def _eval_light(light_fn, ctx: ShadingContext, w_i: np.ndarray) -> np.ndarray:
    n, s, _ = w_i.shape
    x = np.repeat(ctx.position, s, axis=0)
    return light_fn(x, w_i.reshape(-1, 3)).reshape(n, s, 3)


def estimate_specular(
    ctx: ShadingContext,
    light_fn,
    cfg: SamplerConfig,
    streams: StreamSpec,
    specular_flow: flowmod.FlowSnapshot | None = None,
    return_samples: bool = False,
):
    """Average of f_s * L * cos / q over n_s samples from the configured
    specular sampler (GGX baseline or a frozen flow)."""
    s = cfg.n_s
    u = draw_square_points(streams, STRATUM_SPECULAR, s)
    tf = _tile_frame(ctx.frame, s)
    w_o_t = np.repeat(ctx.w_o, s, axis=0)
    if cfg.specular == "flow":
        cond = specular_flow.conditioning(ctx.position, ctx.w_o, ctx.frame)
        ds = specular_flow.sample(
            u.reshape(-1, 2),
            np.repeat(ctx.position, s, axis=0),
            w_o_t,
            tf,
            cond=np.repeat(cond, s, axis=0),
        )
    else:
        ds = brdf.sample_ggx(
            u.reshape(-1, 2), w_o_t, tf, np.repeat(ctx.roughness, s)
        )
    w_i = ds.direction.reshape(ctx.n, s, 3)
    pdf = ds.pdf.reshape(ctx.n, s)
    valid = ds.valid.reshape(ctx.n, s)
    L = _eval_light(light_fn, ctx, w_i)
    cos_i = np.maximum(dot(w_i, ctx.frame.normal[:, None, :]), 0.0)
    f_s = brdf.eval_specular(
        w_i,
        ctx.w_o[:, None, :],
        ctx.frame.normal[:, None, :],
        ctx.albedo[:, None, :],
        ctx.metallic[:, None],
        ctx.roughness[:, None],
    )
    integrand = f_s * L * cos_i[..., None]
    contrib = np.where(valid[..., None], integrand / np.maximum(pdf, 1e-300)[..., None], 0.0)
    est = _finalize(contrib, pdf, valid, s)
    if return_samples:
        batch = SampleBatch(w_i=w_i, pdf=pdf, valid=valid, radiance=L,
                            mis_weight=np.ones_like(pdf))
        return est, batch
    return est


def _diffuse_integrand(ctx, w_i, L):
    cos_i = np.maximum(dot(w_i, ctx.frame.normal[:, None, :]), 0.0)
    f_d = brdf.eval_diffuse(ctx.albedo, ctx.metallic)
    return f_d[:, None, :] * L * cos_i[..., None]


def estimate_diffuse(
    ctx: ShadingContext,
    light_fn,
    cfg: SamplerConfig,
    streams: StreamSpec,
    diffuse_flow: flowmod.FlowSnapshot | None = None,
    return_samples: bool = False,
):
    """Diffuse term via cosine sampling, or balance-heuristic MIS between a
    frozen diffuse flow and the cosine baseline."""
    if cfg.diffuse == "cosine" or diffuse_flow is None:
        s = cfg.n_d_cos
        u = draw_square_points(streams, STRATUM_DIFFUSE_COS, s)
        tf = _tile_frame(ctx.frame, s)
        ds = brdf.sample_cosine(u.reshape(-1, 2), tf)
        w_i = ds.direction.reshape(ctx.n, s, 3)
        pdf = ds.pdf.reshape(ctx.n, s)
        valid = ds.valid.reshape(ctx.n, s)
        L = _eval_light(light_fn, ctx, w_i)
        f_d = brdf.eval_diffuse(ctx.albedo, ctx.metallic)
        # cancel the cosine against the pdf analytically (exact ratio pi)
        cop = ds.cos_over_pdf.reshape(ctx.n, s)
        contrib = f_d[:, None, :] * L * cop[..., None]
        est = _finalize(contrib, pdf, valid, s)
        if return_samples:
            return est, SampleBatch(w_i=w_i, pdf=pdf, valid=valid, radiance=L,
                                    mis_weight=np.ones_like(pdf))
        return est

    # MIS: flow stratum + cosine stratum, balance heuristic
    n_f, n_c = cfg.n_d_flow, cfg.n_d_cos
    cond = diffuse_flow.conditioning(ctx.position, ctx.w_o, ctx.frame)

    u_f = draw_square_points(streams, STRATUM_DIFFUSE_FLOW, n_f)
    tf_f = _tile_frame(ctx.frame, n_f)
    ds_f = diffuse_flow.sample(
        u_f.reshape(-1, 2),
        np.repeat(ctx.position, n_f, axis=0),
        np.repeat(ctx.w_o, n_f, axis=0),
        tf_f,
        cond=np.repeat(cond, n_f, axis=0),
    )
    w_i_f = ds_f.direction.reshape(ctx.n, n_f, 3)
    q_ff = ds_f.pdf.reshape(ctx.n, n_f)
    valid_f = ds_f.valid.reshape(ctx.n, n_f)
    q_fc = brdf.cosine_pdf(w_i_f, ctx.frame.normal[:, None, :])

    u_c = draw_square_points(streams, STRATUM_DIFFUSE_COS, n_c)
    tf_c = _tile_frame(ctx.frame, n_c)
    ds_c = brdf.sample_cosine(u_c.reshape(-1, 2), tf_c)
    w_i_c = ds_c.direction.reshape(ctx.n, n_c, 3)
    q_cc = ds_c.pdf.reshape(ctx.n, n_c)
    valid_c = ds_c.valid.reshape(ctx.n, n_c)
    q_cf = diffuse_flow.pdf(
        ds_c.direction,
        np.repeat(ctx.position, n_c, axis=0),
        np.repeat(ctx.w_o, n_c, axis=0),
        tf_c,
        cond=np.repeat(cond, n_c, axis=0),
    ).reshape(ctx.n, n_c)

    w_mis_f = n_f * q_ff / np.maximum(n_f * q_ff + n_c * q_fc, 1e-300)
    w_mis_c = n_c * q_cc / np.maximum(n_f * q_cf + n_c * q_cc, 1e-300)

    L_f = _eval_light(light_fn, ctx, w_i_f)
    L_c = _eval_light(light_fn, ctx, w_i_c)
    I_f = _diffuse_integrand(ctx, w_i_f, L_f)
    I_c = _diffuse_integrand(ctx, w_i_c, L_c)
    contrib_f = np.where(
        valid_f[..., None],
        I_f * (w_mis_f / np.maximum(q_ff, 1e-300))[..., None],
        0.0,
    )
    contrib_c = I_c * (w_mis_c / np.maximum(q_cc, 1e-300))[..., None]

    rgb = contrib_f.sum(axis=1) / n_f + contrib_c.sum(axis=1) / n_c
    supp_f, std_f = _variance_rows(q_ff, valid_f, luminance(contrib_f))
    supp_c, std_c = _variance_rows(q_cc, valid_c, luminance(contrib_c))
    est = RadianceEstimate(
        rgb=rgb, supp_var=supp_f + supp_c, std_var=std_f + std_c, n_samples=n_f + n_c
    )
    if return_samples:
        batch_f = SampleBatch(w_i=w_i_f, pdf=q_ff, valid=valid_f, radiance=L_f,
                              mis_weight=w_mis_f)
        batch_c = SampleBatch(w_i=w_i_c, pdf=q_cc, valid=valid_c, radiance=L_c,
                              mis_weight=w_mis_c)
        return est, (batch_f, batch_c)
    return est


def combine(diffuse: RadianceEstimate, specular: RadianceEstimate) -> RadianceEstimate:
    """Final color: componentwise sum; variances add across independent
    strata."""
    return RadianceEstimate(
        rgb=diffuse.rgb + specular.rgb,
        supp_var=diffuse.supp_var + specular.supp_var,
        std_var=diffuse.std_var + specular.std_var,
        n_samples=diffuse.n_samples + specular.n_samples,
    )
