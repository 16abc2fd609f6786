"""Loss assembly and the two-phase optimization schedule.

Phases by iteration t:
  t < n_ce:                scene parameters only, pre-defined samplers.
  n_ce <= t < n_warmup:    additionally train both flows by cross entropy,
                           using the pre-defined samplers' draws as q-hat.
  t >= n_warmup:           estimators sample from frozen flow snapshots
                           (diffuse via MIS with cosine); snapshots refresh
                           every n_update iterations.

Gradients are hand-chained: the render pass runs through the estimator
module with a light closure that records visibility/texel/tape intermediates,
and the backward walks samples into material, environment, and indirect
parameters. Sampling PDFs and MIS weights are treated as constants (their
contribution to the expected gradient vanishes), so rendering-loss gradients
never touch flow parameters and cross-entropy gradients never touch scene
parameters.
"""

import copy
from dataclasses import dataclass, field

import numpy as np

from flowtrace import brdf, estimator as est, flow as flowmod, lighting, nn, rng, scene as scn
from flowtrace import geom, tensorgrid
from flowtrace.errors import DimensionMismatch, NumericFailure
from flowtrace.estimator import SamplerConfig, ShadingContext, StreamSpec, luminance
from flowtrace.geom import Frame, build_frame, dot

# desk-scale defaults
FLOW_GRID_COMPONENTS = 8
FLOW_GRID_RESOLUTION = 32
FLOW_GRID_INIT_STD = 0.01
MAT_GRID_COMPONENTS = 16
MAT_GRID_RESOLUTION = 64
MAT_GRID_INIT_STD = 0.1
MAT_PE_OCTAVES = 6
LR_FLOW = 5e-4
LR_SCENE = 1e-3
REG_JITTER_STD = 0.01
METALLIC_SPARSITY = 0.01

STRATUM_BATCH = 100
STRATUM_REG = 101


@dataclass
class Schedule:
    n_warmup: int = 1000
    n_ce: int = 500
    n_update: int = 1000
    total_iters: int = 5000

    def __post_init__(self):
        if not (self.n_ce <= self.n_warmup <= self.total_iters):
            raise ValueError("schedule requires n_ce <= n_warmup <= total_iters")
        if self.n_update < 1:
            raise ValueError("n_update must be >= 1")


@dataclass
class LossWeights:
    lambda_m: float = 1.0
    lambda_ce_d: float = 1e-4
    lambda_ce_s: float = 1e-4


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


class MaterialField:
    """Spatially varying material: VM feature grid + positional encoding into
    a small MLP, decoded through sigmoids (roughness gets the 0.01 floor)."""

    def __init__(self, box_min, box_max, seed_rng: np.random.Generator,
                 k=MAT_GRID_COMPONENTS, r=MAT_GRID_RESOLUTION, width=128):
        self.grid = tensorgrid.VMGrid.create(k, r, box_min, box_max,
                                             MAT_GRID_INIT_STD, seed_rng)
        in_dim = 3 * k + 3 + 6 * MAT_PE_OCTAVES
        self.mlp = nn.MLP((in_dim, width, width, 5), seed_rng, zero_last=True)

    def _decode(self, y):
        a = nn.sigmoid(y[:, :3])
        m = nn.sigmoid(y[:, 3])
        r = brdf.ROUGHNESS_FLOOR + (1.0 - brdf.ROUGHNESS_FLOOR) * nn.sigmoid(y[:, 4])
        return a, m, r

    def eval(self, x: np.ndarray):
        feat = tensorgrid.feature_query(self.grid, x)
        inp = np.concatenate([feat, nn.positional_encoding(x, MAT_PE_OCTAVES)], axis=1)
        y, _ = self.mlp.forward(inp)
        return self._decode(y)

    def eval_with_tape(self, x: np.ndarray):
        feat = tensorgrid.feature_query(self.grid, x)
        inp = np.concatenate([feat, nn.positional_encoding(x, MAT_PE_OCTAVES)], axis=1)
        y, tape = self.mlp.forward(inp)
        a, m, r = self._decode(y)
        return (a, m, r), (x, tape, a, m, r)

    def backward(self, aux, ga, gm, gr, prefix="mat") -> dict:
        x, tape, a, m, r = aux
        gy = np.empty((a.shape[0], 5))
        gy[:, :3] = ga * a * (1.0 - a)
        gy[:, 3] = gm * m * (1.0 - m)
        sig_r = (r - brdf.ROUGHNESS_FLOOR) / (1.0 - brdf.ROUGHNESS_FLOOR)
        gy[:, 4] = gr * (1.0 - brdf.ROUGHNESS_FLOOR) * sig_r * (1.0 - sig_r)
        grads, g_in = self.mlp.backward(tape, gy)
        out = self.mlp.named_grads(f"{prefix}.mlp", grads)
        out.update(
            tensorgrid.feature_query_backward(
                self.grid, x, g_in[:, : self.grid.feature_dim], f"{prefix}.grid"
            )
        )
        return out

    def named_params(self, prefix="mat") -> dict:
        out = self.mlp.named_params(f"{prefix}.mlp")
        out.update(self.grid.named_params(f"{prefix}.grid"))
        return out

    def load_named(self, prefix, params):
        self.mlp.load_named(f"{prefix}.mlp", params)
        self.grid.load_named(f"{prefix}.grid", params)


class Model:
    """Everything trainable plus the fixed scene geometry."""

    def __init__(self, cfg: scn.SceneConfig, flow_domain: str = flowmod.DOMAIN_HALF):
        self.scene_cfg = cfg
        self.geometry, fixed, self.learnable_prims = scn.build_geometry(cfg)
        self.fixed_albedo, self.fixed_metallic, self.fixed_roughness = fixed
        self.envmap = scn.build_envmap(cfg)
        lo, hi = scn.scene_bounds(cfg)
        init = np.random.default_rng(cfg.seed)
        self.flow_grid = tensorgrid.VMGrid.create(
            FLOW_GRID_COMPONENTS, FLOW_GRID_RESOLUTION, lo, hi, FLOW_GRID_INIT_STD, init
        )
        cond_dim = self.flow_grid.feature_dim + 3
        self.spec_flow = flowmod.create_flow(cond_dim, init, domain=flow_domain)
        self.diff_flow = flowmod.create_flow(cond_dim, init, domain=flowmod.DOMAIN_INCIDENT)
        self.mat_field = (
            MaterialField(lo, hi, init) if bool(self.learnable_prims.any()) else None
        )
        self.indirect = lighting.IndirectField(init, enabled=cfg.indirect_enabled)

    # -- materials ---------------------------------------------------------
    def material_at(self, prim_id: np.ndarray, x: np.ndarray, with_tape: bool = False):
        """Material arrays per hit, routing learnable primitives through the
        field; aux is None for rows with fixed materials."""
        n = prim_id.shape[0]
        a = np.zeros((n, 3))
        m = np.zeros(n)
        r = np.full(n, 0.5)
        learn = self.learnable_prims[prim_id]
        fixed = ~learn
        if fixed.any():
            slot = self.geometry.material_id[prim_id[fixed]]
            a[fixed] = self.fixed_albedo[slot]
            m[fixed] = self.fixed_metallic[slot]
            r[fixed] = self.fixed_roughness[slot]
        aux = None
        if learn.any():
            if with_tape:
                (af, mf, rf), aux = self.mat_field.eval_with_tape(x[learn])
            else:
                af, mf, rf = self.mat_field.eval(x[learn])
            a[learn], m[learn], r[learn] = af, mf, rf
        if with_tape:
            return (a, m, r), (aux, learn)
        return a, m, r

    def material_backward(self, mat_aux, ga, gm, gr) -> dict:
        aux, learn = mat_aux
        if aux is None or not learn.any():
            return {}
        return self.mat_field.backward(aux, ga[learn], gm[learn], gr[learn])

    # -- light -------------------------------------------------------------
    def light_eval(self, x: np.ndarray, w: np.ndarray, with_aux: bool = False):
        vis = ~geom.occluded(x, w, self.geometry)
        env_vals, idx, wts = lighting.env_lookup(self.envmap, w, aux=True)
        out = env_vals * vis[:, None]
        ind_aux = None
        if self.indirect.enabled:
            li, ind_aux = self.indirect.eval_with_tape(x, w)
            out = out + li
        if with_aux:
            return out, (vis, idx, wts, ind_aux)
        return out

    def light_fn(self):
        return lambda x, w: self.light_eval(x, w)

    # -- parameter groups ----------------------------------------------------
    def flow_params(self) -> dict:
        out = self.spec_flow.named_params("spec_flow")
        out.update(self.diff_flow.named_params("diff_flow"))
        out.update(self.flow_grid.named_params("vf"))
        return out

    def scene_params(self) -> dict:
        out = {}
        if self.mat_field is not None:
            out.update(self.mat_field.named_params("mat"))
        if self.envmap.learnable:
            out.update(self.envmap.named_params("env"))
        if self.indirect.enabled:
            out.update(self.indirect.mlp.named_params("indirect"))
        return out

    def load_params(self, params: dict):
        self.spec_flow.load_named("spec_flow", params)
        self.diff_flow.load_named("diff_flow", params)
        self.flow_grid.load_named("vf", params)
        if self.mat_field is not None:
            self.mat_field.load_named("mat", params)
        if self.envmap.learnable:
            self.envmap.load_named("env", params)
        if self.indirect.enabled:
            self.indirect.mlp.load_named("indirect", params)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def rgb_loss(rendered: np.ndarray, reference: np.ndarray):
    """Mean squared error over pixels and channels, plus d(loss)/d(rendered)."""
    if rendered.shape != reference.shape:
        raise DimensionMismatch(f"{rendered.shape} vs {reference.shape}")
    diff = rendered - reference
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / diff.size


def ce_loss(
    flw: flowmod.NormalizingFlow,
    grid: tensorgrid.VMGrid,
    w_i: np.ndarray,
    x: np.ndarray,
    w_o: np.ndarray,
    frame: Frame,
    I_lum: np.ndarray,
    q_hat: np.ndarray,
    valid: np.ndarray,
    prefix: str,
):
    """Cross entropy between the integrand and the flow: mean of
    -(I / q_hat) log q. Gradients flow only into the flow and its grid;
    samples with I = 0 (or invalid draws) contribute nothing."""
    n_total = I_lum.shape[0]
    sel = valid & (I_lum > 0.0) & (q_hat > 0.0)
    above = dot(w_i, frame.normal) > 0.0
    if flw.domain == flowmod.DOMAIN_HALF:
        h = geom.normalize(w_i + w_o)
        sel = sel & (dot(h, frame.normal) > 0.0) & (dot(h, w_o) > brdf.HALF_VECTOR_EPS)
    else:
        sel = sel & above
    if not sel.any():
        return 0.0, {}
    weights = -(I_lum[sel] / q_hat[sel]) / n_total
    sub = Frame(frame.tangent[sel], frame.bitangent[sel], frame.normal[sel])
    logq, grads = flowmod.flow_log_pdf_with_grad(
        flw, grid, w_i[sel], x[sel], w_o[sel], sub,
        weights=weights, prefix=prefix, grid_prefix="vf",
    )
    return float(np.sum(weights * logq)), grads


def material_reg_loss(model: Model, x: np.ndarray, jitter: np.ndarray):
    """Smoothness between each point and a jittered neighbor plus a small
    metallic sparsity term; zero when no material field exists."""
    if model.mat_field is None:
        return 0.0, {}
    (a0, m0, r0), aux0 = model.mat_field.eval_with_tape(x)
    (a1, m1, r1), aux1 = model.mat_field.eval_with_tape(x + jitter)
    out0 = np.concatenate([a0, m0[:, None], r0[:, None]], axis=1)
    out1 = np.concatenate([a1, m1[:, None], r1[:, None]], axis=1)
    diff = out0 - out1
    n = x.shape[0]
    loss = float(np.mean(diff * diff)) + METALLIC_SPARSITY * float(np.mean(m0))
    g = 2.0 * diff / diff.size
    gm_extra = np.full(n, METALLIC_SPARSITY / n)
    grads = model.mat_field.backward(aux0, g[:, :3], g[:, 3] + gm_extra, g[:, 4])
    grads1 = model.mat_field.backward(aux1, -g[:, :3], -g[:, 3], -g[:, 4])
    for k, v in grads1.items():
        grads[k] = grads[k] + v
    return loss, grads


def _accumulate(total: dict, part: dict, scale: float = 1.0):
    for k, v in part.items():
        if k in total:
            total[k] = total[k] + scale * v
        else:
            total[k] = scale * v


# ---------------------------------------------------------------------------
# differentiable render pass
# ---------------------------------------------------------------------------


class _RecordingLight:
    """Light callable for the estimator that records gradient intermediates
    in call order (one call per stratum)."""

    def __init__(self, model: Model):
        self.model = model
        self.calls = []

    def __call__(self, x, w):
        out, aux = self.model.light_eval(x, w, with_aux=True)
        self.calls.append((x, w, aux))
        return out


def _specular_partials(ctx: ShadingContext, w_i: np.ndarray):
    """Specular lobe pieces and their derivatives w.r.t. (albedo, metallic,
    roughness) at each sample; everything zero below the horizon."""
    n_vec = ctx.frame.normal[:, None, :]
    cos_i = dot(w_i, n_vec)
    cos_o = dot(ctx.w_o, ctx.frame.normal)[:, None]
    ok = (cos_i > 0.0) & (cos_o > 0.0)
    cos_i_s = np.maximum(cos_i, 1e-12)
    cos_o_s = np.maximum(cos_o, 1e-12)
    h = geom.normalize(w_i + ctx.w_o[:, None, :])
    c_h = np.clip(dot(h, n_vec), 0.0, 1.0)
    h_o = np.clip(dot(h, ctx.w_o[:, None, :]), 0.0, 1.0)
    r = ctx.roughness[:, None]
    alpha = r * r
    a2 = alpha * alpha
    t = c_h * c_h * (a2 - 1.0) + 1.0
    D = np.where(c_h > 0.0, a2 / (np.pi * t * t), 0.0)
    dD_da = np.where(c_h > 0.0, (2.0 * alpha * t - 4.0 * alpha * a2 * c_h * c_h) / (np.pi * t**3), 0.0)
    k = alpha / 2.0
    den_i = cos_i_s * (1.0 - k) + k
    den_o = cos_o_s * (1.0 - k) + k
    g1_i = cos_i_s / den_i
    g1_o = cos_o_s / den_o
    G = g1_i * g1_o
    dg1_i = -cos_i_s * (1.0 - cos_i_s) / (den_i * den_i)
    dg1_o = -cos_o_s * (1.0 - cos_o_s) / (den_o * den_o)
    dG_da = 0.5 * (dg1_i * g1_o + g1_i * dg1_o)
    denom = 4.0 * cos_i_s * cos_o_s
    s_geo = np.where(ok, D * G / denom, 0.0)
    ds_dr = np.where(ok, (dD_da * G + D * dG_da) / denom * 2.0 * r, 0.0)
    t5 = (1.0 - h_o) ** 5
    f0 = brdf.fresnel_f0(ctx.albedo, ctx.metallic)  # (N, 3)
    fres = f0[:, None, :] * (1.0 - t5[..., None]) + t5[..., None]
    return {
        "cos_i": np.where(ok, cos_i, 0.0),
        "s_geo": s_geo,
        "ds_dr": ds_dr,
        "fres": fres,
        "one_minus_t5": 1.0 - t5,
        "ok": ok,
    }


def render_batch_with_grad(
    model: Model,
    ctx: ShadingContext,
    cfg: SamplerConfig,
    streams: StreamSpec,
    spec_snap: flowmod.FlowSnapshot | None,
    diff_snap: flowmod.FlowSnapshot | None,
    gpix_fn,
):
    """Render a batch through the estimator, then backpropagate the pixel
    upstream (from gpix_fn(rgb)) into scene-parameter gradients.

    Returns (rgb, per-stratum sample batches, scene grads dict, metrics).
    """
    light = _RecordingLight(model)
    spec_est, spec_batch = est.estimate_specular(
        ctx, light, cfg, streams, specular_flow=spec_snap, return_samples=True
    )
    diff_out = est.estimate_diffuse(
        ctx, light, cfg, streams, diffuse_flow=diff_snap, return_samples=True
    )
    diff_est, diff_batches = diff_out
    mis = isinstance(diff_batches, tuple)
    rgb = spec_est.rgb + diff_est.rgb
    gpix = gpix_fn(rgb)

    (a, m, r), mat_aux = model.material_at(ctx.prim_id, ctx.position, with_tape=True)
    ga = np.zeros((ctx.n, 3))
    gm = np.zeros(ctx.n)
    gr = np.zeros(ctx.n)
    grads: dict = {}

    strata = [("spec", spec_batch, cfg.n_s, light.calls[0])]
    if mis:
        strata.append(("diff", diff_batches[0], cfg.n_d_flow, light.calls[1]))
        strata.append(("diff", diff_batches[1], cfg.n_d_cos, light.calls[2]))
    else:
        strata.append(("diff", diff_batches, cfg.n_d_cos, light.calls[1]))

    f_d = brdf.eval_diffuse(ctx.albedo, ctx.metallic)
    for kind, batch, n_st, (xs, ws, laux) in strata:
        s = batch.w_i.shape[1]
        cos_i = np.maximum(dot(batch.w_i, ctx.frame.normal[:, None, :]), 0.0)
        coeff = np.where(
            batch.valid,
            batch.mis_weight * cos_i / np.maximum(batch.pdf, 1e-300) / n_st,
            0.0,
        )
        L = batch.radiance
        if kind == "spec":
            parts = _specular_partials(ctx, batch.w_i)
            up = gpix[:, None, :] * coeff[..., None]  # (N, S, 3)
            gF = up * L * parts["s_geo"][..., None]
            gS = np.sum(up * L * parts["fres"], axis=2)
            gf0 = gF * parts["one_minus_t5"][..., None]
            sum_gf0 = gf0.sum(axis=1)
            ga += sum_gf0 * m[:, None]
            gm += np.sum(sum_gf0 * (a - 0.04), axis=1)
            gr += np.sum(gS * parts["ds_dr"], axis=1)
            gL = up * parts["fres"] * parts["s_geo"][..., None]
        else:
            up = gpix[:, None, :] * coeff[..., None]
            gfd = np.sum(up * L, axis=1)
            ga += gfd * ((1.0 - m) / np.pi)[:, None]
            gm += np.sum(gfd * (-a / np.pi), axis=1)
            gL = up * f_d[:, None, :]
        # light backward
        vis, idx, wts, ind_aux = laux
        gL_flat = gL.reshape(-1, 3)
        if model.envmap.learnable:
            _accumulate(
                grads,
                lighting.env_lookup_backward(
                    model.envmap, idx, wts, gL_flat * vis[:, None], prefix="env"
                ),
            )
        if model.indirect.enabled:
            _accumulate(grads, model.indirect.backward(ind_aux, gL_flat, prefix="indirect"))

    if model.mat_field is not None:
        _accumulate(grads, model.material_backward(mat_aux, ga, gm, gr))

    diff_batch = diff_batches[0] if mis else diff_batches
    metrics = {
        "supp_var_spec": float(spec_est.supp_var.mean()),
        "supp_var_diff": float(diff_est.supp_var.mean()),
    }
    return rgb, grads, est.combine(diff_est, spec_est), (spec_batch, diff_batch, mis), metrics


# ---------------------------------------------------------------------------
# training data and state
# ---------------------------------------------------------------------------


class TrainData:
    """Precomputed camera-ray hits and reference pixels for every view.

    Geometry is static, so primary intersections are traced once; training
    batches sample rows uniformly. Miss rows supervise the environment map
    directly (the primary ray escapes to the backdrop).
    """

    def __init__(self, cfg: scn.SceneConfig, geometry, references: list):
        positions, normals, w_os, prims, uids, refs = [], [], [], [], [], []
        miss_dirs, miss_uids, miss_refs = [], [], []
        offset = 0
        if len(references) != len(cfg.cameras):
            raise DimensionMismatch("one reference image per camera required")
        for cam, ref in zip(cfg.cameras, references):
            if ref.shape[:2] != (cam.height, cam.width):
                raise DimensionMismatch(
                    f"reference {ref.shape[:2]} vs camera {(cam.height, cam.width)}"
                )
            rays = scn.camera_rays(cam)
            hits = geom.intersect(rays, geometry)
            v = hits.valid
            flat_ref = ref.reshape(-1, 3)
            positions.append(hits.position[v])
            normals.append(hits.normal[v])
            w_os.append(-rays.direction[v])
            prims.append(hits.prim_id[v])
            uids.append(offset + np.nonzero(v)[0])
            refs.append(flat_ref[v])
            miss_dirs.append(rays.direction[~v])
            miss_uids.append(offset + np.nonzero(~v)[0])
            miss_refs.append(flat_ref[~v])
            offset += cam.width * cam.height
        self.position = np.concatenate(positions)
        self.normal = np.concatenate(normals)
        self.w_o = np.concatenate(w_os)
        self.prim_id = np.concatenate(prims)
        self.uid = np.concatenate(uids)
        self.ref = np.concatenate(refs)
        self.miss_dir = np.concatenate(miss_dirs)
        self.miss_uid = np.concatenate(miss_uids)
        self.miss_ref = np.concatenate(miss_refs)
        self.n_surface = self.position.shape[0]
        self.n_miss = self.miss_dir.shape[0]

    def batch_indices(self, seed: int, iteration: int, size: int):
        total = self.n_surface + self.n_miss
        u = rng.stream_uniforms(seed, (0, iteration, STRATUM_BATCH), size)
        idx = np.minimum((u * total).astype(np.int64), total - 1)
        return idx[idx < self.n_surface], idx[idx >= self.n_surface] - self.n_surface


@dataclass
class TrainState:
    model: Model
    schedule: Schedule
    weights: LossWeights
    cfg: SamplerConfig
    data: TrainData
    seed: int
    batch_size: int = 512
    iteration: int = 0
    adam_flow: nn.Adam | None = None
    adam_scene: nn.Adam | None = None
    spec_snap: flowmod.FlowSnapshot | None = None
    diff_snap: flowmod.FlowSnapshot | None = None
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.adam_flow is None:
            self.adam_flow = nn.Adam(self.model.flow_params(), lr=LR_FLOW)
        if self.adam_scene is None:
            scene_params = self.model.scene_params()
            self.adam_scene = nn.Adam(scene_params, lr=LR_SCENE) if scene_params else None


def snapshot_update(state: TrainState):
    """Refresh both frozen sampler copies from the live flows."""
    state.spec_snap = flowmod.snapshot(state.model.spec_flow, state.model.flow_grid,
                                       state.iteration)
    state.diff_snap = flowmod.snapshot(state.model.diff_flow, state.model.flow_grid,
                                       state.iteration)


def _gaussian_jitter(seed: int, iteration: int, n: int) -> np.ndarray:
    u = rng.stream_uniforms(seed, (0, iteration, STRATUM_REG), 6 * n).reshape(n, 6)
    z = np.sqrt(-2.0 * np.log(u[:, :3])) * np.cos(geom.TWO_PI * u[:, 3:])
    return REG_JITTER_STD * z


def train_step(state: TrainState) -> dict:
    """One scheduled optimization step; returns the metrics row."""
    t = state.iteration
    sched = state.schedule
    model = state.model

    use_flow = t >= sched.n_warmup
    if use_flow and (state.spec_snap is None or t % sched.n_update == 0):
        snapshot_update(state)

    cfg = SamplerConfig(
        specular="flow" if use_flow else "ggx",
        diffuse="mis" if use_flow else "cosine",
        n_s=state.cfg.n_s,
        n_d_flow=state.cfg.n_d_flow,
        n_d_cos=state.cfg.n_d_cos,
    )

    surf_idx, miss_idx = state.data.batch_indices(state.seed, t, state.batch_size)
    d = state.data
    x = d.position[surf_idx]
    frame = build_frame(d.normal[surf_idx])
    prim = d.prim_id[surf_idx]
    a, m, r = model.material_at(prim, x)
    ctx = ShadingContext(
        position=x, frame=frame, w_o=d.w_o[surf_idx], albedo=a, metallic=m,
        roughness=r, prim_id=prim,
    )
    streams = StreamSpec(seed=state.seed, pixel_ids=d.uid[surf_idx], iteration=t)

    ref_surface = d.ref[surf_idx]
    ref_miss = d.miss_ref[miss_idx]
    n_rows = surf_idx.size + miss_idx.size

    miss_rgb, miss_idx_tex, miss_wts = (
        lighting.env_lookup(model.envmap, d.miss_dir[miss_idx], aux=True)
        if miss_idx.size
        else (np.zeros((0, 3)), np.zeros((0, 4), dtype=np.int64), np.zeros((0, 4)))
    )

    def gpix_fn(rgb_surface):
        diff = rgb_surface - ref_surface
        return 2.0 * diff / (n_rows * 3)

    rgb_s, scene_grads, full_est, (spec_batch, diff_batch, mis), rmetrics = (
        render_batch_with_grad(model, ctx, cfg, streams, state.spec_snap,
                               state.diff_snap, gpix_fn)
    )
    l_c = (
        float(np.sum((rgb_s - ref_surface) ** 2))
        + float(np.sum((miss_rgb - ref_miss) ** 2))
    ) / (n_rows * 3)
    if miss_idx.size and model.envmap.learnable:
        g_miss = 2.0 * (miss_rgb - ref_miss) / (n_rows * 3)
        _accumulate(
            scene_grads,
            lighting.env_lookup_backward(model.envmap, miss_idx_tex, miss_wts, g_miss,
                                         prefix="env"),
        )

    l_m = 0.0
    if model.mat_field is not None:
        jitter = _gaussian_jitter(state.seed, t, x.shape[0])
        l_m, reg_grads = material_reg_loss(model, x, jitter)
        _accumulate(scene_grads, reg_grads, scale=state.weights.lambda_m)

    if not np.isfinite(l_c) or not np.isfinite(l_m):
        raise NumericFailure(
            f"non-finite loss at iteration {t}: L_c={l_c} L_m={l_m}"
        )

    if state.adam_scene is not None and scene_grads:
        full = {k: scene_grads.get(k, np.zeros_like(v))
                for k, v in state.adam_scene.params.items()}
        state.adam_scene.step(full)

    # cross-entropy flow training
    l_ce_s = 0.0
    l_ce_d = 0.0
    flow_grad_norm = 0.0
    if t >= sched.n_ce:
        flow_grads: dict = {}
        spec_I = luminance(
            brdf.eval_specular(
                spec_batch.w_i, ctx.w_o[:, None, :], ctx.frame.normal[:, None, :],
                ctx.albedo[:, None, :], ctx.metallic[:, None], ctx.roughness[:, None],
            )
            * spec_batch.radiance
            * np.maximum(dot(spec_batch.w_i, ctx.frame.normal[:, None, :]), 0.0)[..., None]
        )
        s = spec_batch.w_i.shape[1]
        tf = est._tile_frame(ctx.frame, s)
        l_ce_s, g = ce_loss(
            model.spec_flow, model.flow_grid,
            spec_batch.w_i.reshape(-1, 3),
            np.repeat(ctx.position, s, axis=0),
            np.repeat(ctx.w_o, s, axis=0),
            tf,
            spec_I.reshape(-1),
            spec_batch.pdf.reshape(-1),
            spec_batch.valid.reshape(-1),
            prefix="spec_flow",
        )
        _accumulate(flow_grads, g, scale=state.weights.lambda_ce_s)

        cos_d = np.maximum(dot(diff_batch.w_i, ctx.frame.normal[:, None, :]), 0.0)
        diff_I = luminance(
            brdf.eval_diffuse(ctx.albedo, ctx.metallic)[:, None, :]
            * diff_batch.radiance
        ) * cos_d
        sd = diff_batch.w_i.shape[1]
        tfd = est._tile_frame(ctx.frame, sd)
        l_ce_d, g = ce_loss(
            model.diff_flow, model.flow_grid,
            diff_batch.w_i.reshape(-1, 3),
            np.repeat(ctx.position, sd, axis=0),
            np.repeat(ctx.w_o, sd, axis=0),
            tfd,
            diff_I.reshape(-1),
            diff_batch.pdf.reshape(-1),
            diff_batch.valid.reshape(-1),
            prefix="diff_flow",
        )
        _accumulate(flow_grads, g, scale=state.weights.lambda_ce_d)

        if not np.isfinite(l_ce_s) or not np.isfinite(l_ce_d):
            raise NumericFailure(
                f"non-finite cross-entropy loss at iteration {t}: "
                f"L_ce_s={l_ce_s} L_ce_d={l_ce_d}"
            )
        if flow_grads:
            flow_grad_norm = float(
                np.sqrt(sum(float(np.sum(v * v)) for v in flow_grads.values()))
            )
            full = {k: flow_grads.get(k, np.zeros_like(v))
                    for k, v in state.adam_flow.params.items()}
            state.adam_flow.step(full)

    metrics = {
        "iter": t,
        "L_c": l_c,
        "L_m": l_m,
        "L_ce_d": l_ce_d,
        "L_ce_s": l_ce_s,
        "supp_var_spec": rmetrics["supp_var_spec"],
        "supp_var_diff": rmetrics["supp_var_diff"],
        "specular_sampler": cfg.specular,
        "diffuse_sampler": cfg.diffuse,
        "flow_grad_norm": flow_grad_norm,
    }
    state.history.append(metrics)
    state.iteration += 1
    return metrics


def run_training(state: TrainState, total_iters: int | None = None, log_fn=None):
    end = state.schedule.total_iters if total_iters is None else total_iters
    while state.iteration < end:
        metrics = train_step(state)
        if log_fn is not None:
            log_fn(metrics)
    return state
