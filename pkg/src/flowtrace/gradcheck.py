"""Finite-difference verification of every differentiable path in the
package: MLPs, tensor grids, the piecewise-quadratic warp, flow log-PDFs in
both domains, the material field, environment and indirect lighting, and the
training losses.

Checks run on deliberately tiny instances (gradient correctness is
structural, not size-dependent) so the whole suite covers every parameter
element within seconds.
"""

import numpy as np

from flowtrace import flow as flowmod
from flowtrace import geom, lighting, nn, tensorgrid
from flowtrace import train as tr

REL_TOL = 1e-3


def _mlp_case(rng):
    mlp = nn.MLP((3, 5, 4), rng, zero_last=False)
    x = rng.normal(size=(6, 3))
    w = rng.normal(size=(6, 4))
    params = mlp.named_params("mlp")

    def f(p):
        mlp.load_named("mlp", p)
        y, tape = mlp.forward(x)
        grads, _ = mlp.backward(tape, w)
        return float(np.sum(w * y)), mlp.named_grads("mlp", grads)

    return f, params


def _grid_case(rng):
    grid = tensorgrid.VMGrid.create(2, 4, [-1, -1, -1], [1, 1, 1], 0.5, rng)
    x = rng.uniform(-0.9, 0.9, (5, 3))
    up = rng.normal(size=(5, grid.feature_dim))
    params = grid.named_params("g")

    def f(p):
        grid.load_named("g", p)
        feat = tensorgrid.feature_query(grid, x)
        grads = tensorgrid.feature_query_backward(grid, x, up, "g")
        return float(np.sum(up * feat)), grads

    return f, params


def _warp_case(rng):
    """bins_from_raw composed with log-pdf and CDF of the warp."""
    raw0 = rng.normal(0, 0.5, size=(4, 9))  # K = 4
    x = rng.uniform(0.05, 0.95, 4)
    wts = rng.normal(size=4)
    params = {"raw": raw0.copy()}

    def f(p):
        bins, aux = flowmod.bins_from_raw(p["raw"])
        pdf, b, alpha = flowmod.pwquad_pdf(bins, x, aux=True)
        cdf = flowmod.pwquad_cdf(bins, x)
        val = float(np.sum(wts * (np.log(pdf) + cdf)))
        dW1, dV1, _ = flowmod.pwquad_logpdf_vjp(bins, x, b, alpha, wts)
        dW2, dV2, _ = flowmod.pwquad_cdf_vjp(bins, x, b, alpha, wts)
        draw = flowmod.bins_backward(bins, aux, dW1 + dW2, dV1 + dV2)
        return val, {"raw": draw}

    return f, params


def _flow_case(rng, domain):
    grid = tensorgrid.VMGrid.create(2, 4, [-1.5, -1.5, -1.5], [1.5, 1.5, 1.5], 0.4, rng)
    fl = flowmod.create_flow(grid.feature_dim + 3, rng, n_bins=4, hidden=8, domain=domain)
    for layer in fl.layers:
        layer.net.weights[-1] = rng.normal(0, 0.4, size=layer.net.weights[-1].shape)
    n = 4
    normal = geom.normalize(rng.normal(size=(n, 3)))
    frame = geom.build_frame(normal)
    w_o = geom.normalize(frame.normal + 0.4 * rng.normal(size=(n, 3)))
    bad = geom.dot(w_o, frame.normal) < 0.2
    w_o[bad] = frame.normal[bad]
    u = rng.uniform(0.05, 0.95, (n, 2))
    x = rng.uniform(-1.0, 1.0, (n, 3))
    ds = flowmod.flow_sample(fl, grid, u, x, w_o, frame)
    keep = ds.valid
    w_i = ds.direction[keep]
    sub = geom.Frame(frame.tangent[keep], frame.bitangent[keep], frame.normal[keep])
    xs, wos = x[keep], w_o[keep]
    wts = rng.normal(size=int(keep.sum()))
    params = {**fl.named_params("f"), **grid.named_params("vf")}

    def f(p):
        fl.load_named("f", p)
        grid.load_named("vf", p)
        logq, grads = flowmod.flow_log_pdf_with_grad(
            fl, grid, w_i, xs, wos, sub, weights=wts, prefix="f", grid_prefix="vf"
        )
        return float(np.sum(wts * logq)), grads

    return f, params


def _material_case(rng):
    field = tr.MaterialField([-1, -1, -1], [1, 1, 1], rng, k=2, r=4, width=8)
    field.mlp.weights[-1] = rng.normal(0, 0.3, size=field.mlp.weights[-1].shape)
    x = rng.uniform(-0.8, 0.8, (5, 3))
    wa = rng.normal(size=(5, 3))
    wm = rng.normal(size=5)
    wr = rng.normal(size=5)
    params = field.named_params("mat")

    def f(p):
        field.load_named("mat", p)
        (a, m, r), aux = field.eval_with_tape(x)
        val = float(np.sum(wa * a) + np.sum(wm * m) + np.sum(wr * r))
        return val, field.backward(aux, wa, wm, wr, "mat")

    return f, params


def _env_case(rng):
    env = lighting.EnvMap.from_texels(rng.uniform(0.2, 2.0, (4, 8, 3)), learnable=True)
    w = geom.normalize(rng.normal(size=(6, 3)))
    up = rng.normal(size=(6, 3))
    params = env.named_params("env")

    def f(p):
        env.load_named("env", p)
        vals, idx, wts = lighting.env_lookup(env, w, aux=True)
        grads = lighting.env_lookup_backward(env, idx, wts, up, "env")
        return float(np.sum(up * vals)), grads

    return f, params


def _indirect_case(rng):
    field = lighting.IndirectField(rng, enabled=True, width=8)
    field.mlp.weights[-1] = rng.normal(0, 0.3, size=field.mlp.weights[-1].shape)
    x = rng.uniform(-0.5, 0.5, (4, 3))
    w = geom.normalize(rng.normal(size=(4, 3)))
    up = rng.normal(size=(4, 3))
    params = field.mlp.named_params("ind")

    def f(p):
        field.mlp.load_named("ind", p)
        li, aux = field.eval_with_tape(x, w)
        return float(np.sum(up * li)), field.backward(aux, up, "ind")

    return f, params


def _ce_case(rng):
    grid = tensorgrid.VMGrid.create(2, 4, [-1.5, -1.5, -1.5], [1.5, 1.5, 1.5], 0.4, rng)
    fl = flowmod.create_flow(grid.feature_dim + 3, rng, n_bins=4, hidden=8)
    for layer in fl.layers:
        layer.net.weights[-1] = rng.normal(0, 0.3, size=layer.net.weights[-1].shape)
    n = 6
    normal = np.tile(np.array([[0.0, 0.0, 1.0]]), (n, 1))
    frame = geom.build_frame(normal)
    w_o = np.tile(geom.normalize(np.array([[0.4, 0.1, 0.9]])), (n, 1))
    x = rng.uniform(-1.0, 1.0, (n, 3))
    u = rng.uniform(0.1, 0.9, (n, 2))
    d, _ = geom.square_to_dir(u, frame)
    I = rng.uniform(0.0, 1.0, n)
    I[0] = 0.0  # exercise the zero-integrand path
    q_hat = rng.uniform(0.2, 1.0, n)
    valid = np.ones(n, dtype=bool)
    params = {**fl.named_params("diff_flow"), **grid.named_params("vf")}

    def f(p):
        fl.load_named("diff_flow", p)
        grid.load_named("vf", p)
        loss, grads = tr.ce_loss(fl, grid, d, x, w_o, frame, I, q_hat, valid, "diff_flow")
        return loss, grads

    return f, params


CASES = [
    ("mlp", _mlp_case),
    ("tensor-grid", _grid_case),
    ("pwquad-warp", _warp_case),
    ("flow-logpdf-incident", lambda r: _flow_case(r, flowmod.DOMAIN_INCIDENT)),
    ("flow-logpdf-half", lambda r: _flow_case(r, flowmod.DOMAIN_HALF)),
    ("material-field", _material_case),
    ("envmap", _env_case),
    ("indirect-light", _indirect_case),
    ("cross-entropy-loss", _ce_case),
]


def run_all(seed: int = 0, verbose: bool = False) -> float:
    """Run every finite-difference case; returns the worst relative error."""
    worst = 0.0
    for name, make in CASES:
        rng = np.random.default_rng(seed)
        f, params = make(rng)
        err = nn.finite_diff_check(f, params, h=1e-5)
        if verbose:
            status = "ok" if err < REL_TOL else "FAIL"
            print(f"{name:<24} rel-err {err:.3e}  {status}")
        worst = max(worst, err)
    return worst
