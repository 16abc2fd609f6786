"""Conditioned normalizing flows on the unit square built from
piecewise-quadratic coupling layers, with sampling, PDF inference, and exact
parameter gradients of log-PDF.

Each coupling layer passes one coordinate through and warps the other by the
CDF of a piecewise-linear PDF whose vertex values and bin widths come from a
small MLP of (passthrough coordinate, conditioning vector). The conditioning
vector is [VM-grid feature at x, reflected direction in world coordinates].

Direction conventions: `coupling_forward` applies the CDF (used for PDF
inference, mapping a sample back toward uniform), `coupling_inverse` applies
the inverse CDF (used for sampling). Both report the same log-density
contribution log p evaluated at the sample-side point, so the density
reported at sampling time equals the density inferred for that direction.
"""

import copy
from dataclasses import dataclass

import numpy as np

from flowtrace import geom, nn, tensorgrid
from flowtrace._backend import njit, use_numba
from flowtrace.brdf import HALF_VECTOR_EPS, DirSamples
from flowtrace.errors import DegenerateHalfVector
from flowtrace.geom import Frame, clamp_square, dot, normalize, reflect

LOG_TWO_PI = np.log(2.0 * np.pi)

DOMAIN_INCIDENT = "incident"
DOMAIN_HALF = "half"


# ---------------------------------------------------------------------------
# piecewise-quadratic warp primitives
# ---------------------------------------------------------------------------


@dataclass
class PwQuadBins:
    """Normalized bins of one warp: widths sum to 1 and the piecewise-linear
    PDF over the vertices integrates to 1 (both by construction)."""

    W: np.ndarray  # (N, K)
    V: np.ndarray  # (N, K+1)


@dataclass
class BinsAux:
    """Intermediates of bins_from_raw needed by its backward pass."""

    E: np.ndarray  # shifted exp of vertex logits (N, K+1)
    Z: np.ndarray  # normalizer (N,)


def bins_from_raw(raw: np.ndarray) -> tuple[PwQuadBins, BinsAux]:
    """Normalize raw net output (N, 2K+1) into bins.

    First K entries are width logits (softmax); the remaining K+1 are vertex
    logits, exponentiated and scaled so the trapezoid sum of the PDF is 1.
    """
    raw = np.atleast_2d(raw)
    k = raw.shape[1] // 2
    wl = raw[:, :k]
    vl = raw[:, k:]
    wl = wl - wl.max(axis=1, keepdims=True)
    ew = np.exp(wl)
    W = ew / ew.sum(axis=1, keepdims=True)
    E = np.exp(vl - vl.max(axis=1, keepdims=True))
    Z = np.sum(0.5 * (E[:, :-1] + E[:, 1:]) * W, axis=1)
    V = E / Z[:, None]
    return PwQuadBins(W=W, V=V), BinsAux(E=E, Z=Z)


def bins_backward(bins: PwQuadBins, aux: BinsAux, dW: np.ndarray, dV: np.ndarray) -> np.ndarray:
    """VJP of bins_from_raw: (dW, dV) -> gradient w.r.t. the raw net output."""
    E, Z = aux.E, aux.Z
    dE = dV / Z[:, None]
    dZ = -np.sum(dV * E, axis=1) / (Z * Z)
    # Z = sum_k (E_k + E_{k+1})/2 * W_k
    s = 0.5 * (
        np.concatenate([bins.W, np.zeros((bins.W.shape[0], 1))], axis=1)
        + np.concatenate([np.zeros((bins.W.shape[0], 1)), bins.W], axis=1)
    )
    dE = dE + dZ[:, None] * s
    dW_total = dW + dZ[:, None] * 0.5 * (E[:, :-1] + E[:, 1:])
    d_vl = dE * E
    d_wl = bins.W * (dW_total - np.sum(bins.W * dW_total, axis=1, keepdims=True))
    return np.concatenate([d_wl, d_vl], axis=1)


def _locate(W: np.ndarray, x: np.ndarray):
    """Bin index and relative position for each row: x in [edge_b, edge_b+1)."""
    edges = np.cumsum(W, axis=1)
    b = np.sum(edges[:, :-1] <= x[:, None], axis=1)
    lo = np.take_along_axis(
        np.concatenate([np.zeros((W.shape[0], 1)), edges], axis=1), b[:, None], axis=1
    )[:, 0]
    wb = np.take_along_axis(W, b[:, None], axis=1)[:, 0]
    alpha = np.clip((x - lo) / wb, 0.0, 1.0)
    return b, alpha, wb


@njit
def _pwquad_eval_numba(W, V, x, want_cdf):  # pragma: no cover - numba twin
    n, k = W.shape
    p = np.empty(n)
    c = np.empty(n)
    bs = np.empty(n, dtype=np.int64)
    al = np.empty(n)
    for i in range(n):
        acc_w = 0.0
        acc_m = 0.0
        b = k - 1
        for j in range(k):
            nw = acc_w + W[i, j]
            if x[i] < nw or j == k - 1:
                b = j
                break
            acc_w = nw
            acc_m += 0.5 * (V[i, j] + V[i, j + 1]) * W[i, j]
        wb = W[i, b]
        a = (x[i] - acc_w) / wb
        if a < 0.0:
            a = 0.0
        elif a > 1.0:
            a = 1.0
        v0 = V[i, b]
        v1 = V[i, b + 1]
        p[i] = v0 + (v1 - v0) * a
        if want_cdf:
            c[i] = acc_m + 0.5 * a * wb * ((2.0 - a) * v0 + a * v1)
        bs[i] = b
        al[i] = a
    return p, c, bs, al


def pwquad_pdf(bins: PwQuadBins, x: np.ndarray, aux: bool = False):
    """Piecewise-linear PDF value at x.

    Out-of-range x clips to [0, 1]; the open-square contract is enforced where
    square points are created, not here, because boundary bins can be narrower
    than that epsilon.
    """
    x = np.clip(np.atleast_1d(x), 0.0, 1.0)
    if use_numba():
        p, _, b, alpha = _pwquad_eval_numba(bins.W, bins.V, x, False)
    else:
        b, alpha, _ = _locate(bins.W, x)
        v0 = np.take_along_axis(bins.V, b[:, None], axis=1)[:, 0]
        v1 = np.take_along_axis(bins.V, b[:, None] + 1, axis=1)[:, 0]
        p = v0 + (v1 - v0) * alpha
    if aux:
        return p, b, alpha
    return p


def pwquad_cdf(bins: PwQuadBins, x: np.ndarray, aux: bool = False):
    """Integral of the piecewise-linear PDF from 0 to x (a monotone quadratic
    spline with C(0) = 0, C(1) = 1)."""
    x = np.clip(np.atleast_1d(x), 0.0, 1.0)
    if use_numba():
        _, c, b, alpha = _pwquad_eval_numba(bins.W, bins.V, x, True)
    else:
        b, alpha, wb = _locate(bins.W, x)
        masses = 0.5 * (bins.V[:, :-1] + bins.V[:, 1:]) * bins.W
        cum = np.concatenate([np.zeros((bins.W.shape[0], 1)), np.cumsum(masses, axis=1)], axis=1)
        lo = np.take_along_axis(cum, b[:, None], axis=1)[:, 0]
        v0 = np.take_along_axis(bins.V, b[:, None], axis=1)[:, 0]
        v1 = np.take_along_axis(bins.V, b[:, None] + 1, axis=1)[:, 0]
        c = lo + 0.5 * alpha * wb * ((2.0 - alpha) * v0 + alpha * v1)
    if aux:
        return c, b, alpha
    return c


@njit
def _pwquad_inv_numba(W, V, y):  # pragma: no cover - numba twin
    n, k = W.shape
    out = np.empty(n)
    logp = np.empty(n)
    for i in range(n):
        acc_w = 0.0
        acc_m = 0.0
        b = k - 1
        for j in range(k):
            m = 0.5 * (V[i, j] + V[i, j + 1]) * W[i, j]
            if y[i] < acc_m + m or j == k - 1:
                b = j
                break
            acc_m += m
            acc_w += W[i, j]
        v0 = V[i, b]
        v1 = V[i, b + 1]
        mfrac = (y[i] - acc_m) / W[i, b]
        if mfrac < 0.0:
            mfrac = 0.0
        disc = v0 * v0 + 2.0 * (v1 - v0) * mfrac
        if disc < 0.0:
            disc = 0.0
        a = 2.0 * mfrac / (v0 + np.sqrt(disc))
        if a < 0.0:
            a = 0.0
        elif a > 1.0:
            a = 1.0
        out[i] = acc_w + a * W[i, b]
        logp[i] = np.log(v0 + (v1 - v0) * a)
    return out, logp


def pwquad_inverse_cdf(bins: PwQuadBins, y: np.ndarray, with_logp: bool = False):
    """Invert the CDF by per-bin quadratic solve (rationalized stable root;
    degenerates smoothly to the linear solve when the two vertices agree)."""
    y = np.clip(np.atleast_1d(y), 0.0, 1.0)
    if use_numba():
        x, logp = _pwquad_inv_numba(bins.W, bins.V, y)
    else:
        masses = 0.5 * (bins.V[:, :-1] + bins.V[:, 1:]) * bins.W
        cum = np.cumsum(masses, axis=1)
        b = np.sum(cum[:, :-1] <= y[:, None], axis=1)
        cum0 = np.concatenate([np.zeros((bins.W.shape[0], 1)), cum], axis=1)
        lo_m = np.take_along_axis(cum0, b[:, None], axis=1)[:, 0]
        wb = np.take_along_axis(bins.W, b[:, None], axis=1)[:, 0]
        v0 = np.take_along_axis(bins.V, b[:, None], axis=1)[:, 0]
        v1 = np.take_along_axis(bins.V, b[:, None] + 1, axis=1)[:, 0]
        mfrac = np.maximum((y - lo_m) / wb, 0.0)
        disc = np.maximum(v0 * v0 + 2.0 * (v1 - v0) * mfrac, 0.0)
        alpha = np.clip(2.0 * mfrac / (v0 + np.sqrt(disc)), 0.0, 1.0)
        edges = np.concatenate([np.zeros((bins.W.shape[0], 1)), np.cumsum(bins.W, axis=1)], axis=1)
        lo_w = np.take_along_axis(edges, b[:, None], axis=1)[:, 0]
        x = lo_w + alpha * wb
        logp = np.log(v0 + (v1 - v0) * alpha)
    if with_logp:
        return x, logp
    return x


def _vertex_scatter(n_vertices: int, b: np.ndarray, vals_b: np.ndarray, vals_b1: np.ndarray):
    """(N,) contributions at vertices b and b+1 -> dense (N, K+1)."""
    idx = np.arange(n_vertices)[None, :]
    out = np.where(idx == b[:, None], vals_b[:, None], 0.0)
    out += np.where(idx == b[:, None] + 1, vals_b1[:, None], 0.0)
    return out


def pwquad_logpdf_vjp(bins: PwQuadBins, x: np.ndarray, b, alpha, g: np.ndarray):
    """VJP of log pwquad_pdf w.r.t. (W, V) plus the derivative w.r.t. x."""
    v0 = np.take_along_axis(bins.V, b[:, None], axis=1)[:, 0]
    v1 = np.take_along_axis(bins.V, b[:, None] + 1, axis=1)[:, 0]
    wb = np.take_along_axis(bins.W, b[:, None], axis=1)[:, 0]
    p = v0 + (v1 - v0) * alpha
    dV = _vertex_scatter(bins.V.shape[1], b, g * (1.0 - alpha) / p, g * alpha / p)
    dalpha = g * (v1 - v0) / p
    kidx = np.arange(bins.W.shape[1])[None, :]
    lt = kidx < b[:, None]
    dW = np.where(lt, (-dalpha / wb)[:, None], 0.0)
    dW += np.where(kidx == b[:, None], (-dalpha * alpha / wb)[:, None], 0.0)
    dx = dalpha / wb
    return dW, dV, dx


def pwquad_cdf_vjp(bins: PwQuadBins, x: np.ndarray, b, alpha, g: np.ndarray):
    """VJP of pwquad_cdf w.r.t. (W, V) plus the derivative w.r.t. x (= p)."""
    v0 = np.take_along_axis(bins.V, b[:, None], axis=1)[:, 0]
    v1 = np.take_along_axis(bins.V, b[:, None] + 1, axis=1)[:, 0]
    wb = np.take_along_axis(bins.W, b[:, None], axis=1)[:, 0]
    p = v0 + (v1 - v0) * alpha
    kidx = np.arange(bins.W.shape[1])[None, :]
    lt = kidx < b[:, None]
    eq = kidx == b[:, None]
    # full bins before b: + (V_k + V_{k+1})/2, and -p from the alpha shift
    half_sum = 0.5 * (bins.V[:, :-1] + bins.V[:, 1:])
    dW = np.where(lt, g[:, None] * (half_sum - p[:, None]), 0.0)
    dW += np.where(
        eq,
        (g * (0.5 * alpha * ((2.0 - alpha) * v0 + alpha * v1) - alpha * p))[:, None],
        0.0,
    )
    # vertex k is the left vertex of bin k and the right vertex of bin k-1
    dV = np.zeros_like(bins.V)
    contrib = np.where(lt, g[:, None] * 0.5 * bins.W, 0.0)
    dV[:, :-1] += contrib
    dV[:, 1:] += contrib
    dV += _vertex_scatter(
        bins.V.shape[1],
        b,
        g * 0.5 * alpha * (2.0 - alpha) * wb,
        g * 0.5 * alpha * alpha * wb,
    )
    dx = g * p
    return dW, dV, dx


# ---------------------------------------------------------------------------
# coupling layers and flows
# ---------------------------------------------------------------------------


@dataclass
class CouplingLayer:
    net: nn.MLP
    transformed_dim: int  # 0 or 1; the other coordinate passes through
    n_bins: int


@dataclass
class NormalizingFlow:
    """Composition of coupling layers over the unit square; adjacent layers
    transform different coordinates. `domain` selects whether the square maps
    to the incident direction or to the microfacet half vector."""

    layers: list
    domain: str = DOMAIN_INCIDENT

    @property
    def n_bins(self) -> int:
        return self.layers[0].n_bins

    def named_params(self, prefix: str) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.net.named_params(f"{prefix}.layer{i}"))
        return out

    def load_named(self, prefix: str, params: dict):
        for i, layer in enumerate(self.layers):
            layer.net.load_named(f"{prefix}.layer{i}", params)


def create_flow(
    cond_dim: int,
    rng: np.random.Generator,
    n_bins: int = 32,
    n_layers: int = 2,
    hidden: int = 64,
    domain: str = DOMAIN_INCIDENT,
) -> NormalizingFlow:
    """Flow at its identity configuration: zero-initialized final net layers
    make every warp uniform, so the density starts at exactly 1/(2 pi)."""
    layers = []
    for i in range(n_layers):
        net = nn.MLP((1 + cond_dim, hidden, hidden, 2 * n_bins + 1), rng, zero_last=True)
        # first layer warps the second coordinate, then alternate
        layers.append(CouplingLayer(net=net, transformed_dim=(i + 1) % 2, n_bins=n_bins))
    return NormalizingFlow(layers=layers, domain=domain)


def flow_conditioning(grid: tensorgrid.VMGrid, x: np.ndarray, w_o: np.ndarray, frame: Frame):
    """Conditioning vector [V_f feature, reflected direction].

    The reflected direction is expressed in the local shading frame: the
    square parameterization is frame-relative, so local coordinates keep the
    lobe-placement problem continuous across the tangent-frame sign flip
    (world coordinates would force the nets to learn that discontinuity).
    """
    feat = tensorgrid.feature_query(grid, x)
    w_r = reflect(np.atleast_2d(w_o), np.atleast_2d(frame.normal))
    return np.concatenate([feat, frame.to_local(w_r)], axis=1)


def bins_from_net(layer: CouplingLayer, passthrough: np.ndarray, cond: np.ndarray):
    """Evaluate the coupling net and normalize its output into bins."""
    inp = np.concatenate([np.atleast_1d(passthrough)[:, None], np.atleast_2d(cond)], axis=1)
    raw, tape = layer.net.forward(inp)
    bins, aux = bins_from_raw(raw)
    return bins, aux, tape


def coupling_forward(layer: CouplingLayer, pts: np.ndarray, cond: np.ndarray):
    """CDF-direction map (PDF inference): the transformed coordinate moves
    toward the uniform base; log_det is log p at the input point."""
    d = layer.transformed_dim
    pc = 1 - d
    bins, _, _ = bins_from_net(layer, pts[:, pc], cond)
    out = pts.copy()
    out[:, d] = pwquad_cdf(bins, pts[:, d])
    logp = np.log(np.maximum(pwquad_pdf(bins, pts[:, d]), 1e-300))
    return out, logp


def coupling_inverse(layer: CouplingLayer, pts: np.ndarray, cond: np.ndarray):
    """Inverse-CDF map (sampling direction); log_det matches the forward
    log-det at the produced point."""
    d = layer.transformed_dim
    pc = 1 - d
    bins, _, _ = bins_from_net(layer, pts[:, pc], cond)
    out = pts.copy()
    out[:, d], logp = pwquad_inverse_cdf(bins, pts[:, d], with_logp=True)
    return out, logp


def _square_logpdf(flow: NormalizingFlow, s: np.ndarray, cond: np.ndarray) -> np.ndarray:
    """log density on the unit square at sample-side points s."""
    logq = np.zeros(s.shape[0])
    pts = s
    for layer in reversed(flow.layers):
        d = layer.transformed_dim
        bins, _, _ = bins_from_net(layer, pts[:, 1 - d], cond)
        logq += np.log(np.maximum(pwquad_pdf(bins, pts[:, d]), 1e-300))
        pts = pts.copy()
        pts[:, d] = pwquad_cdf(bins, pts[:, d])
    return logq


def flow_sample(
    flow: NormalizingFlow,
    grid: tensorgrid.VMGrid,
    u: np.ndarray,
    x: np.ndarray,
    w_o: np.ndarray,
    frame: Frame,
    cond: np.ndarray | None = None,
) -> DirSamples:
    """Draw directions with their PDF per steradian from uniform square input.

    Incident domain always lands in the upper hemisphere; half-vector domain
    flags reflections below the horizon invalid (pdf kept for bookkeeping).
    `cond` short-circuits the conditioning computation when the caller has it.
    """
    u = clamp_square(np.atleast_2d(u))
    if cond is None:
        cond = flow_conditioning(grid, x, w_o, frame)
    pts = u
    logq = np.zeros(u.shape[0])
    for layer in flow.layers:
        pts, lp = coupling_inverse(layer, pts, cond)
        logq += lp
    d, _ = geom.square_to_dir(pts, frame)
    if flow.domain == DOMAIN_INCIDENT:
        pdf = np.exp(logq - LOG_TWO_PI)
        return DirSamples(direction=d, pdf=pdf, valid=pdf > 0.0)
    h = d
    h_dot_o = dot(h, np.atleast_2d(w_o))
    w_i = 2.0 * h_dot_o[:, None] * h - np.atleast_2d(w_o)
    valid = (dot(w_i, frame.normal) > 0.0) & (h_dot_o > HALF_VECTOR_EPS)
    pdf = np.exp(logq - LOG_TWO_PI) / np.maximum(4.0 * h_dot_o, 1e-12)
    return DirSamples(direction=w_i, pdf=np.where(valid, pdf, 0.0), valid=valid)


def _half_vector(w_i: np.ndarray, w_o: np.ndarray):
    h = normalize(np.atleast_2d(w_i) + np.atleast_2d(w_o))
    return h, dot(h, np.atleast_2d(w_o))


def flow_pdf(
    flow: NormalizingFlow,
    grid: tensorgrid.VMGrid,
    w_i: np.ndarray,
    x: np.ndarray,
    w_o: np.ndarray,
    frame: Frame,
    cond: np.ndarray | None = None,
) -> np.ndarray:
    """Density per steradian of the flow at given incident directions
    (PDF-inference path: invert the hemisphere warp, then run the CDF maps)."""
    w_i = np.atleast_2d(w_i)
    if cond is None:
        cond = flow_conditioning(grid, x, w_o, frame)
    if flow.domain == DOMAIN_INCIDENT:
        s = geom.dir_to_square(w_i, frame)
        return np.exp(_square_logpdf(flow, s, cond) - LOG_TWO_PI)
    h, h_dot_o = _half_vector(w_i, w_o)
    if np.any(h_dot_o < HALF_VECTOR_EPS):
        raise DegenerateHalfVector("half vector nearly orthogonal to w_o")
    s = geom.dir_to_square(h, frame)
    logq = _square_logpdf(flow, s, cond)
    return np.exp(logq - LOG_TWO_PI) / (4.0 * h_dot_o)


def native_hemisphere_pdf(
    flow: NormalizingFlow,
    grid: tensorgrid.VMGrid,
    d: np.ndarray,
    x: np.ndarray,
    w_o: np.ndarray,
    frame: Frame,
) -> np.ndarray:
    """Density per steradian of the flow's native hemisphere variable (the
    incident direction, or the half vector for half-domain flows). Integrates
    to 1 over the hemisphere regardless of domain."""
    cond = flow_conditioning(grid, x, w_o, frame)
    s = geom.dir_to_square(np.atleast_2d(d), frame)
    return np.exp(_square_logpdf(flow, s, cond) - LOG_TWO_PI)


def flow_log_pdf_with_grad(
    flow: NormalizingFlow,
    grid: tensorgrid.VMGrid,
    w_i: np.ndarray,
    x: np.ndarray,
    w_o: np.ndarray,
    frame: Frame,
    weights: np.ndarray | None = None,
    prefix: str = "flow",
    grid_prefix: str = "vf",
):
    """log q per sample plus d(sum_i weights_i * log q_i)/d(net, grid params).

    The tape is replayed in exact reverse over the inference chain; gradients
    flow through each layer's bins, through the CDF warp into the passthrough
    input of later layers, and through the conditioning feature into the grid.
    """
    w_i = np.atleast_2d(w_i)
    n = w_i.shape[0]
    weights = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    x2 = np.broadcast_to(np.atleast_2d(x), (n, 3))
    feat = tensorgrid.feature_query(grid, x2)
    w_r = reflect(np.atleast_2d(w_o), np.atleast_2d(frame.normal))
    w_r_local = np.broadcast_to(frame.to_local(w_r), (n, 3))
    cond = np.concatenate([feat, w_r_local], axis=1)

    if flow.domain == DOMAIN_INCIDENT:
        s = geom.dir_to_square(w_i, frame)
        log_const = -LOG_TWO_PI * np.ones(n)
    else:
        h, h_dot_o = _half_vector(w_i, w_o)
        if np.any(h_dot_o < HALF_VECTOR_EPS):
            raise DegenerateHalfVector("half vector nearly orthogonal to w_o")
        s = geom.dir_to_square(h, frame)
        log_const = -LOG_TWO_PI - np.log(4.0 * h_dot_o)

    # inference pass, caching everything the backward needs
    caches = []
    logq = np.zeros(n)
    pts = s
    for layer in reversed(flow.layers):
        d = layer.transformed_dim
        xin = np.clip(pts[:, d], 0.0, 1.0)
        bins, baux, tape = bins_from_net(layer, pts[:, 1 - d], cond)
        p, b, alpha = pwquad_pdf(bins, xin, aux=True)
        logq += np.log(np.maximum(p, 1e-300))
        out = pts.copy()
        out[:, d] = pwquad_cdf(bins, xin)
        caches.append((layer, xin, bins, baux, tape, b, alpha))
        pts = out

    # reverse accumulation
    grads = {}
    g_cond = np.zeros_like(cond)
    g_pts = np.zeros((n, 2))
    layer_index = {id(layer): i for i, layer in enumerate(flow.layers)}
    for layer, xin, bins, baux, tape, b, alpha in reversed(caches):
        d = layer.transformed_dim
        dW_c, dV_c, dx_c = pwquad_cdf_vjp(bins, xin, b, alpha, g_pts[:, d])
        dW_p, dV_p, dx_p = pwquad_logpdf_vjp(bins, xin, b, alpha, weights)
        draw = bins_backward(bins, baux, dW_c + dW_p, dV_c + dV_p)
        net_grads, g_in = layer.net.backward(tape, draw)
        grads.update(layer.net.named_grads(f"{prefix}.layer{layer_index[id(layer)]}", net_grads))
        g_cond += g_in[:, 1:]
        g_new = np.zeros((n, 2))
        g_new[:, d] = dx_c + dx_p
        g_new[:, 1 - d] = g_pts[:, 1 - d] + g_in[:, 0]
        g_pts = g_new

    grads.update(tensorgrid.feature_query_backward(grid, x2, g_cond[:, : grid.feature_dim], grid_prefix))
    return logq + log_const, grads


def snapshot(flow: NormalizingFlow, grid: tensorgrid.VMGrid, iteration: int) -> "FlowSnapshot":
    return FlowSnapshot(
        flow=copy.deepcopy(flow), grid=copy.deepcopy(grid), iteration=iteration
    )


@dataclass
class FlowSnapshot:
    """Immutable frozen copy of a flow and its conditioning grid; the live
    flow keeps training while estimators sample from the snapshot."""

    flow: NormalizingFlow
    grid: tensorgrid.VMGrid
    iteration: int

    def sample(self, u, x, w_o, frame, cond=None) -> DirSamples:
        return flow_sample(self.flow, self.grid, u, x, w_o, frame, cond=cond)

    def pdf(self, w_i, x, w_o, frame, cond=None) -> np.ndarray:
        return flow_pdf(self.flow, self.grid, w_i, x, w_o, frame, cond=cond)

    def conditioning(self, x, w_o, frame) -> np.ndarray:
        return flow_conditioning(self.grid, x, w_o, frame)
