"""Closed-form backpropagation through the unfolded network.

Convention. For a real loss f of a complex matrix X the differential is
df = 2 Re Tr(G dX); G is the trace-form gradient and has transposed shape
relative to X. The steepest-ascent (Wirtinger) gradient is df/dX* = G^H,
same shape as X. All internal recurrences here propagate trace-form
matrices because they compose by plain matrix products; every public
function returns conjugate-form gradients ready for gradient ascent and
directly comparable with the finite-difference oracle, which estimates
df/dX* entrywise as (df/dRe + i df/dIm) / 2.

The loss is the weighted sum rate in nats of the final-layer precoder.
The final power rescaling never contributes: the loss is exactly invariant
to a common scaling of all precoders, so composing with it leaves the
gradient unchanged. The per-layer rescalings of inner layers do contribute
and are handled by normalization_backward.

Structure of one backward transition, from layer l+1 down to layer l:

  1. complete the U gradient of layer l+1 with its own error-matrix path
     (E = I - U^H H V depends on U^H, so this enters conjugated);
  2. propagate through the U surrogate's dependence on A(V^l) and on the
     right factor H V^l, yielding the gradient at the normalized V^l;
  3. undo the power rescaling of layer l;
  4. propagate through the V surrogate of layer l into W^l and U^l
     (the denominator B couples every user's U and W).

Hadamard-sandwich terms (the derivative of the diagonal-reciprocal map)
are assembled with the generalized chain rule gcr_propagate.
"""

from dataclasses import dataclass, field

import numpy as np

from .kernels import diag_reciprocal, hadamard, stable_inverse
from .network import (ForwardTrace, IMPROVED, LayerParams, ModelParams,
                      STANDARD, forward_pass, inv_surrogate)
from .scenario import ChannelSample, SystemConfig
from .wmmse import total_power, v_right_factor


# --- generalized chain rule ---------------------------------------------------

@dataclass
class GcrLayerSpec:
    """Coefficients of one linear-plus-Hadamard layer transition.

    Encodes G_prev = E ((F G A) . B^T) C where "." is the Hadamard product.
    A None entry means identity (for B: no Hadamard mask).
    """

    a: np.ndarray = None
    b: np.ndarray = None
    c: np.ndarray = None
    e: np.ndarray = None
    f: np.ndarray = None


def gcr_propagate(g: np.ndarray, spec: GcrLayerSpec) -> np.ndarray:
    """Pull a trace-form gradient back through one sandwich layer."""
    out = g
    if spec.f is not None:
        out = spec.f @ out
    if spec.a is not None:
        out = out @ spec.a
    if spec.b is not None:
        out = hadamard(out, spec.b.T)
    if spec.e is not None:
        out = spec.e @ out
    if spec.c is not None:
        out = out @ spec.c
    return out


# --- finite-difference oracle ---------------------------------------------------

def fd_wirtinger(loss_fn, array: np.ndarray, index, h: float = None) -> complex:
    """Central-difference estimate of df/dX* at one entry.

    loss_fn is a zero-argument callable reading array; the entry is
    perturbed in place and restored. Step defaults to 1e-6 * max(1, |entry|).
    """
    orig = array[index]
    if h is None:
        h = 1e-6 * max(1.0, abs(orig))
    array[index] = orig + h
    f_re_p = loss_fn()
    array[index] = orig - h
    f_re_m = loss_fn()
    array[index] = orig + 1j * h
    f_im_p = loss_fn()
    array[index] = orig - 1j * h
    f_im_m = loss_fn()
    array[index] = orig
    d_re = (f_re_p - f_re_m) / (2.0 * h)
    d_im = (f_im_p - f_im_m) / (2.0 * h)
    return 0.5 * (d_re + 1j * d_im)


def fd_gradient(loss_fn, array: np.ndarray, h: float = None) -> np.ndarray:
    """Full conjugate-form FD gradient of loss_fn with respect to array."""
    out = np.empty_like(array, dtype=np.complex128)
    for index in np.ndindex(array.shape):
        out[index] = fd_wirtinger(loss_fn, array, index, h)
    return out


def fd_model_gradient(params: ModelParams, sample: ChannelSample,
                      config: SystemConfig, h: float = None) -> ModelParams:
    """FD gradient of the end-to-end loss for every trainable entry.

    Returns a ModelParams-shaped container of conjugate-form gradients.
    """
    def loss():
        return forward_pass(params, sample, config).loss_nats

    grads = []
    for layer in params.layers:
        out = {}
        for name, arr in layer.blocks():
            out[name] = fd_gradient(loss, arr, h)
        grads.append(LayerParams(**out))
    return ModelParams(L=params.L, layers=grads, variant=params.variant)


# --- gradient bundle ------------------------------------------------------------

@dataclass
class GradientBundle:
    """Conjugate-form gradients of the per-sample loss (nats).

    param_grads mirrors the model structure; state gradients mirror the
    forward shapes: Gu (K,Nr,d), Gw (K,d,d), Gv/Gv_tilde (K,Nt,d). Gv is the
    gradient at the pre-rescaling precoder of the layer, Gv_tilde at its
    rescaled output; both are None for the last layer, whose precoder is
    handled analytically. Gv0 is the gradient at the network input.
    """

    param_grads: list = field(default_factory=list)
    Gu: list = field(default_factory=list)
    Gw: list = field(default_factory=list)
    Gv: list = field(default_factory=list)
    Gv_tilde: list = field(default_factory=list)
    Gv0: np.ndarray = None
    loss_nats: float = 0.0


def _conj_form(g: np.ndarray) -> np.ndarray:
    """Trace-form to conjugate-form: G -> G^H, stacked over leading axes."""
    return np.conj(np.swapaxes(g, -1, -2))


# --- building blocks (trace form) -------------------------------------------------

def _neg_sq_recip(mat: np.ndarray) -> np.ndarray:
    """-(M+ . M+) for the derivative of the diagonal-reciprocal map."""
    r = diag_reciprocal(mat)
    return -hadamard(r, r)


def _surrogate_da_coeff(g: np.ndarray, mat: np.ndarray, x: np.ndarray,
                        y: np.ndarray, right: np.ndarray, variant: str,
                        p: np.ndarray):
    """Trace-form coefficient of d(mat) for one surrogate application.

    The surrogate output enters the loss as Tr(g d(S(mat) @ right)); this
    returns (J, L) with J the reciprocal/inverse-path term and L the
    linear-path term, so that the coefficient of d(mat) is J + L.
    right=None means the surrogate output is used directly (W block).
    """
    rg = g if right is None else right @ g
    if variant == STANDARD:
        j = gcr_propagate(rg, GcrLayerSpec(f=x, b=_neg_sq_recip(mat)))
        l = y @ rg
    else:
        inv = stable_inverse(mat)
        j = -inv @ x @ rg @ inv
        l = y @ rg @ p
    return j, l


def _surrogate_matrix(mat, layer: LayerParams, block: str, k: int, variant: str):
    x = getattr(layer, "X" + block)[k]
    y = getattr(layer, "Y" + block)[k]
    z = getattr(layer, "Z" + block)[k]
    p_all = getattr(layer, "P" + block)
    p = None if p_all is None else p_all[k]
    return inv_surrogate(mat, x, y, z, variant, p)


# --- last layer -------------------------------------------------------------------

def _last_layer_partials(trace: ForwardTrace, sample: ChannelSample,
                         config: SystemConfig):
    """Trace-form gradients of the loss through the exact final V update.

    Treats the last layer's U and W as free inputs of f(V(U, W)) where
    V_k = omega_k C^{-1} H_k^H U_k W_k with C the shared denominator, and f
    the sum rate in nats. Derived with matrix differentials; the inner-layer
    path through the last layer's own error matrix is NOT included here and
    is added by the backward transition (same contract as every layer).
    """
    h = sample.H
    lt = trace.layers[-1]
    u, w, v, c = lt.U, lt.W, lt.V_pre, lt.B
    k_users, nt = config.K, config.Nt
    s = config.sigma ** 2 / config.P_T
    omega = config.omega
    pwr = total_power(v)

    v_wide = v.transpose(1, 0, 2).reshape(nt, -1)
    eye_r = np.eye(config.Nr, dtype=np.complex128)
    t1 = np.zeros((nt, nt), dtype=np.complex128)
    r_all = np.zeros((nt, nt), dtype=np.complex128)
    r_own = np.empty((k_users, nt, nt), dtype=np.complex128)
    t_psi = 0.0 + 0.0j
    t_phi = 0.0 + 0.0j
    for k in range(k_users):
        hv_all = h[k] @ v_wide
        psi = s[k] * pwr * eye_r + hv_all @ hv_all.conj().T
        hv_k = h[k] @ v[k]
        phi = psi - hv_k @ hv_k.conj().T
        psi_inv = stable_inverse(psi)
        phi_inv = stable_inverse(phi)
        t1 += omega[k] * (h[k].conj().T @ psi_inv @ h[k])
        r_own[k] = omega[k] * (h[k].conj().T @ phi_inv @ h[k])
        r_all += r_own[k]
        t_psi += omega[k] * s[k] * np.trace(psi_inv)
        t_phi += omega[k] * s[k] * np.trace(phi_inv)

    eye_t = np.eye(nt, dtype=np.complex128)
    gv = np.empty((k_users, config.d, nt), dtype=np.complex128)
    for n in range(k_users):
        d_n = t1 - (r_all - r_own[n]) + (t_psi - t_phi) * eye_t
        gv[n] = v[n].conj().T @ d_n

    c_inv = stable_inverse(c)
    q = sum(v[n] @ gv[n] for n in range(k_users)) @ c_inv
    tr_q = np.trace(q)

    gu = np.empty((k_users, config.d, config.Nr), dtype=np.complex128)
    gw = np.empty((k_users, config.d, config.d), dtype=np.complex128)
    for n in range(k_users):
        p_n = gv[n] @ c_inv @ h[n].conj().T
        uh_hqh = u[n].conj().T @ h[n] @ q @ h[n].conj().T
        uh_hqh_c = u[n].conj().T @ h[n] @ q.conj().T @ h[n].conj().T
        gu[n] = omega[n] * (
            w[n] @ p_n
            - s[n] * tr_q * (w[n] @ u[n].conj().T)
            - w[n] @ uh_hqh
            - s[n] * np.conj(tr_q) * (w[n].conj().T @ u[n].conj().T)
            - w[n].conj().T @ uh_hqh_c
        )
        gw[n] = omega[n] * (
            p_n @ u[n]
            - s[n] * tr_q * (u[n].conj().T @ u[n])
            - uh_hqh @ u[n]
        )
    return gu, gw


def last_layer_gradients(trace: ForwardTrace, sample: ChannelSample,
                         config: SystemConfig):
    """Conjugate-form gradients of the loss w.r.t. the last layer's U and W."""
    gu, gw = _last_layer_partials(trace, sample, config)
    return _conj_form(gu), _conj_form(gw)


# --- rescaling --------------------------------------------------------------------

def _norm_backward_trace(g_tilde: np.ndarray, v_pre: np.ndarray, a: float,
                         p_t: float) -> np.ndarray:
    """Pull a trace-form V gradient back through the power rescaling.

    With V = sqrt(P_T / a) Vbar and a = sum_k Tr(Vbar_k Vbar_k^H), the
    rescaling contributes both a uniform gain and a rank-one radial term:

        G_n = gamma Gt_n - sqrt(P_T) a^{-3/2} Re(sum_m Tr(Gt_m Vbar_m)) Vbar_n^H
    """
    gamma = np.sqrt(p_t / a)
    radial = sum(np.trace(g_tilde[m] @ v_pre[m]) for m in range(len(v_pre)))
    coeff = np.sqrt(p_t) * a ** (-1.5) * radial.real
    return gamma * g_tilde - coeff * _conj_form(v_pre)


def normalization_backward(g_tilde: np.ndarray, v_pre: np.ndarray,
                           p_t: float) -> np.ndarray:
    """Conjugate-form version of the rescaling pullback.

    g_tilde is the gradient at the rescaled precoder, v_pre the precoder
    before rescaling. Applied even when v_pre already meets the power budget
    (gamma = 1): the radial projection term is part of the map.
    """
    a = total_power(v_pre)
    return _conj_form(_norm_backward_trace(_conj_form(g_tilde), v_pre, a, p_t))


# --- backward transition ------------------------------------------------------------

def _e_path(gw: np.ndarray, layer: LayerParams, lt, v_prev: np.ndarray,
            h: np.ndarray, config: SystemConfig, variant: str):
    """Paths through E = I - U^H H V_prev of one layer.

    Returns (gu_add, gv_tilde_add): the dU^H contribution (conjugated into
    trace form) and the dV_prev contribution.
    """
    k_users = config.K
    gu_add = np.empty((k_users, config.d, config.Nr), dtype=np.complex128)
    gvt_add = np.empty((k_users, config.d, config.Nt), dtype=np.complex128)
    for k in range(k_users):
        j, l = _surrogate_da_coeff(gw[k], lt.E[k], layer.Xw[k], layer.Yw[k],
                                   None, variant,
                                   None if layer.Pw is None else layer.Pw[k])
        omega_mat = j + l
        gu_add[k] = -omega_mat.conj().T @ v_prev[k].conj().T @ h[k].conj().T
        gvt_add[k] = -omega_mat @ lt.U[k].conj().T @ h[k]
    return gu_add, gvt_add


def _u_path(gu: np.ndarray, layer: LayerParams, lt, v_prev: np.ndarray,
            h: np.ndarray, config: SystemConfig, variant: str):
    """Paths through U = S(A(V_prev)) H V_prev + O into V_prev."""
    k_users = config.K
    s = config.sigma ** 2 / config.P_T
    n_mats = np.empty((k_users, config.Nr, config.Nr), dtype=np.complex128)
    gvt = np.zeros((k_users, config.d, config.Nt), dtype=np.complex128)
    for k in range(k_users):
        right = h[k] @ v_prev[k]
        j, l = _surrogate_da_coeff(gu[k], lt.A[k], layer.Xu[k], layer.Yu[k],
                                   right, variant,
                                   None if layer.Pu is None else layer.Pu[k])
        theta = j + l
        n_mats[k] = theta + theta.conj().T
        s_u = _surrogate_matrix(lt.A[k], layer, "u", k, variant)
        gvt[k] += gu[k] @ s_u @ h[k]  # right-factor path
    for n in range(k_users):
        for k in range(k_users):
            tr_n = np.trace(n_mats[k])
            gvt[n] += s[k] * tr_n * v_prev[n].conj().T
            gvt[n] += v_prev[n].conj().T @ h[k].conj().T @ n_mats[k] @ h[k]
    return gvt


def _v_block_path(gv: np.ndarray, layer: LayerParams, lt, h: np.ndarray,
                  config: SystemConfig, variant: str):
    """Paths through V = S(B(U, W)) R + O into this layer's U and W.

    R_k = omega_k H_k^H U_k W_k and B couples all users, so each user's
    precoder gradient feeds back into every user's U and W.
    """
    k_users = config.K
    s = config.sigma ** 2 / config.P_T
    omega = config.omega
    xi = np.zeros((config.Nt, config.Nt), dtype=np.complex128)
    m_v = []
    for k in range(k_users):
        right = v_right_factor(h[k], lt.U[k], lt.W[k], omega[k])
        j, l = _surrogate_da_coeff(gv[k], lt.B, layer.Xv[k], layer.Yv[k],
                                   right, variant,
                                   None if layer.Pv is None else layer.Pv[k])
        xi += j + l
        s_v = _surrogate_matrix(lt.B, layer, "v", k, variant)
        m_v.append(s_v @ h[k].conj().T)

    tr_xi = np.trace(xi)
    gu = np.empty((k_users, config.d, config.Nr), dtype=np.complex128)
    gw = np.empty((k_users, config.d, config.d), dtype=np.complex128)
    for n in range(k_users):
        u_n, w_n = lt.U[n], lt.W[n]
        uh_h = u_n.conj().T @ h[n]
        hxh = uh_h @ xi @ h[n].conj().T
        hxh_c = uh_h @ xi.conj().T @ h[n].conj().T
        gw[n] = omega[n] * (
            s[n] * tr_xi * (u_n.conj().T @ u_n)
            + hxh @ u_n
            + gv[n] @ m_v[n] @ u_n
        )
        gu[n] = omega[n] * (
            s[n] * tr_xi * (w_n @ u_n.conj().T)
            + w_n @ hxh
            + s[n] * np.conj(tr_xi) * (w_n.conj().T @ u_n.conj().T)
            + w_n.conj().T @ hxh_c
            + w_n @ gv[n] @ m_v[n]
        )
    return gu, gw


def backward_layer(gu_in: np.ndarray, gw_in: np.ndarray, upper_idx: int,
                   trace: ForwardTrace, params: ModelParams,
                   sample: ChannelSample, config: SystemConfig):
    """One backward transition from layer upper_idx to the layer below.

    gu_in/gw_in are conjugate-form gradients of the upper layer's U and W,
    with gu_in covering every consumer except the upper layer's own error
    matrix; that path is completed here. Returns conjugate-form
    (gu_total_upper, gu_lower, gw_lower, gv_lower, gv_tilde_lower); the
    lower entries are the tilde gradient alone when upper_idx is 0 (the
    input layer), i.e. (gu_total, None, None, None, gv0_tilde).
    """
    h = sample.H
    variant = params.variant
    layer_up = params.layers[upper_idx]
    lt_up = trace.layers[upper_idx]
    v_prev = trace.v0 if upper_idx == 0 else trace.layers[upper_idx - 1].V

    gu = _conj_form(gu_in).copy()
    gw = _conj_form(gw_in)

    gu_add, gvt = _e_path(gw, layer_up, lt_up, v_prev, h, config, variant)
    gu += gu_add
    gvt += _u_path(gu, layer_up, lt_up, v_prev, h, config, variant)

    if upper_idx == 0:
        return _conj_form(gu), None, None, None, _conj_form(gvt)

    lt_low = trace.layers[upper_idx - 1]
    layer_low = params.layers[upper_idx - 1]
    gv_low = _norm_backward_trace(gvt, lt_low.V_pre, lt_low.a, config.P_T)
    gu_low, gw_low = _v_block_path(gv_low, layer_low, lt_low, h, config, variant)
    return (_conj_form(gu), _conj_form(gu_low), _conj_form(gw_low),
            _conj_form(gv_low), _conj_form(gvt))


# --- parameter gradients -------------------------------------------------------------

def parameter_gradients(gu: np.ndarray, gw: np.ndarray, gv: np.ndarray,
                        layer: LayerParams, lt, v_prev: np.ndarray,
                        h: np.ndarray, config: SystemConfig,
                        variant: str) -> LayerParams:
    """Conjugate-form gradients for one layer's trainable blocks.

    gu/gw/gv are this layer's conjugate-form state gradients (gu including
    the layer's own error-matrix path); gv is None for the last layer.
    """
    k_users = config.K
    gu_t, gw_t = _conj_form(gu), _conj_form(gw)
    gv_t = None if gv is None else _conj_form(gv)
    # trace-form coefficients have transposed shape relative to the block
    out = {name: np.empty_like(np.swapaxes(arr, -1, -2))
           for name, arr in layer.blocks()}

    for k in range(k_users):
        right_u = h[k] @ v_prev[k]
        rg_u = right_u @ gu_t[k]
        a_k, e_k = lt.A[k], lt.E[k]
        if variant == STANDARD:
            out["Xu"][k] = rg_u @ diag_reciprocal(a_k)
            out["Yu"][k] = rg_u @ a_k
            out["Xw"][k] = gw_t[k] @ diag_reciprocal(e_k)
            out["Yw"][k] = gw_t[k] @ e_k
        else:
            a_inv, e_inv = stable_inverse(a_k), stable_inverse(e_k)
            out["Xu"][k] = rg_u @ a_inv
            out["Pu"][k] = a_k @ layer.Yu[k] @ rg_u
            out["Yu"][k] = rg_u @ layer.Pu[k] @ a_k
            out["Xw"][k] = gw_t[k] @ e_inv
            out["Pw"][k] = e_k @ layer.Yw[k] @ gw_t[k]
            out["Yw"][k] = gw_t[k] @ layer.Pw[k] @ e_k
        out["Zu"][k] = rg_u
        out["Ou"][k] = gu_t[k]
        out["Zw"][k] = gw_t[k]

        if gv_t is not None:
            right_v = v_right_factor(h[k], lt.U[k], lt.W[k], config.omega[k])
            rg_v = right_v @ gv_t[k]
            if variant == STANDARD:
                out["Xv"][k] = rg_v @ diag_reciprocal(lt.B)
                out["Yv"][k] = rg_v @ lt.B
            else:
                out["Xv"][k] = rg_v @ stable_inverse(lt.B)
                out["Pv"][k] = lt.B @ layer.Yv[k] @ rg_v
                out["Yv"][k] = rg_v @ layer.Pv[k] @ lt.B
            out["Zv"][k] = rg_v
            out["Ov"][k] = gv_t[k]

    return LayerParams(**{name: _conj_form(arr) for name, arr in out.items()})


# --- full backward pass ----------------------------------------------------------------

def backward_pass(trace: ForwardTrace, params: ModelParams,
                  sample: ChannelSample, config: SystemConfig) -> GradientBundle:
    """Gradients of the per-sample loss (nats) for every trainable entry."""
    if not trace.normalized:
        raise ValueError("backward_pass needs a trace from a normalized forward run")
    n_layers = params.L
    gu_list = [None] * n_layers
    gw_list = [None] * n_layers
    gv_list = [None] * n_layers
    gvt_list = [None] * n_layers

    gu, gw = last_layer_gradients(trace, sample, config)
    gw_list[-1] = gw
    gv0 = None
    for i in range(n_layers - 1, -1, -1):
        res = backward_layer(gu, gw_list[i], i, trace, params, sample, config)
        gu_list[i] = res[0]
        if i == 0:
            gv0 = res[4]
        else:
            gu, gw_list[i - 1], gv_list[i - 1], gvt_list[i - 1] = \
                res[1], res[2], res[3], res[4]

    bundle = GradientBundle(Gu=gu_list, Gw=gw_list, Gv=gv_list,
                            Gv_tilde=gvt_list, Gv0=gv0,
                            loss_nats=trace.loss_nats)
    for i in range(n_layers):
        v_prev = trace.v0 if i == 0 else trace.layers[i - 1].V
        bundle.param_grads.append(parameter_gradients(
            gu_list[i], gw_list[i], gv_list[i], params.layers[i],
            trace.layers[i], v_prev, sample.H, config, params.variant))
    return bundle
