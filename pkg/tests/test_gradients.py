"""Unit tests for the closed-form backward pass against finite differences.

Conventions under test: gradients are conjugate-form (df/dX*, same shape as
X), the finite-difference oracle assembles them as (df/dRe + i df/dIm) / 2,
and the generalized chain rule sandwich is G_prev = E((F G A) . B^T) C.
"""

import numpy as np
import pytest

from conftest import bundle_rel_error, crandn, flat_grads
from uwmmse.gradients import (GcrLayerSpec, backward_pass, fd_gradient,
                              fd_model_gradient, fd_wirtinger,
                              gcr_propagate, last_layer_gradients,
                              normalization_backward)
from uwmmse.network import (IMPROVED, STANDARD, final_layer_v, forward_pass,
                            init_params)
from uwmmse.scenario import SystemConfig, sample_channel
from uwmmse.wmmse import scale_to_power, sum_rate


def cfg_small():
    return SystemConfig.from_snr(Nt=4, Nr=2, d=2, K=2, snr_db=10.0)


# --- finite-difference oracle ---------------------------------------------

def test_fd_wirtinger_modulus_squared():
    """d|x|^2/dx* = x; at 3+4i the estimate must return 3+4i."""
    arr = np.array([3.0 + 4.0j])
    g = fd_wirtinger(lambda: float(np.abs(arr[0]) ** 2), arr, 0)
    assert abs(g - (3.0 + 4.0j)) < 1e-8 * 5.0
    assert arr[0] == 3.0 + 4.0j  # entry restored


def test_fd_wirtinger_real_quadratic():
    arr = np.array([1.5 + 0.0j])
    g = fd_wirtinger(lambda: float(arr[0].real ** 2), arr, 0)
    assert abs(g - 1.5) < 1e-9 * 1.5


def test_fd_gradient_frobenius_norm():
    rng = np.random.default_rng(0)
    x = crandn(rng, 3, 2)
    g = fd_gradient(lambda: float(np.sum(np.abs(x) ** 2)), x)
    np.testing.assert_allclose(g, x, rtol=1e-7, atol=1e-9)


# --- generalized chain rule -------------------------------------------------

def test_gcr_identity_passthrough():
    rng = np.random.default_rng(1)
    g = crandn(rng, 3, 4)
    assert np.array_equal(gcr_propagate(g, GcrLayerSpec()), g)
    spec = GcrLayerSpec(a=np.eye(4), b=np.ones((4, 3)), c=np.eye(4),
                        e=np.eye(3), f=np.eye(3))
    assert np.array_equal(gcr_propagate(g, spec), g)


def test_gcr_reduces_to_elementwise_backprop_rule():
    """With F = W^T, B = phi'^T and A = C = E = I the sandwich is the
    textbook rule (W^T g) . phi'; the reference is built entry by entry."""
    rng = np.random.default_rng(2)
    for _ in range(50):
        n, m = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        g = crandn(rng, n, m)
        w = crandn(rng, n, n)
        phi = crandn(rng, n, m)
        lhs = gcr_propagate(g, GcrLayerSpec(f=w.T, b=phi.T))
        rhs = np.empty((n, m), dtype=np.complex128)
        for i in range(n):
            for j in range(m):
                rhs[i, j] = sum(w[k, i] * g[k, j] for k in range(n)) * phi[i, j]
        assert np.abs(lhs - rhs).max() <= 1e-12 * np.abs(rhs).max()


def test_gcr_full_sandwich():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n, m, p, q = (int(rng.integers(1, 6)) for _ in range(4))
        g = crandn(rng, n, m)
        f = crandn(rng, p, n)
        a = crandn(rng, m, q)
        b = crandn(rng, q, p)
        e = crandn(rng, 3, p)
        c = crandn(rng, q, 2)
        lhs = gcr_propagate(g, GcrLayerSpec(a=a, b=b, c=c, e=e, f=f))
        core = np.einsum("pn,nm,mq->pq", f, g, a) * b.T
        rhs = np.einsum("rp,pq,qt->rt", e, core, c)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12 * np.abs(rhs).max())


# --- normalization pullback --------------------------------------------------

def test_normalization_backward_matches_fd():
    """FD of loss(normalize(V)) vs the analytic pullback, for a linear and
    a quadratic loss, at generic power and exactly at the budget."""
    rng = np.random.default_rng(4)
    p_t = 10.0
    for power in (3.7, p_t):
        v_pre = scale_to_power(crandn(rng, 2, 3, 2), power)
        t = crandn(rng, 2, 3, 2)

        def lin_loss():
            vn = scale_to_power(v_pre, p_t)
            return float(np.real(np.vdot(t, vn)))

        g_tilde = t / 2.0  # conj-form gradient of Re<t, x> is t/2
        analytic = normalization_backward(g_tilde, v_pre, p_t)
        fd = fd_gradient(lin_loss, v_pre)
        assert np.linalg.norm(analytic - fd) <= 1e-6 * np.linalg.norm(fd)

        vn0 = scale_to_power(v_pre, p_t)

        def quad_loss():
            vn = scale_to_power(v_pre, p_t)
            return float(np.sum(np.abs(vn - t) ** 2))

        analytic = normalization_backward(vn0 - t, v_pre, p_t)
        fd = fd_gradient(quad_loss, v_pre)
        assert np.linalg.norm(analytic - fd) <= 1e-6 * np.linalg.norm(fd)


def test_normalization_backward_zero_is_zero():
    rng = np.random.default_rng(5)
    v_pre = crandn(rng, 2, 3, 2)
    out = normalization_backward(np.zeros_like(v_pre), v_pre, 4.0)
    assert np.all(out == 0)


# --- last layer ---------------------------------------------------------------

def test_last_layer_gradients_match_fd():
    """The exact-V-update layer treats U and W as free inputs; its hand
    derivation must agree with finite differences of rate(V(U, W))."""
    cfg = cfg_small()
    for seed in (21, 22):
        s = sample_channel(cfg, seed)
        params = init_params(cfg, L=1, variant=IMPROVED, seed=seed)
        trace = forward_pass(params, s, cfg)
        gu, gw = last_layer_gradients(trace, s, cfg)
        u = trace.layers[0].U.copy()
        w = trace.layers[0].W.copy()

        def loss():
            v, _ = final_layer_v(u, w, s, cfg)
            return float(np.log(2.0) * sum_rate(v, s, cfg))

        fd_u = fd_gradient(loss, u)
        fd_w = fd_gradient(loss, w)
        assert np.linalg.norm(gu - fd_u) <= 1e-5 * np.linalg.norm(fd_u)
        assert np.linalg.norm(gw - fd_w) <= 1e-5 * np.linalg.norm(fd_w)


# --- full backward pass ---------------------------------------------------------

@pytest.mark.parametrize("variant", [STANDARD, IMPROVED])
def test_backward_pass_matches_fd(variant):
    cfg = cfg_small()
    for seed in (0, 1):
        s = sample_channel(cfg, 70 + seed)
        params = init_params(cfg, L=2, variant=variant, seed=seed)
        trace = forward_pass(params, s, cfg)
        bundle = backward_pass(trace, params, s, cfg)
        fd = fd_model_gradient(params, s, cfg)
        rel = bundle_rel_error(bundle.param_grads, fd.layers)
        assert rel < 1e-5, f"{variant} seed {seed}: rel {rel:.2e}"


def test_backward_pass_nonuniform_noise_and_weights():
    """Per-user sigma and omega enter several gradient terms; a skewed
    config catches sign or indexing slips uniform configs mask."""
    cfg = SystemConfig(Nt=5, Nr=2, d=2, K=2, P_T=20.0,
                       sigma=np.array([0.7, 1.6]),
                       omega=np.array([2.0, 0.5]))
    s = sample_channel(cfg, 90)
    params = init_params(cfg, L=2, variant=IMPROVED, seed=9)
    trace = forward_pass(params, s, cfg)
    bundle = backward_pass(trace, params, s, cfg)
    fd = fd_model_gradient(params, s, cfg)
    assert bundle_rel_error(bundle.param_grads, fd.layers) < 1e-4


def test_backward_pass_input_gradient_matches_fd():
    cfg = cfg_small()
    s = sample_channel(cfg, 33)
    params = init_params(cfg, L=2, variant=STANDARD, seed=2)
    rng = np.random.default_rng(6)
    v0 = scale_to_power(crandn(rng, 2, 4, 2), cfg.P_T)
    trace = forward_pass(params, s, cfg, v0=v0)
    bundle = backward_pass(trace, params, s, cfg)

    def loss():
        return forward_pass(params, s, cfg, v0=v0).loss_nats

    fd = fd_gradient(loss, v0)
    assert np.linalg.norm(bundle.Gv0 - fd) <= 1e-5 * np.linalg.norm(fd)


def test_backward_pass_shapes_and_determinism():
    cfg = cfg_small()
    s = sample_channel(cfg, 44)
    params = init_params(cfg, L=3, variant=IMPROVED, seed=4)
    trace = forward_pass(params, s, cfg)
    b1 = backward_pass(trace, params, s, cfg)
    b2 = backward_pass(trace, params, s, cfg)
    assert np.array_equal(flat_grads(b1.param_grads), flat_grads(b2.param_grads))
    assert b1.loss_nats == trace.loss_nats
    assert len(b1.param_grads) == 3
    for g_layer, layer in zip(b1.param_grads, params.layers):
        for (gn, ga), (pn, pa) in zip(g_layer.blocks(), layer.blocks()):
            assert gn == pn and ga.shape == pa.shape
            assert np.all(np.isfinite(ga))
    assert [lt is None for lt in b1.Gv] == [False, False, True]
    assert b1.Gu[0].shape == (2, 2, 2)
    assert b1.Gv0.shape == (2, 4, 2)


def test_backward_pass_rejects_unnormalized_trace():
    cfg = cfg_small()
    s = sample_channel(cfg, 55)
    params = init_params(cfg, L=2, variant=IMPROVED, seed=0)
    trace = forward_pass(params, s, cfg, normalize=False)
    with pytest.raises(ValueError):
        backward_pass(trace, params, s, cfg)


def test_fd_model_gradient_mirrors_structure():
    cfg = cfg_small()
    s = sample_channel(cfg, 66)
    params = init_params(cfg, L=2, variant=STANDARD, seed=1)
    fd = fd_model_gradient(params, s, cfg)
    assert fd.L == 2 and fd.variant == STANDARD
    for g_layer, layer in zip(fd.layers, params.layers):
        assert [n for n, _ in g_layer.blocks()] == [n for n, _ in layer.blocks()]
