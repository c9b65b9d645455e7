"""Shared helpers: complex random draws, gradient flattening, and the
water-filling capacity oracle used to cross-check the solver at K=1."""

import numpy as np


def crandn(rng, *shape):
    """Complex standard normal, entries CN(0, 2) unless scaled by caller."""
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def flat_grads(layer_list):
    """Concatenate every block of a list of LayerParams into one vector."""
    return np.concatenate([np.ravel(arr) for lp in layer_list
                           for _, arr in lp.blocks()])


def bundle_rel_error(analytic_layers, fd_layers):
    """Norm-relative error between two stacked parameter gradients."""
    a = flat_grads(analytic_layers)
    f = flat_grads(fd_layers)
    return float(np.linalg.norm(a - f) / max(np.linalg.norm(a),
                                             np.linalg.norm(f)))


def waterfill_bits(h, p_t, sigma2, d):
    """Single-user MIMO capacity via eigen water-filling, in bits.

    Pours the power budget over the top d eigenvalues of H^H H; when the
    water level leaves the weakest active stream with negative power, that
    stream is dropped and the level recomputed.
    """
    lam = np.linalg.eigvalsh(h.conj().T @ h)[::-1][:d]
    lam = lam[lam > 1e-12]
    for m in range(len(lam), 0, -1):
        mu = (p_t + sigma2 * np.sum(1.0 / lam[:m])) / m
        p = mu - sigma2 / lam[:m]
        if p[-1] > 0:
            return float(np.sum(np.log2(1.0 + p * lam[:m] / sigma2)))
    return 0.0
