"""Unit tests for the dense complex matrix kernels."""

import numpy as np
import pytest

from conftest import crandn
from uwmmse.errors import DegenerateDiagonal, ShapeMismatch, SingularMatrix
from uwmmse.kernels import (EPS_DEGENERATE, diag_reciprocal, hadamard,
                            stable_inverse, taylor_inverse)


def test_diag_reciprocal_keeps_only_diagonal():
    rng = np.random.default_rng(0)
    for n in (1, 2, 5):
        a = crandn(rng, n, n) + 3.0 * np.eye(n)
        r = diag_reciprocal(a)
        off = r - np.diag(np.diagonal(r))
        assert np.all(off == 0)
        np.testing.assert_allclose(np.diagonal(r) * np.diagonal(a),
                                   np.ones(n), rtol=1e-15)


def test_diag_reciprocal_exact_inverse_for_diagonal_input():
    rng = np.random.default_rng(1)
    d = crandn(rng, 6) + 2.0
    a = np.diag(d)
    np.testing.assert_allclose(diag_reciprocal(a) @ a, np.eye(6),
                               atol=1e-15)


def test_diag_reciprocal_degenerate_diagonal():
    a = np.diag([1.0, 1e-15, 1.0]).astype(np.complex128)
    with pytest.raises(DegenerateDiagonal):
        diag_reciprocal(a)
    with pytest.raises(DegenerateDiagonal):
        diag_reciprocal(np.zeros((3, 3), dtype=np.complex128))
    # the guard is relative to the matrix scale, not absolute
    with pytest.raises(DegenerateDiagonal):
        diag_reciprocal(np.diag([1e20, 1.0]).astype(np.complex128))
    just_above = np.diag([1.0, 10 * EPS_DEGENERATE]).astype(np.complex128)
    diag_reciprocal(just_above)


def test_diag_reciprocal_shape_and_aliasing():
    with pytest.raises(ShapeMismatch):
        diag_reciprocal(np.ones((2, 3)))
    a = np.diag([2.0, 4.0]).astype(np.complex128)
    before = a.copy()
    diag_reciprocal(a)
    assert np.array_equal(a, before)


def test_stable_inverse_matches_identity_product():
    rng = np.random.default_rng(2)
    for trial in range(50):
        n = int(rng.integers(1, 9))
        a = crandn(rng, n, n) + n * np.eye(n)
        inv = stable_inverse(a)
        np.testing.assert_allclose(a @ inv, np.eye(n), atol=1e-10)
        np.testing.assert_allclose(inv, np.linalg.inv(a), atol=1e-10)


def test_stable_inverse_singular_raises():
    x = np.array([[1.0 + 1j], [2.0 - 0.5j]])
    rank_one = x @ x.conj().T
    with pytest.raises(SingularMatrix):
        stable_inverse(rank_one)
    with pytest.raises(SingularMatrix):
        stable_inverse(np.zeros((3, 3), dtype=np.complex128))


def test_stable_inverse_shape():
    with pytest.raises(ShapeMismatch):
        stable_inverse(np.ones((2, 3)))
    with pytest.raises(ShapeMismatch):
        stable_inverse(np.ones(4))


def test_hadamard():
    rng = np.random.default_rng(3)
    a, b = crandn(rng, 3, 4), crandn(rng, 3, 4)
    assert np.array_equal(hadamard(a, b), a * b)
    with pytest.raises(ShapeMismatch):
        hadamard(a, b.T)


def test_taylor_inverse_exact_at_reference():
    rng = np.random.default_rng(4)
    a = crandn(rng, 5, 5) + 5 * np.eye(5)
    a_inv = stable_inverse(a)
    np.testing.assert_allclose(taylor_inverse(a, a_inv), a_inv,
                               rtol=0, atol=1e-12 * np.abs(a_inv).max())


def test_taylor_inverse_second_order_error():
    """Error against the true inverse shrinks quadratically with the
    distance of the reference point."""
    rng = np.random.default_rng(5)
    a = crandn(rng, 4, 4) + 4 * np.eye(4)
    a_inv = np.linalg.inv(a)
    r = crandn(rng, 4, 4)
    errs = []
    for delta in (1e-2, 1e-3):
        a0 = a @ (np.eye(4) + delta * r)
        err = np.linalg.norm(taylor_inverse(a, np.linalg.inv(a0)) - a_inv)
        errs.append(err)
    assert errs[1] < errs[0] / 50.0


def test_taylor_inverse_shape():
    with pytest.raises(ShapeMismatch):
        taylor_inverse(np.eye(3), np.eye(4))
    with pytest.raises(ShapeMismatch):
        taylor_inverse(np.ones((2, 3)), np.ones((2, 3)))
