import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from netmeta import kernels
from netmeta._accel import NUMBA_AVAILABLE


def _dense_btr(A, M, S, B, p):
    return kernels._block_trace_numpy(A @ np.kron(M, S) @ B, p)


@st.composite
def sandwich_inputs(draw):
    n = draw(st.integers(1, 5))
    p = draw(st.integers(1, 3))
    elems = st.floats(-3, 3, allow_nan=False, width=64)
    A = draw(arrays(float, (n * p, n * p), elements=elems))
    B = draw(arrays(float, (n * p, n * p), elements=elems))
    M = draw(arrays(float, (n, n), elements=elems))
    M = M * draw(arrays(bool, (n, n)))  # the loop kernels skip zero m_ij
    S = draw(arrays(float, (p, p), elements=elems))
    return A, M, S, B, p


class TestBlockTrace:
    def test_identity(self):
        np.testing.assert_array_equal(kernels.block_trace(np.eye(12), 3), 4 * np.eye(3))

    def test_p1_is_trace(self):
        m = np.random.default_rng(0).normal(size=(5, 5))
        out = kernels.block_trace(m, 1)
        assert out.shape == (1, 1)
        assert out[0, 0] == pytest.approx(np.trace(m))

    def test_explicit_loop(self):
        m = np.random.default_rng(1).normal(size=(4, 4))
        expected = np.zeros((2, 2))
        for k in range(2):
            for a in range(2):
                for b in range(2):
                    expected[a, b] += m[2 * k + a, 2 * k + b]
        np.testing.assert_allclose(kernels.block_trace(m, 2), expected, atol=1e-15)

    @pytest.mark.parametrize("shape,p", [((4, 5), 2), ((6, 6), 4), ((6, 6), 0)])
    def test_bad_shapes(self, shape, p):
        with pytest.raises(ValueError):
            kernels.block_trace(np.zeros(shape), p)


class TestSandwich:
    def test_zero_m(self):
        rng = np.random.default_rng(2)
        A, B = rng.normal(size=(6, 6)), rng.normal(size=(6, 6))
        np.testing.assert_array_equal(kernels.btr_sandwich(A, np.zeros((3, 3)), np.eye(2), B), np.zeros((2, 2)))

    def test_identity_collapse(self):
        S = np.array([[2.0, 0.3], [0.3, 1.0]])
        np.testing.assert_allclose(kernels.btr_sandwich(np.eye(8), np.eye(4), S, np.eye(8)), 4 * S)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            kernels.btr_sandwich(np.eye(6), np.eye(2), np.eye(2), np.eye(6))
        with pytest.raises(ValueError):
            kernels.btr_sandwich(np.eye(4), np.eye(2), np.ones((2, 3)), np.eye(4))

    @settings(max_examples=60, deadline=None)
    @given(sandwich_inputs())
    def test_implementations_agree_with_dense(self, args):
        A, M, S, B, p = args
        dense = _dense_btr(A, M, S, B, p)
        tol = 1e-9 * max(1.0, np.abs(dense).max())
        np.testing.assert_allclose(kernels._btr_sandwich_numpy(A, M, S, B, p), dense, atol=tol)
        np.testing.assert_allclose(kernels._btr_sandwich_sparse(A, M, S, B, p), dense, atol=tol)

    @settings(max_examples=60, deadline=None)
    @given(sandwich_inputs())
    def test_coefficient_matrix_linearises_sandwich(self, args):
        A, M, S, B, p = args
        target = kernels.vec(_dense_btr(A, M, S, B, p))
        tol = 1e-9 * max(1.0, np.abs(target).max())
        for f in (kernels._coefficient_numpy, kernels._coefficient_sparse):
            np.testing.assert_allclose(f(A, B, M, p) @ kernels.vec(S), target, atol=tol)
        np.testing.assert_allclose(kernels.coefficient_matrix(A, B, M, p) @ kernels.vec(S), target, atol=tol)


class TestVecKron:
    def test_vec_column_major(self):
        np.testing.assert_array_equal(kernels.vec(np.array([[1, 3], [2, 4]])), [1, 2, 3, 4])

    def test_unvec_roundtrip(self):
        m = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(kernels.unvec(kernels.vec(m), 2, 3), m)
        np.testing.assert_array_equal(kernels.unvec(np.arange(4.0), 2), [[0, 2], [1, 3]])

    def test_kron_block_diagonal(self):
        B = np.array([[1.0, 2.0], [3.0, 4.0]])
        K = kernels.kron(np.eye(2), B)
        np.testing.assert_array_equal(K[:2, :2], B)
        np.testing.assert_array_equal(K[2:, 2:], B)
        np.testing.assert_array_equal(K[:2, 2:], 0)

    def test_vec_identity(self):
        rng = np.random.default_rng(3)
        A, X, B = rng.normal(size=(2, 3)), rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        np.testing.assert_allclose(kernels.vec(A @ X @ B), np.kron(B.T, A) @ kernels.vec(X))


class TestPseudoInverse:
    def test_diag(self):
        np.testing.assert_array_equal(kernels.pseudo_inverse(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]))

    def test_rank_one_projector(self):
        u = np.array([1.0, 2.0, 2.0]) / 3.0
        P = np.outer(u, u)
        np.testing.assert_allclose(kernels.pseudo_inverse(P), P, atol=1e-14)

    def test_invertible(self):
        m = np.array([[4.0, 1.0], [1.0, 3.0]])
        np.testing.assert_allclose(kernels.pseudo_inverse(m), np.linalg.inv(m), atol=1e-14)

    def test_zero(self):
        np.testing.assert_array_equal(kernels.pseudo_inverse(np.zeros((3, 3))), np.zeros((3, 3)))


class TestSymmetrizeTruncate:
    def test_symmetrize(self):
        np.testing.assert_array_equal(kernels.symmetrize(np.array([[1.0, 2.0], [0.0, 1.0]])), [[1, 1], [1, 1]])
        s = np.array([[2.0, 1.0], [1.0, 3.0]])
        np.testing.assert_array_equal(kernels.symmetrize(s), s)
        np.testing.assert_array_equal(kernels.symmetrize(np.array([[0.0, 1.0], [-1.0, 0.0]])), np.zeros((2, 2)))

    def test_truncate_hand_example(self):
        out, clamped = kernels.truncate_psd(np.array([[1.0, 2.0], [2.0, 1.0]]))
        np.testing.assert_allclose(out, [[1.5, 1.5], [1.5, 1.5]], atol=1e-14)
        assert clamped == pytest.approx([-1.0])

    def test_truncate_diagonal(self):
        out, clamped = kernels.truncate_psd(np.diag([-0.1, 0.4]))
        np.testing.assert_allclose(out, np.diag([0.0, 0.4]), atol=1e-15)
        assert clamped == pytest.approx([-0.1])

    def test_psd_unchanged(self):
        m = np.array([[2.0, 0.5], [0.5, 1.0]])
        out, clamped = kernels.truncate_psd(m)
        np.testing.assert_array_equal(out, m)
        assert clamped == []

    @pytest.mark.parametrize("bad", [np.array([[np.nan, 0.0], [0.0, 1.0]]), np.array([[1.0, 2.0], [0.0, 1.0]])])
    def test_truncate_rejects(self, bad):
        with pytest.raises(ValueError):
            kernels.truncate_psd(bad)

    @settings(max_examples=100, deadline=None)
    @given(arrays(float, (3, 3), elements=st.floats(-5, 5, allow_nan=False)))
    def test_truncate_idempotent(self, m):
        m = m + m.T
        t1, _ = kernels.truncate_psd(m)
        assert np.linalg.eigvalsh(t1).min() >= -1e-10
        t2, _ = kernels.truncate_psd(t1)
        np.testing.assert_allclose(t2, t1, atol=1e-10)


@pytest.mark.skipif(not NUMBA_AVAILABLE, reason="numba not installed")
@pytest.mark.parametrize("flag,expected", [("1", "False"), ("", "True")])
def test_disable_flag(flag, expected):
    env = dict(os.environ, NETMETA_DISABLE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", "from netmeta._accel import use_numba; print(use_numba())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected
