import numpy as np
import pytest

from janus import kernels
from janus.kernels import _numpy
from janus.evalkit import gradcheck_graph
from janus.graph import transition_matrix

numba_impl = pytest.importorskip("janus.kernels._numba")


def test_backend_flag_is_known():
    assert kernels.BACKEND in ("numba", "numpy")


def test_pairwise_dist_backends_agree(rng):
    a, b = rng.standard_normal((40, 7)), rng.standard_normal((33, 7))
    b[3] = a[5]  # one exact zero distance
    d_np, d_nb = _numpy.pairwise_dist(a, b), numba_impl.pairwise_dist(a, b)
    np.testing.assert_allclose(d_nb, d_np, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(d_np, np.linalg.norm(a[:, None] - b[None], axis=2),
                               rtol=1e-12, atol=1e-14)
    g = rng.standard_normal(d_np.shape)
    for x, y in zip(_numpy.pairwise_dist_backward(a, b, d_np, g),
                    numba_impl.pairwise_dist_backward(a, b, d_np, g)):
        np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-12)


def test_csr_matmul_backends_agree(rng):
    t = transition_matrix(gradcheck_graph())
    x = rng.standard_normal((t.shape[1], 5))
    args = (t.indptr.astype(np.int64), t.indices.astype(np.int64), t.data, x)
    np.testing.assert_allclose(numba_impl.csr_matmul(*args), t @ x, rtol=1e-13)
    np.testing.assert_allclose(_numpy.csr_matmul(*args), t @ x, rtol=1e-13)


def test_rw_diagonal_backends_agree():
    t = transition_matrix(gradcheck_graph())
    args = (t.indptr.astype(np.int64), t.indices.astype(np.int64), t.data, 6)
    dense = t.toarray()
    expected = np.stack([np.diagonal(np.linalg.matrix_power(dense, k)) for k in range(1, 7)], 1)
    np.testing.assert_allclose(numba_impl.rw_diagonal(*args), expected, rtol=1e-12)
    np.testing.assert_allclose(_numpy.rw_diagonal(*args), expected, rtol=1e-12)
