"""Pure-numpy reference kernels.

Every function here has a numba twin in ``_numba.py`` with the same signature.
"""
import numpy as np
import scipy.sparse as sp

_CHUNK = 256


def pairwise_dist(a, b):
    out = np.empty((a.shape[0], b.shape[0]))
    for i0 in range(0, a.shape[0], _CHUNK):
        diff = a[i0:i0 + _CHUNK, None, :] - b[None, :, :]
        out[i0:i0 + _CHUNK] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return out


def pairwise_dist_backward(a, b, dist, grad):
    # zero distance gets subgradient 0
    w = np.divide(grad, dist, out=np.zeros_like(grad), where=dist > 0)
    ga = w.sum(axis=1)[:, None] * a - w @ b
    gb = w.sum(axis=0)[:, None] * b - w.T @ a
    return ga, gb


def _csr(indptr, indices, data):
    n = indptr.shape[0] - 1
    return sp.csr_matrix((data, indices, indptr), shape=(n, n))


def csr_matmul(indptr, indices, data, x):
    return np.asarray(_csr(indptr, indices, data) @ x)


def rw_diagonal(indptr, indices, data, steps):
    """Diagonal of T^1..T^steps for a CSR transition matrix, via batched products."""
    t = _csr(indptr, indices, data)
    n = t.shape[0]
    out = np.empty((n, steps))
    batch = 512
    for c0 in range(0, n, batch):
        cols = np.arange(c0, min(c0 + batch, n))
        pick = np.arange(cols.size)
        v = np.zeros((n, cols.size))
        v[cols, pick] = 1.0
        for s in range(steps):
            v = np.asarray(t @ v)
            out[cols, s] = v[cols, pick]
    return out
