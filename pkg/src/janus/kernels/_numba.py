"""numba-compiled kernels; signatures mirror ``_numpy.py``."""
import numpy as np
from numba import njit


@njit(cache=True, fastmath=False)
def pairwise_dist(a, b):
    n, m, k = a.shape[0], b.shape[0], a.shape[1]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for c in range(k):
                t = a[i, c] - b[j, c]
                s += t * t
            out[i, j] = np.sqrt(s)
    return out


@njit(cache=True, fastmath=False)
def pairwise_dist_backward(a, b, dist, grad):
    n, m = dist.shape
    w = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            if dist[i, j] > 0.0:
                w[i, j] = grad[i, j] / dist[i, j]
    ga = w.sum(axis=1).reshape(n, 1) * a - w @ b
    gb = w.sum(axis=0).reshape(m, 1) * b - w.T @ a
    return ga, gb


@njit(cache=True, fastmath=False)
def csr_matmul(indptr, indices, data, x):
    n = indptr.shape[0] - 1
    k = x.shape[1]
    out = np.zeros((n, k))
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            w = data[p]
            for c in range(k):
                out[i, c] += w * x[j, c]
    return out


@njit(cache=True, fastmath=False)
def rw_diagonal(indptr, indices, data, steps):
    """Propagate blocks of unit columns, reading the diagonal after each step."""
    n = indptr.shape[0] - 1
    out = np.empty((n, steps))
    batch = 256
    for c0 in range(0, n, batch):
        bs = min(batch, n - c0)
        v = np.zeros((n, bs))
        for c in range(bs):
            v[c0 + c, c] = 1.0
        nxt = np.empty((n, bs))
        for s in range(steps):
            for r in range(n):
                row = nxt[r]
                row[:] = 0.0
                for p in range(indptr[r], indptr[r + 1]):
                    w = data[p]
                    src = v[indices[p]]
                    for c in range(bs):
                        row[c] += w * src[c]
            v, nxt = nxt, v
            for c in range(bs):
                out[c0 + c, s] = v[c0 + c, c]
    return out
