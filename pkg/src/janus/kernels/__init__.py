"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import time from ``JANUS_KERNELS``
(``numba`` or ``numpy``). When unset, numba is used if it imports.
"""
import logging
import os

from . import _numpy

log = logging.getLogger(__name__)

_requested = os.environ.get("JANUS_KERNELS", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ImportError(f"JANUS_KERNELS must be 'numba' or 'numpy', got {_requested!r}")

_impl = _numpy
BACKEND = "numpy"
if _requested != "numpy":
    try:
        from . import _numba
    except ImportError:
        if _requested == "numba":
            raise
        log.info("numba unavailable, using numpy kernels")
    else:
        _impl = _numba
        BACKEND = "numba"

pairwise_dist = _impl.pairwise_dist
pairwise_dist_backward = _impl.pairwise_dist_backward
csr_matmul = _impl.csr_matmul
rw_diagonal = _impl.rw_diagonal

__all__ = ["BACKEND", "pairwise_dist", "pairwise_dist_backward", "csr_matmul", "rw_diagonal"]
