"""Select the kernel backend at import time.

The compiled extension is preferred when it imported cleanly; otherwise the
pure NumPy twin takes over. Set ``PERMCONV_FORCE_PYTHON=1`` to force the
fallback (used by the benchmark and the cross-backend tests).
"""
import os

import numpy as np

from . import kernels_py

if os.environ.get("PERMCONV_FORCE_PYTHON", "") == "1":
    _impl = kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = kernels_py

IMPL = _impl.IMPL
COMPILED = IMPL == "compiled"

_c = np.ascontiguousarray


def backend_name() -> str:
    return _impl.IMPL


def gather_fw(x, idx):
    if not COMPILED:
        return _impl.gather_fw(x, idx)
    return _impl.gather_fw(_c(x), _c(idx, dtype=np.int32))


def gather_bw(g, idx, n_vertices):
    if not COMPILED:
        return _impl.gather_bw(g, idx, n_vertices)
    return _impl.gather_bw(_c(g), _c(idx, dtype=np.int32), n_vertices)


def permute_fw(x, perm):
    if not COMPILED:
        return _impl.permute_fw(x, perm)
    return _impl.permute_fw(_c(x), _c(perm))


def permute_bw_x(g, perm):
    if not COMPILED:
        return _impl.permute_bw_x(g, perm)
    return _impl.permute_bw_x(_c(g), _c(perm))


def permute_bw_p(x, g):
    if not COMPILED:
        return _impl.permute_bw_p(x, g)
    return _impl.permute_bw_p(_c(x), _c(g))


def elu_fw(x, alpha=1.0):
    if not COMPILED:
        return _impl.elu_fw(x, alpha)
    return _impl.elu_fw(_c(x).reshape(-1), alpha).reshape(x.shape)


def elu_bw(y, g, alpha=1.0):
    if not COMPILED:
        return _impl.elu_bw(y, g, alpha)
    return _impl.elu_bw(_c(y).reshape(-1), _c(g).reshape(-1), alpha).reshape(y.shape)
