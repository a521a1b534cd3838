"""Pure NumPy implementations of the hot kernels.

Fallback twin of the compiled extension ``permconv._kernels``; both expose
the same functions with identical semantics. Padded neighbor slots are
marked by a negative index and never touch memory.
"""
import numpy as np

IMPL = "numpy"


def gather_fw(x, idx):
    """Gather neighbor features: (B,N,D) -> (B,N,D,K).

    ``idx`` is an (N,K) int32 array; slots with a negative index yield the
    zero vector.
    """
    safe = np.where(idx < 0, 0, idx)
    out = x[:, safe, :]                 # (B,N,K,D)
    out[:, idx < 0, :] = 0.0
    return np.ascontiguousarray(out.transpose(0, 1, 3, 2))


def gather_bw(g, idx, n_vertices):
    """Scatter-add gradients back through the gather: (B,N,D,K) -> (B,N,D).

    Padded slots are structural zeros and receive no gradient.
    """
    b, n, d, k = g.shape
    dx = np.zeros((b, n_vertices, d), dtype=g.dtype)
    for j in range(k):
        col = idx[:, j]
        valid = col >= 0
        # index the slot axis first: mixing the boolean mask with the
        # scalar j in one subscript reorders the result axes
        gj = g[:, :, :, j]
        np.add.at(dx, (slice(None), col[valid]), gj[:, valid])
    return dx


def permute_fw(x, perm):
    """Per-vertex slot mixing: out[b,n] = x[b,n] @ perm[n].

    ``x`` is (B,N,D,K), ``perm`` is (N,K,K).
    """
    return np.matmul(x, perm)


def permute_bw_x(g, perm):
    """Gradient wrt the gathered block: g[b,n] @ perm[n]^T."""
    return np.matmul(g, perm.transpose(0, 2, 1))


def permute_bw_p(x, g):
    """Gradient wrt the mixing matrices: dP[n] = sum_b x[b,n]^T @ g[b,n]."""
    return np.einsum("bndj,bndk->njk", x, g)


def elu_fw(x, alpha=1.0):
    return np.where(x > 0, x, alpha * np.expm1(np.minimum(x, 0.0)))


def elu_bw(y, g, alpha=1.0):
    """Backward from the cached output: dy/dx = 1 if y > 0 else y + alpha."""
    return np.where(y > 0, g, g * (y + alpha))
