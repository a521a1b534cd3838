"""Cross-backend agreement between the compiled kernels and the NumPy twins."""
import numpy as np
import pytest

from permconv import kernels_py

_kernels = pytest.importorskip(
    "permconv._kernels", reason="compiled extension not built")

B, N, D, K = 3, 14, 5, 7


def _random_case(rng, dtype):
    x = rng.normal(size=(B, N, D)).astype(dtype)
    idx = np.full((N, K), -1, dtype=np.int32)
    for i in range(N):
        deg = rng.integers(1, K + 1)
        idx[i, :deg] = rng.integers(0, N, size=deg)
        idx[i, 0] = i
    return x, idx


def _tols(dtype):
    return {"rtol": 1e-12, "atol": 1e-13} if dtype == np.float64 \
        else {"rtol": 1e-5, "atol": 1e-6}


@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_gather_fw_bw_agree(dtype):
    rng = np.random.default_rng(0)
    x, idx = _random_case(rng, dtype)
    a = kernels_py.gather_fw(x, idx)
    b = _kernels.gather_fw(x, idx)
    assert a.dtype == b.dtype == dtype
    assert np.array_equal(a, b)   # pure copies, no arithmetic

    g = rng.normal(size=(B, N, D, K)).astype(dtype)
    ga = kernels_py.gather_bw(g, idx, N)
    gb = _kernels.gather_bw(np.ascontiguousarray(g), idx, N)
    assert np.allclose(ga, gb, **_tols(dtype))


@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_permute_kernels_agree(dtype):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(B, N, D, K)).astype(dtype)
    perm = rng.normal(size=(N, K, K)).astype(dtype)
    g = rng.normal(size=(B, N, D, K)).astype(dtype)
    tols = _tols(dtype)
    assert np.allclose(kernels_py.permute_fw(x, perm),
                       _kernels.permute_fw(x, perm), **tols)
    assert np.allclose(kernels_py.permute_bw_x(g, perm),
                       _kernels.permute_bw_x(g, perm), **tols)
    assert np.allclose(kernels_py.permute_bw_p(x, g),
                       _kernels.permute_bw_p(x, g), **tols)


@pytest.mark.parametrize("dtype", [np.float64, np.float32])
@pytest.mark.parametrize("alpha", [1.0, 0.7])
def test_elu_kernels_agree(dtype, alpha):
    rng = np.random.default_rng(2)
    x = np.concatenate([rng.normal(size=500), [0.0, -30.0, 30.0]]).astype(dtype)
    g = rng.normal(size=x.size).astype(dtype)
    tols = _tols(dtype)
    ya = kernels_py.elu_fw(x, alpha)
    yb = _kernels.elu_fw(x, alpha)
    assert np.allclose(ya, yb, **tols)
    assert np.allclose(kernels_py.elu_bw(ya, g, alpha),
                       _kernels.elu_bw(yb, g, alpha), **tols)


def test_backend_env_override():
    import importlib
    import os
    import subprocess
    import sys
    code = ("import permconv.backend as b; print(b.IMPL)")
    env = dict(os.environ, PERMCONV_FORCE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True)
    assert out.stdout.strip() == "numpy"
    importlib.import_module("permconv.backend")


def test_gather_bw_accumulates_duplicates():
    # two slots referencing the same source vertex must both contribute
    g = np.ones((1, 2, 1, 3))
    idx = np.array([[0, 1, 1], [1, -1, -1]], dtype=np.int32)
    for impl in (kernels_py, _kernels):
        out = impl.gather_bw(np.ascontiguousarray(g), idx, 2)
        assert out[0, 0, 0] == 1.0
        assert out[0, 1, 0] == 3.0   # slot0 of vertex 1 + two refs from vertex 0
