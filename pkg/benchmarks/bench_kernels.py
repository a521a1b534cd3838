"""Compare the compiled kernels against the pure NumPy fallback.

Times each hot kernel on autoencoder-shaped inputs, then one full
training step under each backend in a subprocess (backend selection is
import-time). Run:

    python3 benchmarks/bench_kernels.py [--batch 32] [--vertices 162]
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from permconv import kernels_py

try:
    from permconv import _kernels
except ImportError:
    _kernels = None


def best_of(fn, repeats=5):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(batch, n, d, k):
    rng = np.random.default_rng(0)
    x3 = rng.normal(size=(batch, n, d))
    idx = np.full((n, k), -1, dtype=np.int32)
    for i in range(n):
        idx[i, : min(k, 7)] = rng.integers(0, n, size=min(k, 7))
        idx[i, 0] = i
    x4 = rng.normal(size=(batch, n, d, k))
    perm = rng.normal(size=(n, k, k))
    g4 = rng.normal(size=(batch, n, d, k))
    flat = rng.normal(size=batch * n * d * k)

    cases = [
        ("gather_fw", lambda m: m.gather_fw(x3, idx)),
        ("gather_bw", lambda m: m.gather_bw(x4, idx, n)),
        ("permute_fw", lambda m: m.permute_fw(x4, perm)),
        ("permute_bw_x", lambda m: m.permute_bw_x(g4, perm)),
        ("permute_bw_p", lambda m: m.permute_bw_p(x4, g4)),
        ("elu_fw", lambda m: m.elu_fw(flat)),
        ("elu_bw", lambda m: m.elu_bw(flat, flat)),
    ]
    print(f"\nkernels on B={batch} N={n} D={d} K={k} (best of 5, ms)")
    print(f"{'kernel':14s} {'numpy':>10s} {'compiled':>10s} {'speedup':>8s}")
    for name, call in cases:
        t_py = best_of(lambda: call(kernels_py)) * 1e3
        if _kernels is None:
            print(f"{name:14s} {t_py:10.3f} {'n/a':>10s} {'n/a':>8s}")
            continue
        t_c = best_of(lambda: call(_kernels)) * 1e3
        print(f"{name:14s} {t_py:10.3f} {t_c:10.3f} {t_py / t_c:7.1f}x")


STEP_SNIPPET = """
import time
import numpy as np
from permconv import backend
from permconv.autodiff import Tensor
from permconv.model import MeshAutoencoder, Normalizer
from permconv.synthetic import icosphere
from permconv.train import Adam, TrainConfig, _loss

mesh = icosphere(2)
model = MeshAutoencoder(mesh, latent_dim=8, dtype=np.float32)
rng = np.random.default_rng(0)
batch = rng.normal(size=({batch}, mesh.num_vertices, 3)).astype(np.float32)
opt = Adam(model.parameters(), 0.001)
def step():
    opt.zero_grad()
    loss = _loss(model(Tensor(batch)), Tensor(batch.copy()), "l1")
    loss.backward()
    opt.step()
step()   # warm up
best = float("inf")
for _ in range(3):
    t0 = time.perf_counter()
    step()
    best = min(best, time.perf_counter() - t0)
print(f"{{backend.IMPL}}: {{best * 1e3:.1f}} ms / step")
"""


def bench_full_step(batch):
    print(f"\nfull training step, icosphere(2), default channels, f32, batch {batch}")
    code = STEP_SNIPPET.format(batch=batch)
    for force in ("0", "1"):
        env = dict(os.environ, PERMCONV_FORCE_PYTHON=force)
        out = subprocess.run([sys.executable, "-c", code], env=env,
                             capture_output=True, text=True)
        print(out.stdout.strip() or out.stderr.strip())


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--vertices", type=int, default=162)
    ap.add_argument("--channels", type=int, default=16)
    ap.add_argument("--k", type=int, default=9)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled extension not available; numpy only")
    bench_kernels(args.batch, args.vertices, args.channels, args.k)
    bench_full_step(args.batch)


if __name__ == "__main__":
    main()
