"""Mesh autoencoder built from soft-permutation convolutions.

The encoder alternates convolution and quadric down-sampling over a fixed
hierarchy derived from the template mesh, then maps the coarsest features
to a latent vector with one dense layer. The decoder mirrors it with
barycentric up-sampling and ends in a linear convolution back to vertex
coordinates. A linear PCA baseline with the same latent budget lives
alongside for comparisons.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .conv import SoftPermConv, parameter_groups
from .mesh import MeshTopology, NeighborTable, build_neighbor_table
from .sampling import SamplingOperator, build_hierarchy

STD_FLOOR = 1e-8


class Normalizer:
    """Standardizes vertex coordinates with training-set statistics.

    mode "per-vertex" keeps one mean/std per vertex per coordinate, which
    is what the autoencoder trains on; "scalar" collapses to a single
    mean/std pair and exists for quick experiments. Stds are floored at
    1e-8 so degenerate coordinates cannot divide by zero.
    """

    def __init__(self, mode: str = "per-vertex"):
        if mode not in ("per-vertex", "scalar"):
            raise ValueError(f"unknown normalizer mode {mode!r}")
        self.mode = mode
        self.mean = None
        self.std = None

    def fit(self, x: np.ndarray) -> "Normalizer":
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != 3:
            raise ValueError(f"expected (S, N, 3) samples, got {x.shape}")
        if self.mode == "per-vertex":
            self.mean = x.mean(axis=0)
            self.std = np.maximum(x.std(axis=0), STD_FLOOR)
        else:
            self.mean = np.full((1, 1), x.mean())
            self.std = np.maximum(np.full((1, 1), x.std()), STD_FLOOR)
        return self

    def _check(self):
        if self.mean is None:
            raise ValueError("normalizer is not fitted")

    def normalize(self, x: np.ndarray) -> np.ndarray:
        self._check()
        return (np.asarray(x) - self.mean) / self.std

    def denormalize(self, x) -> np.ndarray:
        self._check()
        if isinstance(x, Tensor):
            x = x.data
        return np.asarray(x) * self.std + self.mean

    def as_parameters(self) -> list[Parameter]:
        self._check()
        return [
            Parameter(self.mean, "normalizer.mean", trainable=False),
            Parameter(self.std, "normalizer.std", trainable=False),
        ]

    @classmethod
    def from_parameters(cls, params: dict, mode: str = "per-vertex") -> "Normalizer":
        norm = cls(mode)
        norm.mean = params["normalizer.mean"].data
        norm.std = params["normalizer.std"].data
        return norm


def _glorot(rng, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


class MeshAutoencoder:
    """Fixed-template autoencoder over a quadric-decimation hierarchy.

    Encoder: per level, convolution then 1/factor down-sampling; a dense
    layer maps the flattened coarsest features to ``latent_dim``. Decoder:
    dense layer back to the coarsest grid, then per level up-sampling and
    convolution, closing with a linear convolution to 3 coordinates.

    Channel widths are (16, 32, 64, 128) down and (64, 32, 32, 16) up by
    default; the hierarchy adapts when decimation stalls on tiny meshes,
    so level sizes come from the operators actually built, not from
    factor arithmetic.
    """

    def __init__(self, template: MeshTopology, latent_dim: int = 8, *,
                 k: int = 9, factor: float = 4,
                 enc_channels=(16, 32, 64, 128), dec_channels=(64, 32, 32, 16),
                 factorized: bool = False, num_bases: int = 8,
                 mixing_init: str = "identity", train_mixing: bool = True,
                 neighbor_order: str = "by-index", neighbor_seed: int = 0,
                 seed: int = 0, dtype=np.float64):
        if len(enc_channels) != len(dec_channels):
            raise ValueError("enc_channels and dec_channels must have equal length")
        if latent_dim < 1:
            raise ValueError("latent_dim must be positive")
        self.template = template
        self.latent_dim = latent_dim
        self.k = k
        self.factor = factor
        self.enc_channels = tuple(enc_channels)
        self.dec_channels = tuple(dec_channels)
        self.factorized = factorized
        self.num_bases = num_bases
        self.mixing_init = mixing_init
        self.train_mixing = train_mixing
        self.neighbor_order = neighbor_order
        self.neighbor_seed = neighbor_seed
        self.seed = seed
        self.dtype = np.dtype(dtype)

        levels = len(enc_channels)
        self.operators: list[SamplingOperator] = build_hierarchy(template, levels, factor)
        meshes = [template] + [op.coarse for op in self.operators]
        self.level_sizes = [m.num_vertices for m in meshes]
        self.tables: list[NeighborTable] = [
            build_neighbor_table(meshes[i], k, order=neighbor_order, seed=neighbor_seed)
            for i in range(levels)
        ]

        rng = np.random.default_rng(seed)
        conv_kw = dict(factorized=factorized, num_bases=num_bases,
                       mixing_init=mixing_init, train_mixing=train_mixing,
                       rng=rng, dtype=self.dtype)
        self.enc_convs = []
        d_in = 3
        for i, d_out in enumerate(enc_channels):
            self.enc_convs.append(SoftPermConv(f"enc{i}", self.level_sizes[i], k,
                                               d_in, d_out, **conv_kw))
            d_in = d_out

        bottom = self.level_sizes[levels]
        flat_dim = bottom * enc_channels[-1]
        self.fc_enc_w = Parameter(_glorot(rng, flat_dim, latent_dim, self.dtype), "fc_enc.weight")
        self.fc_enc_b = Parameter(np.zeros(latent_dim, dtype=self.dtype), "fc_enc.bias")
        self.fc_dec_w = Parameter(_glorot(rng, latent_dim, flat_dim, self.dtype), "fc_dec.weight")
        self.fc_dec_b = Parameter(np.zeros(flat_dim, dtype=self.dtype), "fc_dec.bias")

        self.dec_convs = []
        d_in = enc_channels[-1]
        for j, d_out in enumerate(dec_channels):
            level = levels - 1 - j
            self.dec_convs.append(SoftPermConv(f"dec{j}", self.level_sizes[level], k,
                                               d_in, d_out, **conv_kw))
            d_in = d_out
        self.out_conv = SoftPermConv("out", self.level_sizes[0], k, d_in, 3,
                                     outer_activation=False, **conv_kw)

    # -- parameters ------------------------------------------------------

    def layers(self) -> list[SoftPermConv]:
        return self.enc_convs + self.dec_convs + [self.out_conv]

    def parameters(self) -> list[Parameter]:
        params: list[Parameter] = []
        for conv in self.enc_convs:
            params.extend(conv.parameters())
        params += [self.fc_enc_w, self.fc_enc_b, self.fc_dec_w, self.fc_dec_b]
        for conv in self.dec_convs:
            params.extend(conv.parameters())
        params.extend(self.out_conv.parameters())
        return params

    def parameter_groups(self) -> dict[str, int]:
        return parameter_groups(self.parameters())

    def parameter_count(self) -> int:
        return sum(self.parameter_groups().values())

    # -- forward ---------------------------------------------------------

    def _as_tensor(self, x) -> Tensor:
        if isinstance(x, Tensor):
            return x
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1] != self.level_sizes[0] or x.shape[2] != 3:
            raise ValueError(f"expected (B, {self.level_sizes[0]}, 3) input, got {x.shape}")
        return Tensor(x)

    def encode(self, x) -> Tensor:
        h = self._as_tensor(x)
        for conv, table, op in zip(self.enc_convs, self.tables, self.operators):
            h = conv(h, table)
            h = ad.sparse_apply(op.down, h)
        b = h.shape[0]
        flat = h.reshape(b, h.shape[1] * h.shape[2])
        return ad.matmul(flat, self.fc_enc_w) + self.fc_enc_b

    def decode(self, z) -> Tensor:
        if not isinstance(z, Tensor):
            z = Tensor(np.asarray(z, dtype=self.dtype))
        if z.data.ndim == 1:
            z = z.reshape(1, z.shape[0])
        if z.shape[1] != self.latent_dim:
            raise ValueError(f"expected latent dim {self.latent_dim}, got {z.shape[1]}")
        h = ad.matmul(z, self.fc_dec_w) + self.fc_dec_b
        bottom = self.level_sizes[len(self.enc_convs)]
        h = h.reshape(z.shape[0], bottom, self.enc_channels[-1])
        for j, conv in enumerate(self.dec_convs):
            level = len(self.enc_convs) - 1 - j
            h = ad.sparse_apply(self.operators[level].up, h)
            h = conv(h, self.tables[level])
        return self.out_conv(h, self.tables[0])

    def forward(self, x) -> Tensor:
        return self.decode(self.encode(x))

    __call__ = forward

    # -- bookkeeping -------------------------------------------------------

    def config(self) -> dict:
        return {
            "latent_dim": self.latent_dim,
            "k": self.k,
            "factor": self.factor,
            "enc_channels": list(self.enc_channels),
            "dec_channels": list(self.dec_channels),
            "factorized": self.factorized,
            "num_bases": self.num_bases,
            "mixing_init": self.mixing_init,
            "train_mixing": self.train_mixing,
            "neighbor_order": self.neighbor_order,
            "neighbor_seed": self.neighbor_seed,
            "seed": self.seed,
            "dtype": "f64" if self.dtype == np.float64 else "f32",
            "level_sizes": list(self.level_sizes),
        }

    def load_state(self, params: dict) -> None:
        """Copy values from a name->Parameter dict into this model."""
        own = {p.name: p for p in self.parameters()}
        missing = sorted(set(own) - set(params))
        if missing:
            raise ValueError(f"checkpoint is missing parameters: {missing[:4]}")
        for name, p in own.items():
            src = params[name].data
            if src.shape != p.data.shape:
                raise ValueError(f"{name}: checkpoint shape {src.shape} != model {p.data.shape}")
            p.data = src.astype(p.data.dtype, copy=True)


class PCABaseline:
    """Linear baseline: project flattened coordinates on the top components.

    Stores mean vector plus ``latent_dim`` principal directions, so the
    decoder spends 3 * N * latent_dim parameters, the figure quoted for
    linear baselines (the mean is excluded from that count).
    """

    def __init__(self, latent_dim: int):
        if latent_dim < 1:
            raise ValueError("latent_dim must be positive")
        self.latent_dim = latent_dim
        self.mean = None
        self.components = None  # (3N, d) orthonormal columns

    def fit(self, x: np.ndarray) -> "PCABaseline":
        x = np.asarray(x, dtype=np.float64)
        s, n, c = x.shape
        if c != 3:
            raise ValueError(f"expected (S, N, 3), got {x.shape}")
        if self.latent_dim > min(s, n * 3):
            raise ValueError(f"latent_dim {self.latent_dim} exceeds rank bound "
                             f"{min(s, n * 3)}")
        flat = x.reshape(s, n * 3)
        self.mean = flat.mean(axis=0)
        centered = flat - self.mean
        # right singular vectors of the centered data = eigenvectors of covariance
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        self.components = vt[: self.latent_dim].T
        return self

    def _check(self):
        if self.components is None:
            raise ValueError("baseline is not fitted")

    def encode(self, x: np.ndarray) -> np.ndarray:
        self._check()
        x = np.asarray(x, dtype=np.float64)
        flat = x.reshape(x.shape[0], -1)
        return (flat - self.mean) @ self.components

    def decode(self, z: np.ndarray) -> np.ndarray:
        self._check()
        z = np.asarray(z, dtype=np.float64)
        flat = z @ self.components.T + self.mean
        return flat.reshape(z.shape[0], -1, 3)

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        return self.decode(self.encode(x))

    def parameter_count(self) -> int:
        self._check()
        return int(self.components.size)


def reconstruction_error(pred, target) -> float:
    """Mean per-vertex Euclidean distance, in the units of the inputs."""
    if isinstance(pred, Tensor):
        pred = pred.data
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.linalg.norm(pred - target, axis=-1).mean())
