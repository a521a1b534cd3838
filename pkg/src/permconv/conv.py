"""Per-vertex soft-permutation convolution for fixed-topology meshes.

Each vertex owns a trainable K x K mixing matrix that recombines its padded
neighbor slots into an implicit canonical arrangement; a single filter bank
shared by all vertices then maps the flattened block to the output
channels. In factorized form the per-vertex matrices are mixtures of a
small set of shared bases, shrinking the mixing parameters from N*K^2 to
N*B + B*K^2.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .mesh import NeighborTable


def identity_mixing(num_vertices: int, k: int, dtype=np.float64) -> np.ndarray:
    return np.tile(np.eye(k, dtype=dtype), (num_vertices, 1, 1))


class SoftPermConv:
    """One convolution layer: gather -> per-vertex slot mixing -> shared filters.

    Parameters
    ----------
    name : str
        Prefix for the layer's parameter names.
    num_vertices, k, d_in, d_out : int
        Template vertex count, neighbor size, input and output channels.
    factorized : bool
        Express the mixing matrices as coefficient mixtures of ``num_bases``
        shared K x K bases instead of one free matrix per vertex.
    num_bases : int
        Subspace size B in factorized form.
    inner_activation, outer_activation : bool
        ELU on the mixed block and on the filter output. The default
        applies both; the final reconstruction layer switches the outer
        one off to leave coordinates unbounded.
    mixing_init : {"identity", "random"}
        Identity start means the layer initially sees neighbors in table
        order; "random" draws uniform(-mixing_init_scale, +scale) entries.
    train_mixing : bool
        Cleared by the frozen-mixing ablation: matrices stay at their
        initial value and drop out of the trainable count.
    """

    def __init__(self, name: str, num_vertices: int, k: int, d_in: int, d_out: int, *,
                 factorized: bool = False, num_bases: int = 8,
                 inner_activation: bool = True, outer_activation: bool = True,
                 alpha: float = 1.0, mixing_init: str = "identity",
                 mixing_init_scale: float = 0.05, train_mixing: bool = True,
                 rng: np.random.Generator | None = None, dtype=np.float64):
        if mixing_init not in ("identity", "random"):
            raise ValueError(f"unknown mixing_init {mixing_init!r}")
        self.name = name
        self.num_vertices = num_vertices
        self.k = k
        self.d_in = d_in
        self.d_out = d_out
        self.factorized = factorized
        self.num_bases = num_bases if factorized else None
        self.inner_activation = inner_activation
        self.outer_activation = outer_activation
        self.alpha = alpha
        self.train_mixing = train_mixing
        rng = rng if rng is not None else np.random.default_rng(0)

        if factorized:
            bases = rng.uniform(-0.01, 0.01, size=(num_bases, k, k)).astype(dtype)
            bases[0] = np.eye(k, dtype=dtype)
            coeffs = np.zeros((num_vertices, num_bases), dtype=dtype)
            coeffs[:, 0] = 1.0
            if mixing_init == "random":
                coeffs = rng.uniform(-mixing_init_scale, mixing_init_scale,
                                     size=coeffs.shape).astype(dtype)
            self.coeffs = Parameter(coeffs, f"{name}.coeffs", decay_exempt=True,
                                    trainable=train_mixing)
            self.bases = Parameter(bases, f"{name}.bases", decay_exempt=True,
                                   trainable=train_mixing)
            self.mixing = None
        else:
            if mixing_init == "identity":
                mix = identity_mixing(num_vertices, k, dtype)
            else:
                mix = rng.uniform(-mixing_init_scale, mixing_init_scale,
                                  size=(num_vertices, k, k)).astype(dtype)
            self.mixing = Parameter(mix, f"{name}.mixing", decay_exempt=True,
                                    trainable=train_mixing)
            self.coeffs = None
            self.bases = None

        fan_in, fan_out = d_in * k, d_out
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        filters = rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)
        self.filters = Parameter(filters, f"{name}.filters")
        self.bias = Parameter(np.zeros(d_out, dtype=dtype), f"{name}.bias")

    # -- parameters ----------------------------------------------------

    def parameters(self) -> list[Parameter]:
        if self.factorized:
            mix = [self.coeffs, self.bases]
        else:
            mix = [self.mixing]
        return mix + [self.filters, self.bias]

    def mixing_tensor(self) -> Tensor:
        """The (N,K,K) mixing matrices as a graph node (materialized if factorized)."""
        if not self.factorized:
            return self.mixing
        flat = ad.matmul(self.coeffs, self.bases.reshape(self.num_bases, self.k * self.k))
        return flat.reshape(self.num_vertices, self.k, self.k)

    def materialize_mixing(self) -> np.ndarray:
        """Contract the factorization into explicit per-vertex matrices."""
        if not self.factorized:
            raise ValueError("layer is not factorized; read .mixing directly")
        return self.mixing_tensor().data

    # -- forward ---------------------------------------------------------

    def soft_permute(self, block: Tensor) -> Tensor:
        """Mix the (B,N,D,K) neighbor block by the per-vertex matrices."""
        if block.shape[3] != self.k:
            raise ValueError(f"block K={block.shape[3]} != layer K={self.k}")
        return ad.vertex_permute(block, self.mixing_tensor())

    def __call__(self, x: Tensor, table: NeighborTable) -> Tensor:
        """Map (B,N,d_in) features to (B,N,d_out).

        Pipeline: gather -> soft permute -> inner ELU -> column-major
        flatten of each D x K block -> shared affine filters -> outer ELU.
        Padded slots enter as zero columns and pass through the mixing
        unmasked.
        """
        if table.k != self.k:
            raise ValueError(f"table K={table.k} != layer K={self.k}")
        if table.num_vertices != self.num_vertices:
            raise ValueError(f"table N={table.num_vertices} != layer N={self.num_vertices}")
        if x.shape[2] != self.d_in:
            raise ValueError(f"input channels {x.shape[2]} != layer d_in={self.d_in}")
        b = x.shape[0]
        block = ad.gather(x, table)
        mixed = self.soft_permute(block)
        if self.inner_activation:
            mixed = ad.elu(mixed, self.alpha)
        # column-major vec of each (D,K) block: entry index k*D + d; rows are
        # flattened to one 2-D matmul so backward is a single gemm
        flat = ad.transpose(mixed, (0, 1, 3, 2)).reshape(b * self.num_vertices,
                                                         self.k * self.d_in)
        y = ad.matmul(flat, self.filters) + self.bias
        y = y.reshape(b, self.num_vertices, self.d_out)
        if self.outer_activation:
            y = ad.elu(y, self.alpha)
        return y

    # -- bookkeeping -----------------------------------------------------

    def config(self) -> dict:
        return {
            "k": self.k,
            "d_in": self.d_in,
            "d_out": self.d_out,
            "factorized": self.factorized,
            "num_bases": self.num_bases,
            "inner_activation": self.inner_activation,
            "outer_activation": self.outer_activation,
            "activation": "elu",
            "train_mixing": self.train_mixing,
        }


def parameter_groups(layers_or_params) -> dict[str, int]:
    """Trainable-scalar counts split into mixing / filters / bias / fc.

    Accepts a list of layers (anything with .parameters()) or Parameters.
    """
    groups = {"mixing": 0, "filters": 0, "bias": 0, "fc": 0}
    params: list[Parameter] = []
    for item in layers_or_params:
        if isinstance(item, Parameter):
            params.append(item)
        else:
            params.extend(item.parameters())
    for p in params:
        if not p.trainable:
            continue
        leaf = p.name.rsplit(".", 1)[-1]
        if leaf in ("mixing", "coeffs", "bases"):
            groups["mixing"] += p.data.size
        elif leaf == "filters":
            groups["filters"] += p.data.size
        elif leaf == "bias" and not p.name.startswith("fc"):
            groups["bias"] += p.data.size
        else:
            groups["fc"] += p.data.size
    return groups


def parameter_count(layers_or_params) -> int:
    return sum(parameter_groups(layers_or_params).values())
