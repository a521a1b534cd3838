"""Oracles for the soft-permutation convolution layer.

The layer is checked against a direct scalar-loop evaluation of its
definition: gather the padded neighbor block, right-multiply by the
per-vertex mixing matrix, inner ELU, column-major flatten, shared affine
filter, outer ELU.
"""
import numpy as np
import pytest

from permconv import autodiff as ad
from permconv.autodiff import Tensor, finite_difference_check
from permconv.conv import SoftPermConv, identity_mixing, parameter_count, parameter_groups
from permconv.mesh import MeshTopology, build_neighbor_table, permute_table_slots
from permconv.synthetic import grid, icosahedron

TOL = 1e-12


def _elu(x, alpha=1.0):
    return np.where(x > 0, x, alpha * np.expm1(np.minimum(x, 0.0)))


def oracle_layer(x, table, mixing, filters, bias, *, inner=True, outer=True, alpha=1.0):
    """Scalar-loop evaluation of the layer, one vertex at a time."""
    b, n, d_in = x.shape
    k = table.k
    d_out = filters.shape[1]
    out = np.zeros((b, n, d_out))
    for ib in range(b):
        for i in range(n):
            block = np.zeros((d_in, k))
            for j in range(k):
                src = table.indices[i, j]
                if src >= 0:
                    block[:, j] = x[ib, src]
            mixed = block @ mixing[i]
            if inner:
                mixed = _elu(mixed, alpha)
            vec = np.zeros(k * d_in)
            for j in range(k):
                for d in range(d_in):
                    vec[j * d_in + d] = mixed[d, j]   # column-major block layout
            y = vec @ filters + bias
            if outer:
                y = _elu(y, alpha)
            out[ib, i] = y
    return out


def _layer_case(seed, *, n_mesh="grid", k=5, d_in=2, d_out=3, batch=2, **kw):
    mesh = grid(3, 3) if n_mesh == "grid" else icosahedron()
    table = build_neighbor_table(mesh, k)
    rng = np.random.default_rng(seed)
    layer = SoftPermConv("l", mesh.num_vertices, k, d_in, d_out, rng=rng, **kw)
    x = rng.normal(size=(batch, mesh.num_vertices, d_in))
    return mesh, table, layer, x


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_forward_matches_scalar_oracle(seed):
    # [DERIVED] oracle: direct per-vertex evaluation of the layer definition
    _, table, layer, x = _layer_case(seed)
    rng = np.random.default_rng(100 + seed)
    layer.mixing.data[:] = rng.normal(size=layer.mixing.shape)
    got = layer(Tensor(x), table).data
    want = oracle_layer(x, table, layer.mixing.data, layer.filters.data,
                        layer.bias.data)
    assert np.max(np.abs(got - want)) <= TOL


def test_forward_matches_oracle_without_activations():
    _, table, layer, x = _layer_case(3, inner_activation=False, outer_activation=False)
    rng = np.random.default_rng(103)
    layer.mixing.data[:] = rng.normal(size=layer.mixing.shape)
    got = layer(Tensor(x), table).data
    want = oracle_layer(x, table, layer.mixing.data, layer.filters.data,
                        layer.bias.data, inner=False, outer=False)
    assert np.max(np.abs(got - want)) <= TOL


def test_identity_mixing_reduces_to_plain_neighborhood_conv():
    # with P=I and no inner ELU the layer is a dense filter over the
    # zero-padded neighbor concatenation in table order
    _, table, layer, x = _layer_case(4, inner_activation=False)
    got = layer(Tensor(x), table).data

    b, n, d_in = x.shape
    concat = np.zeros((b, n, table.k * d_in))
    for i in range(n):
        for j in range(table.k):
            src = table.indices[i, j]
            if src >= 0:
                concat[:, i, j * d_in:(j + 1) * d_in] = x[:, src]
    want = _elu(concat @ layer.filters.data + layer.bias.data)
    assert np.max(np.abs(got - want)) <= TOL


def test_factorized_full_basis_matches_full_layer():
    # B=N with V=I makes each basis matrix the vertex's own mixing matrix
    mesh, table, full, x = _layer_case(5)
    rng = np.random.default_rng(105)
    full.mixing.data[:] = rng.normal(size=full.mixing.shape)

    n = mesh.num_vertices
    fact = SoftPermConv("f", n, table.k, 2, 3, factorized=True, num_bases=n,
                        rng=np.random.default_rng(5))
    fact.coeffs.data[:] = np.eye(n)
    fact.bases.data[:] = full.mixing.data
    fact.filters.data[:] = full.filters.data
    fact.bias.data[:] = full.bias.data

    a = full(Tensor(x), table).data
    b = fact(Tensor(x), table).data
    assert np.max(np.abs(a - b)) <= TOL
    assert np.max(np.abs(fact.materialize_mixing() - full.mixing.data)) <= TOL


def test_reshuffle_equivariance():
    # permuting neighbor slots and applying the compensating row
    # permutation of every mixing matrix leaves the output unchanged
    _, table, layer, x = _layer_case(6, n_mesh="ico", k=7)
    rng = np.random.default_rng(106)
    layer.mixing.data[:] = rng.normal(size=layer.mixing.shape)
    base = layer(Tensor(x), table).data

    slot_perm = rng.permutation(table.k - 1)
    shuffled = permute_table_slots(table, slot_perm)
    cols = np.concatenate([[0], slot_perm + 1])
    layer.mixing.data[:] = layer.mixing.data[:, cols, :]
    moved = layer(Tensor(x), shuffled).data
    assert np.max(np.abs(moved - base)) <= TOL


def test_gradients_full_layer():
    _, table, layer, x = _layer_case(7)
    rng = np.random.default_rng(107)
    layer.mixing.data[:] = 0.1 * rng.normal(size=layer.mixing.shape)
    xt = Tensor(x, requires_grad=True)

    # perturbations happen in place on these objects, so the closure can
    # ignore the arguments
    rel = finite_difference_check(
        lambda *_: layer(xt, table),
        [xt, layer.mixing, layer.filters, layer.bias])
    assert rel < 1e-4


def test_gradients_factorized_layer():
    mesh = icosahedron()
    table = build_neighbor_table(mesh, 5)
    layer = SoftPermConv("f", mesh.num_vertices, 5, 2, 2, factorized=True,
                         num_bases=3, rng=np.random.default_rng(8))
    rng = np.random.default_rng(108)
    layer.coeffs.data[:] = rng.normal(size=layer.coeffs.shape)
    x = Tensor(rng.normal(size=(2, mesh.num_vertices, 2)), requires_grad=True)
    rel = finite_difference_check(
        lambda *_: layer(x, table),
        [x, layer.coeffs, layer.bases, layer.filters, layer.bias])
    assert rel < 1e-4


def test_bias_gradient_is_vertex_count_when_linear():
    _, table, layer, x = _layer_case(9, inner_activation=False,
                                     outer_activation=False)
    out = layer(Tensor(x), table)
    out.sum().backward()
    b, n, _ = x.shape
    assert np.allclose(layer.bias.grad, b * n)


def test_zero_upstream_gradient_zeroes_all_parameter_gradients():
    _, table, layer, x = _layer_case(10)
    out = layer(Tensor(x), table)
    (out * 0.0).sum().backward()
    for p in layer.parameters():
        assert p.grad is not None
        assert np.all(p.grad == 0.0)


def test_frozen_mixing_gets_no_gradient_and_leaves_trainable_count():
    mesh, table, layer, x = _layer_case(11, train_mixing=False)
    out = layer(Tensor(x), table)
    out.sum().backward()
    assert layer.mixing.grad is None
    assert layer.filters.grad is not None
    groups = parameter_groups([layer])
    assert groups["mixing"] == 0
    n, k = mesh.num_vertices, table.k
    assert groups["filters"] == k * 2 * 3
    assert groups["bias"] == 3


def test_parameter_counts_full_vs_factorized():
    n, k, b = 20, 9, 4
    full = SoftPermConv("a", n, k, 3, 5)
    fact = SoftPermConv("b", n, k, 3, 5, factorized=True, num_bases=b)
    shared = k * 3 * 5 + 5
    assert parameter_count([full]) == n * k * k + shared
    assert parameter_count([fact]) == n * b + b * k * k + shared


def test_identity_mixing_helper():
    mix = identity_mixing(4, 3)
    assert mix.shape == (4, 3, 3)
    assert np.array_equal(mix[2], np.eye(3))


def test_factorized_identity_init_materializes_identity():
    layer = SoftPermConv("f", 6, 4, 2, 2, factorized=True, num_bases=3)
    assert np.max(np.abs(layer.materialize_mixing() - identity_mixing(6, 4))) == 0.0


def test_shape_validation_errors():
    mesh, table, layer, x = _layer_case(12)
    bad = build_neighbor_table(mesh, table.k + 1)
    with pytest.raises(ValueError):
        layer(Tensor(x), bad)
    with pytest.raises(ValueError):
        layer(Tensor(x[:, :, :1]), table)
    with pytest.raises(ValueError):
        SoftPermConv("z", 4, 3, 2, 2, mixing_init="gaussian")


def test_config_round_trip_fields():
    layer = SoftPermConv("c", 5, 3, 2, 4, factorized=True, num_bases=2,
                         outer_activation=False)
    cfg = layer.config()
    assert cfg["k"] == 3 and cfg["d_out"] == 4
    assert cfg["factorized"] and cfg["num_bases"] == 2
    assert not cfg["outer_activation"] and cfg["activation"] == "elu"
