import numpy as np
import pytest

import permconv.autodiff as ad
from permconv.autodiff import (Parameter, Tensor, finite_difference_check,
                               load_parameters, save_parameters)
from permconv.mesh import build_neighbor_table
from permconv.synthetic import icosahedron

TOL = 1e-4   # relative error bound for all finite-difference checks


def rand(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def test_add_mul_broadcast_gradients():
    rng = np.random.default_rng(0)
    a, b = rand(rng, 3, 4), rand(rng, 4)
    assert finite_difference_check(lambda x, y: x + y, [a, b]) < TOL
    assert finite_difference_check(lambda x, y: x * y, [a, b]) < TOL


def test_elu_gradient_both_sides():
    vals = np.array([-2.0, -0.5, -1e-3, 1e-3, 0.5, 2.0])
    t = Tensor(vals, requires_grad=True)
    assert finite_difference_check(lambda x: ad.elu(x), [t]) < TOL


def test_elu_matches_closed_form():
    x = np.array([-1.0, 0.0, 2.0])
    y = ad.elu(Tensor(x)).data
    assert np.allclose(y, [np.expm1(-1.0), 0.0, 2.0], atol=1e-15)


def test_matmul_gradient():
    rng = np.random.default_rng(1)
    a, b = rand(rng, 5, 3), rand(rng, 3, 2)
    assert finite_difference_check(lambda x, y: ad.matmul(x, y), [a, b]) < TOL


def test_batched_matmul_gradient():
    rng = np.random.default_rng(2)
    a, b = rand(rng, 4, 5, 3), rand(rng, 3, 2)
    assert finite_difference_check(lambda x, y: ad.matmul(x, y), [a, b]) < TOL


def test_reductions_and_reshape_gradient():
    rng = np.random.default_rng(3)
    a = rand(rng, 3, 4)
    assert finite_difference_check(lambda x: x.sum(axis=1), [a]) < TOL
    assert finite_difference_check(lambda x: x.mean(), [a]) < TOL
    assert finite_difference_check(
        lambda x: x.reshape(12).abs(), [a]) < TOL
    assert finite_difference_check(
        lambda x: ad.transpose(x, (1, 0)), [a]) < TOL


def test_take_and_concat_gradient():
    rng = np.random.default_rng(4)
    a, b = rand(rng, 3, 4), rand(rng, 2, 4)
    assert finite_difference_check(lambda x: x[1:, :2], [a]) < TOL
    assert finite_difference_check(
        lambda x, y: ad.concat([x, y], axis=0), [a, b]) < TOL


def test_gather_gradient_on_mesh():
    rng = np.random.default_rng(5)
    table = build_neighbor_table(icosahedron(), 6)
    x = rand(rng, 2, 12, 3)
    assert finite_difference_check(lambda t: ad.gather(t, table), [x]) < TOL


def test_vertex_permute_gradient():
    rng = np.random.default_rng(6)
    x = rand(rng, 2, 4, 3, 5)
    p = rand(rng, 4, 5, 5)
    assert finite_difference_check(lambda a, b: ad.vertex_permute(a, b), [x, p]) < TOL


def test_sparse_apply_gradient():
    import scipy.sparse as sp
    rng = np.random.default_rng(7)
    mat = sp.random(3, 6, density=0.5, random_state=0, format="csr")
    x = rand(rng, 2, 6, 4)
    assert finite_difference_check(lambda t: ad.sparse_apply(mat, t), [x]) < TOL


def test_constant_loss_zero_gradient():
    a = Tensor(np.ones((3, 2)), requires_grad=True)
    out = (a * 0.0).sum()
    out.backward()
    assert np.array_equal(a.grad, np.zeros((3, 2)))


def test_no_graph_when_no_grad_needed():
    a = Tensor(np.ones(3))
    out = ad.mul(a, 2.0)
    assert not out.requires_grad
    assert out._parents == ()


def test_gradient_accumulates_across_uses():
    a = Tensor(np.array([2.0]), requires_grad=True)
    out = (a * 3.0 + a * 5.0).sum()
    out.backward()
    assert np.allclose(a.grad, [8.0])


def test_backward_needs_scalar():
    a = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (a * 2.0).backward()


def test_f32_graph_stays_f32():
    a = Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True)
    loss = ((a * 2.0 - 1.0).abs()).mean()
    assert loss.data.dtype == np.float32
    loss.backward()
    assert a.grad.dtype == np.float32


# -- parameter container -------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    params = [
        Parameter(rng.normal(size=(3, 4)), "layer.filters"),
        Parameter(rng.normal(size=(2, 3, 3)), "layer.mixing", decay_exempt=True),
        Parameter(rng.normal(size=5).astype(np.float32), "layer.bias",
                  trainable=False),
    ]
    path = tmp_path / "ckpt.bin"
    save_parameters(path, params)
    back = load_parameters(path)
    assert set(back) == {"layer.filters", "layer.mixing", "layer.bias"}
    for p in params:
        q = back[p.name]
        assert np.array_equal(q.data, p.data)
        assert q.data.dtype == p.data.dtype
        assert q.decay_exempt == p.decay_exempt
        assert q.trainable == p.trainable


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "ckpt.bin"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(ValueError):
        load_parameters(path)


def test_duplicate_parameter_names_rejected(tmp_path):
    params = [Parameter(np.zeros(2), "w"), Parameter(np.ones(2), "w")]
    with pytest.raises(ValueError):
        save_parameters(tmp_path / "ckpt.bin", params)
