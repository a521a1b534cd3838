"""Autoencoder, normalizer, PCA baseline, and optimizer behavior."""
import numpy as np
import pytest

from permconv.autodiff import (
    Parameter,
    Tensor,
    finite_difference_check,
    load_parameters,
)
from permconv.model import (
    STD_FLOOR,
    MeshAutoencoder,
    Normalizer,
    PCABaseline,
    reconstruction_error,
)
from permconv.synthetic import SyntheticSpec, icosahedron, make_basis, sample_shapes
from permconv.train import Adam, TrainConfig, TrainingDiverged, evaluate, save_checkpoint, train, validation_split

TINY = dict(latent_dim=2, k=4, enc_channels=(2,), dec_channels=(2,), seed=0)


def _shapes(n_samples, seed=0):
    mesh = icosahedron()
    spec = SyntheticSpec(base="icosahedron", base_args=(), latent_dim_true=2,
                         num_train=n_samples, num_test=0, seed=seed)
    rng = np.random.default_rng(seed)
    basis = make_basis(spec, rng)
    coeffs = rng.uniform(-np.pi, np.pi, size=(n_samples, 2))
    return mesh, sample_shapes(mesh, basis, coeffs)


# -- normalizer ------------------------------------------------------------

def test_normalizer_two_sample_closed_form():
    x = np.zeros((2, 2, 3))
    x[0, 0] = [1.0, 2.0, 3.0]
    x[1, 0] = [3.0, 6.0, 9.0]
    norm = Normalizer().fit(x)
    assert np.allclose(norm.mean[0], [2.0, 4.0, 6.0])
    assert np.allclose(norm.std[0], [1.0, 2.0, 3.0])   # population std over 2 samples
    assert np.allclose(norm.mean[1], 0.0)
    assert np.allclose(norm.std[1], STD_FLOOR)         # zero variance hits the floor


def test_normalizer_round_trip():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 7, 3))
    norm = Normalizer().fit(x)
    back = norm.denormalize(norm.normalize(x))
    assert np.max(np.abs(back - x)) <= 1e-10
    z = norm.normalize(x)
    assert abs(z.mean()) <= 1e-12
    assert np.allclose(z.std(axis=0), 1.0, atol=1e-10)


def test_normalizer_scalar_mode_and_parameters():
    rng = np.random.default_rng(1)
    x = rng.normal(loc=5.0, scale=2.0, size=(6, 4, 3))
    norm = Normalizer(mode="scalar").fit(x)
    assert norm.mean.shape == () or norm.mean.size == 1
    params = {p.name: p for p in norm.as_parameters()}
    assert not params["normalizer.mean"].trainable
    back = Normalizer.from_parameters(params, mode="scalar")
    assert np.array_equal(back.mean, norm.mean)
    assert np.array_equal(back.std, norm.std)


# -- autoencoder -----------------------------------------------------------

def test_model_shapes_and_level_sizes():
    mesh, shapes = _shapes(3)
    model = MeshAutoencoder(mesh, **TINY)
    assert model.level_sizes == [12, 3]
    z = model.encode(Tensor(shapes))
    assert z.shape == (3, 2)
    y = model.decode(z)
    assert y.shape == (3, 12, 3)
    out = model(Tensor(shapes))
    assert out.shape == (3, 12, 3)
    assert out.dtype == np.float64


def test_tiny_end_to_end_gradient_check():
    mesh, shapes = _shapes(2)
    model = MeshAutoencoder(mesh, **TINY)
    rng = np.random.default_rng(2)
    for p in model.parameters():
        if p.name.endswith(".mixing"):
            p.data += 0.05 * rng.normal(size=p.shape)
    x = Tensor(shapes, requires_grad=True)
    params = [p for p in model.parameters() if p.trainable]
    rel = finite_difference_check(lambda *_: model(x), [x] + params)
    assert rel < 1e-4


def test_forward_is_finite_and_input_independent_of_batch_order():
    mesh, shapes = _shapes(4)
    model = MeshAutoencoder(mesh, **TINY)
    out = model(Tensor(shapes)).data
    assert np.all(np.isfinite(out))
    flipped = model(Tensor(shapes[::-1].copy())).data
    assert np.max(np.abs(flipped - out[::-1])) <= 1e-12


def test_config_and_state_round_trip(tmp_path):
    mesh, shapes = _shapes(2)
    model = MeshAutoencoder(mesh, **TINY)
    norm = Normalizer().fit(shapes)
    path = tmp_path / "ckpt.bin"
    save_checkpoint(path, model, norm)

    clone = MeshAutoencoder(mesh, **TINY)
    for p in clone.parameters():
        p.data = p.data + 1.0   # scramble, then restore
    params = load_parameters(path)
    clone.load_state(params)
    x = Tensor(shapes)
    assert np.array_equal(model(x).data, clone(x).data)

    cfg = model.config()
    assert cfg["latent_dim"] == 2 and cfg["level_sizes"] == [12, 3]


def test_load_state_rejects_missing_and_mismatched(tmp_path):
    mesh, _ = _shapes(1)
    model = MeshAutoencoder(mesh, **TINY)
    with pytest.raises(ValueError):
        model.load_state({})
    bad = {p.name: Parameter(np.zeros((2, 2)), p.name) for p in model.parameters()}
    with pytest.raises(ValueError):
        model.load_state(bad)


def test_float32_model_stays_float32():
    mesh, shapes = _shapes(2)
    model = MeshAutoencoder(mesh, dtype=np.float32, **TINY)
    out = model(Tensor(shapes.astype(np.float32)))
    assert out.dtype == np.float32
    loss = (out.abs()).sum()
    loss.backward()
    assert model.layers()[0].filters.grad.dtype == np.float32


# -- PCA baseline ------------------------------------------------------------

def test_pca_exact_at_full_rank():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(5, 6, 3))
    pca = PCABaseline(4).fit(x)   # rank of centered data is at most 4
    err = reconstruction_error(pca.reconstruct(x), x)
    assert err <= 1e-8


def test_pca_error_non_increasing_in_latent_dim():
    _, shapes = _shapes(40, seed=4)
    errs = [reconstruction_error(PCABaseline(d).fit(shapes).reconstruct(shapes), shapes)
            for d in (1, 2, 4, 8)]
    assert all(a >= b - 1e-12 for a, b in zip(errs, errs[1:]))


def test_pca_matches_covariance_eigensolve():
    # independent oracle: project on the top eigenvectors of the sample
    # covariance of the flattened, centered data
    rng = np.random.default_rng(5)
    x = rng.normal(size=(30, 4, 3))
    d = 3
    pca = PCABaseline(d).fit(x)

    flat = x.reshape(30, -1)
    mean = flat.mean(axis=0)
    centered = flat - mean
    cov = centered.T @ centered / 30
    w, v = np.linalg.eigh(cov)
    top = v[:, np.argsort(w)[::-1][:d]]
    recon = (centered @ top @ top.T + mean).reshape(x.shape)

    a = reconstruction_error(pca.reconstruct(x), x)
    b = reconstruction_error(recon, x)
    assert abs(a - b) <= 1e-10


def test_pca_parameter_count():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(10, 5, 3))
    pca = PCABaseline(4).fit(x)
    assert pca.parameter_count() == 15 * 4


def test_reconstruction_error_hand_example():
    target = np.zeros((1, 2, 3))
    pred = np.zeros((1, 2, 3))
    pred[0, 0] = [3.0, 4.0, 0.0]   # distance 5 at one of two vertices
    assert reconstruction_error(pred, target) == pytest.approx(2.5)


# -- optimizer and schedule ---------------------------------------------------

def test_learning_rate_schedule_closed_form():
    cfg = TrainConfig(lr=0.001, lr_decay_per_epoch=0.99)
    assert cfg.lr_at(0) == pytest.approx(0.001)
    assert cfg.lr_at(10) == pytest.approx(0.001 * 0.99 ** 10, rel=1e-15)


def test_adam_decay_exemption():
    def make_pair():
        a = Parameter(np.ones(3), "w.filters")
        b = Parameter(np.ones(3), "p.mixing", decay_exempt=True)
        return a, b

    a0, b0 = make_pair()
    opt0 = Adam([a0, b0], lr=0.01, weight_decay=0.0)
    a1, b1 = make_pair()
    opt1 = Adam([a1, b1], lr=0.01, weight_decay=0.5)
    for a, b, opt in ((a0, b0, opt0), (a1, b1, opt1)):
        a.grad = np.full(3, 0.3)
        b.grad = np.full(3, 0.3)
        opt.step()
    assert np.array_equal(b0.data, b1.data)       # exempt: identical with decay on
    assert not np.array_equal(a0.data, a1.data)   # decayed parameter differs


def test_adam_skips_frozen_parameters():
    frozen = Parameter(np.ones(2), "frozen", trainable=False)
    live = Parameter(np.ones(2), "live")
    opt = Adam([frozen, live], lr=0.1)
    frozen.grad = np.ones(2)
    live.grad = np.ones(2)
    opt.step()
    assert np.array_equal(frozen.data, np.ones(2))
    assert not np.array_equal(live.data, np.ones(2))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(loss="huber")
    with pytest.raises(ValueError):
        TrainConfig(dtype="f16")


# -- training loop -------------------------------------------------------------

def test_validation_split_properties():
    cfg = TrainConfig(seed=9)
    val, fit = validation_split(250, cfg)
    assert len(val) == 100 and len(fit) == 150
    assert set(fit.tolist()).isdisjoint(val.tolist())
    val2, fit2 = validation_split(250, cfg)
    assert np.array_equal(val, val2) and np.array_equal(fit, fit2)
    val, fit = validation_split(30, cfg)
    assert len(val) == 29 and len(fit) == 1
    val, fit = validation_split(1, cfg)
    assert len(val) == 0 and len(fit) == 1


def test_overfit_single_sample():
    # normalizer comes from a wider pool: fit on the target sample alone
    # its mean would already reconstruct it with zero error
    mesh, pool = _shapes(6, seed=7)
    norm = Normalizer().fit(pool)
    sample = pool[:1]
    model = MeshAutoencoder(mesh, **TINY)
    initial = evaluate(model, norm, sample, batch_size=1)
    cfg = TrainConfig(lr=0.003, lr_decay_per_epoch=0.995, epochs=300,
                      batch_size=1, seed=0, val_samples=0)
    train(model, sample, cfg, normalizer=norm)
    final = evaluate(model, norm, sample, batch_size=1)
    assert final < 0.01 * initial


def test_nan_in_training_data_aborts():
    mesh, shapes = _shapes(4, seed=8)
    poisoned = shapes.copy()
    poisoned[1, 3, 0] = np.nan
    model = MeshAutoencoder(mesh, **TINY)
    cfg = TrainConfig(epochs=2, batch_size=2, seed=0, val_samples=0)
    with pytest.raises(TrainingDiverged) as err:
        train(model, poisoned, cfg)
    assert "epoch" in str(err.value)


def test_evaluate_batch_size_invariant():
    mesh, shapes = _shapes(7, seed=9)
    model = MeshAutoencoder(mesh, **TINY)
    norm = Normalizer().fit(shapes)
    a = evaluate(model, norm, shapes, batch_size=7)
    b = evaluate(model, norm, shapes, batch_size=2)
    assert a == pytest.approx(b, rel=1e-12)


def test_training_log_round_trip(tmp_path):
    mesh, shapes = _shapes(6, seed=10)
    model = MeshAutoencoder(mesh, **TINY)
    cfg = TrainConfig(epochs=3, batch_size=3, seed=1, val_samples=2)
    log_path = tmp_path / "log.csv"
    log, _ = train(model, shapes, cfg, log_path=log_path)
    from permconv.train import read_log
    back = read_log(log_path)
    assert back.rows == log.rows
    assert log.best_epoch == int(np.argmin([r[3] for r in log.rows]))
