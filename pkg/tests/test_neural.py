import numpy as np
import pytest

from hybseq.dataset import DatasetConfig, generate, records_to_arrays
from hybseq.neural import (Adam, BatchNorm, BCELoss, CheckpointError, Conv1D, Conv2D, Dense, Dropout,
                           FeatureMLP, Flatten, ModelGraph, MSELoss, ReLU, ShapeMismatch, Sigmoid,
                           Squeeze, TrainConfig, YieldCNN, build_cnn, build_cnn_lite, build_mlp,
                           gradcheck_layer, gradcheck_loss, load_checkpoint, predict_batch,
                           save_checkpoint, train)
from hybseq.neural.estimators import encode_pairs
from hybseq.seq import one_hot_pairs

TOL = 1e-4


def small(shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape) * 1e-2


@pytest.mark.parametrize("layer,shape", [
    (lambda r: Dense(5, 3, r), (4, 5)),
    (lambda r: Conv1D(3, 4, 3, r), (2, 3, 7)),
    (lambda r: Conv2D(2, 3, 4, 3, r), (2, 2, 4, 6)),
    (lambda r: BatchNorm(3), (6, 3)),
    (lambda r: BatchNorm(3), (4, 3, 5)),
    (lambda r: ReLU(), (4, 6)),
    (lambda r: Sigmoid(), (4, 6)),
    (lambda r: Dropout(0.3, r), (4, 6)),
    (lambda r: Flatten(), (2, 3, 4)),
    (lambda r: Squeeze(2), (2, 3, 1, 4)),
])
def test_layer_gradients(layer, shape):
    layer = layer(np.random.default_rng(1))
    x = small(shape)
    if isinstance(layer, ReLU):
        x = x + np.sign(x) * 1e-3  # keep away from the kink
    errs = gradcheck_layer(layer, x)
    assert max(errs.values()) < TOL, errs


def test_relu_composite_gradient():
    rng = np.random.default_rng(2)
    model = ModelGraph([Conv1D(2, 3, 3, rng), BatchNorm(3), ReLU(), Flatten(), Dense(12, 1, rng)],
                       (2, 6)).astype(np.float64).train()
    x = np.random.default_rng(3).standard_normal((5, 2, 6))
    w = np.random.default_rng(4).standard_normal((5, 1))

    def f():
        return float(np.sum(w * model.forward(x, "train")))

    f()
    model.backward(w)
    analytic = model.layers[0].grads["W"].copy()
    num = np.zeros_like(analytic)
    W = model.layers[0].params["W"]
    for idx in np.ndindex(W.shape):
        old = W[idx]
        W[idx] = old + 1e-6
        up = f()
        W[idx] = old - 1e-6
        down = f()
        W[idx] = old
        num[idx] = (up - down) / 2e-6
    assert np.max(np.abs(num - analytic)) / (np.max(np.abs(num)) + np.max(np.abs(analytic))) < TOL


def test_loss_gradients():
    rng = np.random.default_rng(5)
    assert gradcheck_loss(MSELoss(), rng.random((8, 1)), rng.random((8, 1))) < TOL
    assert gradcheck_loss(BCELoss(), rng.uniform(0.1, 0.9, (8, 1)), rng.integers(0, 2, (8, 1))) < TOL


def test_architectures():
    cnn, lite = build_cnn(), build_cnn_lite()
    assert cnn.flatten_width == 384 and lite.flatten_width == 512
    assert abs(cnn.n_params - 2.8e6) <= 0.28e6
    assert abs(lite.n_params - 470e3) <= 47e3
    assert lite.n_params < cnn.n_params
    widths = [s[-1] for s in cnn.shapes if len(s) == 2 and s[0] in (512, 128, 64)]
    assert widths[0] == 18 and 6 in widths
    assert [s for s in lite.shapes if len(s) == 2][-1] == (64, 8)


def test_shape_chain_is_checked():
    with pytest.raises(ShapeMismatch):
        ModelGraph([Dense(5, 3), Dense(4, 1)], (5,))
    with pytest.raises(ShapeMismatch):
        build_cnn_lite().forward(np.zeros((1, 2, 4, 20)))


def test_forward_outputs():
    lite = build_cnn_lite()
    x = one_hot_pairs([("ACGT" * 5, "TTGCA" * 4)] * 32)
    assert lite.forward(x[:1]).shape == (1, 1)
    assert lite.forward(x).shape == (32, 1)
    mlp = build_mlp()
    assert [l.n_out for l in mlp.layers if isinstance(l, Dense)][:-1] == [117, 18, 7, 19]
    z = np.random.default_rng(0).standard_normal((16, 9))
    out = mlp.forward(z, "eval")
    assert np.all((out > 0) & (out < 1))
    np.testing.assert_array_equal(out, mlp.forward(z, "eval"))


def test_eval_is_deterministic_and_dropout_zero_matches():
    rng = np.random.default_rng(0)
    model = ModelGraph([Dense(4, 6, rng), ReLU(), Dropout(0.0, rng), Dense(6, 1, rng)], (4,))
    x = rng.standard_normal((5, 4))
    np.testing.assert_array_equal(model.forward(x, "train"), model.forward(x, "eval"))


def test_batchnorm_train_statistics():
    bn = BatchNorm(4).astype(np.float64)
    bn.training = True
    x = np.random.default_rng(1).normal(3, 5, (64, 4, 7))
    y = bn.forward(x)
    assert np.all(np.abs(y.mean(axis=(0, 2))) < 1e-5)
    assert np.all(np.abs(y.var(axis=(0, 2)) - 1) < 1e-3)


def test_adam_edge_cases():
    rng = np.random.default_rng(0)
    model = ModelGraph([Dense(3, 2, rng)], (3,))
    before = model.state()
    for layer in model.layers:
        layer.grads = {k: np.zeros_like(v) for k, v in layer.params.items()}
    Adam(model, lr=1e-2).step()
    for k, v in model.state().items():
        np.testing.assert_array_equal(v, before[k])
    for layer in model.layers:
        layer.grads = {k: np.ones_like(v) for k, v in layer.params.items()}
    Adam(model, lr=0.0).step()
    for k, v in model.state().items():
        np.testing.assert_array_equal(v, before[k])
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(patience=0)


@pytest.fixture(scope="module")
def overfit_set():
    recs = generate(DatasetConfig(n_roots=5, target_size=32, seed=2))
    P, Y, _ = records_to_arrays(recs)
    return encode_pairs(P), Y[:, 4].astype(np.float32)


def test_overfit_32_samples(overfit_set):
    X, y = overfit_set
    model = build_cnn_lite(seed=0).astype(np.float32)
    cfg = TrainConfig(lr=1e-3, batch_size=32, patience=1000, max_epochs=500, seed=0)
    model, hist = train(model, X, y, X, y, cfg)
    assert len(hist) == 500
    assert np.mean((predict_batch(model, X, clamp=False) - y) ** 2) < 1e-3


def test_overfit_loss_monotone_after_epoch_10(overfit_set):
    # deterministic variant: dropout off, full batch, float64
    X, y = overfit_set
    model = build_cnn_lite(seed=0).astype(np.float64)
    for layer in model.layers:
        if isinstance(layer, Dropout):
            layer.p = 0.0
    cfg = TrainConfig(lr=1e-4, batch_size=32, patience=1000, max_epochs=500, seed=0)
    _, hist = train(model, X, y, X, y, cfg)
    loss = np.array(hist.train_loss)
    assert np.all(np.diff(loss[11:]) <= 1e-4)
    assert loss[-1] < 1e-3


def _toy_regression(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 4))
    return X, (X @ np.array([0.5, -0.2, 0.1, 0.0]) > 0).astype(float)


def test_early_stopping_and_determinism():
    X, y = _toy_regression(400, 0)
    Xv, yv = _toy_regression(100, 1)

    def run():
        model = build_mlp(4, (8,), 0.1, seed=3)
        return train(model, X, y, Xv, yv, TrainConfig(lr=1e-2, batch_size=64, loss="bce",
                                                      patience=3, seed=7))

    m1, h1 = run()
    m2, h2 = run()
    assert h1.train_loss == h2.train_loss and h1.val_loss == h2.val_loss
    assert len(h1) >= 4
    assert len(h1) - 1 - h1.best_epoch == 3
    assert min(h1.val_loss) == h1.val_loss[h1.best_epoch]
    from hybseq.neural.training import evaluate_loss
    assert evaluate_loss(m1, Xv, yv, BCELoss()) == pytest.approx(h1.val_loss[h1.best_epoch], rel=1e-6)


def test_predict_batch_independent_and_ordered():
    lite = build_cnn_lite(seed=1).astype(np.float32)
    rng = np.random.default_rng(0)
    pairs = [("".join(rng.choice(list("ACGT"), 20)), "".join(rng.choice(list("ACGT"), 22)))
             for _ in range(40)]
    X = encode_pairs(pairs)
    a = predict_batch(lite, X, 1, clamp=False)
    b = predict_batch(lite, X, 512, clamp=False)
    np.testing.assert_allclose(a, b, atol=1e-5)
    np.testing.assert_allclose(predict_batch(lite, X[::-1], 7, clamp=False), a[::-1], atol=1e-5)
    c = predict_batch(lite, X, 512)
    assert c.min() >= 0 and c.max() <= 1


def test_threshold_feeds_metrics_report():
    from hybseq.baseline import MetricsReport
    pred = np.array([0.1, 0.3, 0.9, 0.05])
    truth = np.array([0.0, 0.25, 1.0, 0.3])
    rep = MetricsReport.from_predictions("cnn", truth >= 0.2, pred >= 0.2, pred, truth, pred)
    assert (rep.tp, rep.fp, rep.tn, rep.fn) == (2, 0, 1, 1)


def test_encoding_orientation():
    par = encode_pairs([("ACG", "TTA")], orientation="parallel")
    anti = encode_pairs([("ACG", "TTA")], orientation="antiparallel")
    np.testing.assert_array_equal(par, one_hot_pairs([("ACG", "TTA")]))
    np.testing.assert_array_equal(anti, one_hot_pairs([("ACG", "ATT")]))
    with pytest.raises(ValueError):
        encode_pairs([("A", "C")], orientation="sideways")


def test_checkpoint_round_trip(tmp_path):
    lite = build_cnn_lite(seed=4).astype(np.float32)
    x = one_hot_pairs([("ACGT" * 5, "GGCA" * 6)] * 3)
    save_checkpoint(lite, tmp_path / "m.npz")
    back, manifest = load_checkpoint(tmp_path / "m.npz")
    assert manifest["version"] == 1 and manifest["kind"] == "cnn-lite"
    np.testing.assert_array_equal(back.forward(x), lite.eval().forward(x))
    (tmp_path / "bad.npz").write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.npz")


def test_estimators_fit_predict_save(tmp_path):
    recs = generate(DatasetConfig(n_roots=10, target_size=300, seed=5))
    P, Y, H = records_to_arrays(recs)
    cnn = YieldCNN("cnn-lite", max_epochs=2, batch_size=64).fit(P, Y[:, 4])
    pred = cnn.predict(P)
    assert pred.shape == (300,) and 0 <= pred.min() and pred.max() <= 1
    cnn.save(tmp_path / "c.npz")
    np.testing.assert_allclose(YieldCNN.load(tmp_path / "c.npz").predict(P), pred, atol=1e-6)
    assert YieldCNN.load(tmp_path / "c.npz").get_params()["orientation"] == "antiparallel"

    sym = YieldCNN("cnn-lite", max_epochs=1, batch_size=64, swap_augment=True,
                   symmetrize=True).fit(P[:100], Y[:100, 4])
    flipped = [(b, a) for a, b in P]
    np.testing.assert_array_equal(sym.predict(P), sym.predict(flipped))
    sym.save(tmp_path / "s.npz")
    assert YieldCNN.load(tmp_path / "s.npz").symmetrize
    with pytest.raises(ValueError):
        sym.predict(encode_pairs(P))

    X = np.random.default_rng(0).standard_normal((300, 9))
    mlp = FeatureMLP(max_epochs=3).fit(X, H)
    proba = mlp.predict_proba(X)
    np.testing.assert_allclose(proba.sum(axis=1), 1)
    mlp.save(tmp_path / "m.npz")
    np.testing.assert_allclose(FeatureMLP.load(tmp_path / "m.npz").predict_proba(X), proba, atol=1e-6)
    with pytest.raises(ValueError):
        FeatureMLP().fit(X, np.full(300, 2.0))
