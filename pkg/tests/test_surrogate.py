import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plasmo.dataset import SampleRecord, ScalerParams, standardize
from plasmo.errors import DivergenceError, EvaluationError, FormatError, ShapeError, UsageError
from plasmo.surrogate import (
    Adam,
    BatchNorm,
    Conv2d,
    Dense,
    Dropout,
    Sequential,
    Surrogate,
    TrainConfig,
    Upsample2x,
    build_cnn,
    build_mlp,
    evaluate,
    fit,
    load_model,
    loss_and_grad,
    save_model,
    train_mlp,
)
from plasmo.surrogate import io as model_io


def randomize(net, rng):
    """Move biases and batch-norm affine terms off their defaults so no ReLU sits exactly on its kink."""
    for name, p in net.parameters():
        if name.endswith(".b") or name.endswith(".beta"):
            p[...] = rng.normal(scale=0.3, size=p.shape)
        elif name.endswith(".gamma"):
            p[...] = rng.uniform(0.5, 1.5, size=p.shape)


def numeric_grad(net, x, y, p, ix, h=1e-5):
    old = p[ix]
    p[ix] = old + h
    up = np.mean((net.forward(x, True) - y) ** 2)
    p[ix] = old - h
    down = np.mean((net.forward(x, True) - y) ** 2)
    p[ix] = old
    return (up - down) / (2 * h)


def grad_errors(net, x, y, rng=None, picks=None):
    """Relative error analytic vs central difference per checked element, keyed by parameter name."""
    loss_and_grad(net, x, y, True)
    analytic = {n: g.copy() for n, g in net.gradients()}
    params = net.parameters()
    entries = [(n, p, ix) for n, p in params for ix in np.ndindex(p.shape)]
    if picks is not None:
        entries = [entries[i] for i in rng.choice(len(entries), picks, replace=False)]
    out = []
    for name, p, ix in entries:
        a = analytic[name][ix]
        num = numeric_grad(net, x, y, p, ix)
        out.append((name, abs(a - num) / max(abs(a), abs(num), 1e-8)))
    return out


def naive_conv(x, W, b):
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((n, W.shape[0], h, w))
    for o in range(W.shape[0]):
        for i in range(h):
            for j in range(w):
                out[:, o, i, j] = np.sum(xp[:, :, i : i + 3, j : j + 3] * W[o], axis=(1, 2, 3)) + b[o]
    return out


class TestForward:
    def test_zero_weights_give_zero(self):
        net = build_mlp(dropout=0.2)
        for _, p in net.parameters():
            p[...] = 0.0
        x = np.random.default_rng(0).normal(size=(5, 4))
        assert np.all(net.forward(x) == 0.0)

    def test_dense_hand_example(self):
        layer = Dense("d", 2, 2)
        layer.params["W"][...] = [[1.0, 2.0], [3.0, 4.0]]
        layer.params["b"][...] = [0.5, -1.0]
        # x W + b with x = [1, -1]: [1 - 3 + 0.5, 2 - 4 - 1]
        assert layer.forward(np.array([[1.0, -1.0]])).tolist() == [[-1.5, -3.0]]

    def test_infer_is_deterministic(self):
        net = build_mlp()
        x = np.random.default_rng(1).normal(size=(7, 4))
        assert np.array_equal(net.forward(x), net.forward(x))

    def test_shape_error_names_layer(self):
        with pytest.raises(ShapeError, match="dense0"):
            build_mlp().forward(np.zeros((3, 5)))

    def test_backward_needs_forward(self):
        with pytest.raises(UsageError):
            build_mlp().backward(np.zeros((3, 2)))

    def test_cnn_output_grid(self):
        net = build_cnn()
        out = net.forward(np.zeros((2, 4)))
        assert out.shape == (2, 1, 64, 48)

    def test_conv_matches_direct_loops(self):
        rng = np.random.default_rng(2)
        layer = Conv2d("c", 3, 2, rng)
        layer.params["b"][...] = [0.1, -0.2]
        x = rng.normal(size=(2, 3, 5, 4))
        assert np.allclose(layer.forward(x), naive_conv(x, layer.params["W"], layer.params["b"]), atol=1e-12)

    def test_upsample_adjoint(self):
        rng = np.random.default_rng(3)
        layer = Upsample2x("u")
        x = rng.normal(size=(2, 3, 4, 5))
        y = rng.normal(size=(2, 3, 8, 10))
        ux = layer.forward(x)
        assert np.sum(ux * y) == pytest.approx(np.sum(x * layer.backward(y)), rel=1e-12)

    def test_batchnorm_identical_inputs(self):
        net = build_mlp()
        x = np.tile(np.random.default_rng(4).normal(size=(1, 4)), (6, 1))
        out = net.forward(x)
        assert np.all(out == out[0])

    def test_batchnorm_train_statistics(self):
        bn = BatchNorm("bn", 3)
        x = np.random.default_rng(5).normal(loc=2.0, scale=3.0, size=(50, 3))
        y = bn.forward(x, train=True)
        assert np.allclose(y.mean(axis=0), 0.0, atol=1e-12)
        assert np.allclose(y.var(axis=0), 1.0, atol=1e-3)
        assert np.allclose(bn.state["mean"], 0.1 * x.mean(axis=0))

    def test_dropout_monte_carlo(self):
        rng = np.random.default_rng(6)
        net = Sequential([Dense("a", 4, 32, rng), Dropout("drop", 0.2), Dense("b", 32, 1, rng)])
        x = rng.normal(size=(1, 4))
        infer = net.forward(x)[0, 0]
        samples = np.array([net.forward(x, True, rng)[0, 0] for _ in range(10_000)])
        stderr = samples.std() / np.sqrt(samples.size)
        assert abs(samples.mean() - infer) < 2 * stderr

    def test_dropout_needs_rng_in_training(self):
        with pytest.raises(UsageError):
            Dropout("d", 0.5).forward(np.ones((2, 2)), train=True)


class TestGradients:
    def test_mlp_every_parameter(self):
        rng = np.random.default_rng(7)
        net = build_mlp(hidden=(16,), dropout=0.0, seed=1)
        randomize(net, rng)
        x, y = rng.normal(size=(8, 4)), rng.normal(size=(8, 2))
        errors = grad_errors(net, x, y)
        assert {n.split(".")[1] for n, _ in errors} == {"W", "b", "gamma", "beta"}
        assert max(e for _, e in errors) < 1e-4

    def test_cnn_sampled_parameters(self):
        rng = np.random.default_rng(8)
        net = build_cnn(coarse=(4, 3), channels=(4, 3), dropout=0.0, seed=2)
        randomize(net, rng)
        x, y = rng.normal(size=(6, 4)), rng.normal(size=(6, 1, 8, 6))
        errors = grad_errors(net, x, y, rng, picks=50)
        assert max(e for _, e in errors) < 1e-4

    def test_cnn_every_parameter_class(self):
        rng = np.random.default_rng(9)
        net = build_cnn(coarse=(2, 2), channels=(2, 2, 2), dropout=0.0, seed=3)
        randomize(net, rng)
        x, y = rng.normal(size=(4, 4)), rng.normal(size=(4, 1, 8, 8))
        errors = grad_errors(net, x, y)
        kinds = {n.split(".")[0].rstrip("0123456789") for n, _ in errors}
        assert {"expand", "conv", "bn", "out"} <= kinds
        assert max(e for _, e in errors) < 1e-4

    def test_zero_residual_zero_gradients(self):
        rng = np.random.default_rng(10)
        net = build_mlp(hidden=(16,), dropout=0.0)
        x = rng.normal(size=(5, 4))
        y = net.forward(x, True)
        loss_and_grad(net, x, y, True)
        assert all(np.all(g == 0.0) for _, g in net.gradients())


class TestAdam:
    def test_first_step_is_signed_lr(self):
        p = np.array([1.0, -2.0, 3.0])
        Adam([p], lr=0.1).step([np.array([0.5, -4.0, 1e-3])])
        # bias-corrected m / sqrt(v) = g / |g| on the first step (up to eps)
        assert np.allclose(p, [0.9, -1.9, 2.9], atol=1e-6)

    def test_quadratic_converges(self):
        p = np.array([5.0])
        opt = Adam([p], lr=0.1)
        for _ in range(2000):
            opt.step([2 * p])
        assert abs(p[0]) < 1e-3


def toy_data(seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(16, 4)), rng.normal(size=(16, 2))


class TestFit:
    def test_toy_overfit(self):
        x, y = toy_data()
        net = build_mlp(dropout=0.0)
        cfg = TrainConfig.mlp(max_epochs=2000, batch_size=16, patience=2000, plateau_patience=2000)
        report = fit(net, x, y, x, y, cfg)
        assert np.mean((net.forward(x) - y) ** 2) < 1e-5
        assert report.train_loss[199] < report.train_loss[0]

    def test_same_seed_same_report(self):
        x, y = toy_data(1)
        cfg = TrainConfig.mlp(max_epochs=30)
        a = fit(build_mlp(seed=3), x[:12], y[:12], x[12:], y[12:], cfg)
        b = fit(build_mlp(seed=3), x[:12], y[:12], x[12:], y[12:], cfg)
        assert a.to_csv() == b.to_csv()

    def test_restores_best_weights(self):
        x, y = toy_data(2)
        net = build_mlp(seed=4)
        report = fit(net, x[:10], y[:10], x[10:], y[10:], TrainConfig.mlp(max_epochs=300))
        restored = np.mean((net.forward(x[10:]) - y[10:]) ** 2)
        assert restored == pytest.approx(min(report.val_loss), rel=1e-12)
        assert all(restored <= v for v in report.val_loss[report.best_epoch - 1 :])
        assert report.stop_epoch <= 300
        assert report.stop_epoch - report.best_epoch <= 15

    def test_plateau_halves_lr(self):
        x, y = toy_data(3)
        report = fit(build_mlp(seed=5), x[:10], y[:10], x[10:], y[10:], TrainConfig.mlp(max_epochs=300))
        for epoch, lr in report.lr_events:
            if epoch < len(report.lr):
                assert report.lr[epoch] == lr
        lrs = sorted(set(report.lr), reverse=True)
        assert all(b == pytest.approx(max(a * 0.5, 1e-5)) for a, b in zip(lrs, lrs[1:]))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reports_position(self):
        x, y = toy_data(4)
        y = y.copy()
        y[3, 0] = np.inf
        with pytest.raises(DivergenceError) as exc:
            fit(build_mlp(), x, y, x, y, TrainConfig.mlp(max_epochs=5, batch_size=4))
        assert exc.value.epoch == 1 and exc.value.batch is not None

    def test_report_csv(self):
        x, y = toy_data(5)
        report = fit(build_mlp(), x[:10], y[:10], x[10:], y[10:], TrainConfig.mlp(max_epochs=3))
        lines = report.to_csv().splitlines()
        assert lines[0] == "epoch,train_loss,val_loss,lr"
        assert len(lines) == 4 and lines[1].startswith("1,")

    @pytest.mark.parametrize("kwargs", [{"lr": 0}, {"patience": 0}, {"plateau_patience": -1}])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


class Lookup:
    def __init__(self, table):
        self.table = table

    def predict_records(self, records):
        return np.array([self.table[(r.material, r.thickness, r.wavelength)] for r in records])


def recs_with(targets):
    return [SampleRecord("Au", 20.0, 400.0 + i, a, f) for i, (a, f) in enumerate(targets)]


class TestEvaluate:
    def test_lookup_is_exact(self):
        recs = recs_with([(0.1, 0.2), (0.3, 0.4)])
        model = Lookup({(r.material, r.thickness, r.wavelength): (r.absorbed_power, r.absorbed_flux) for r in recs})
        m = evaluate(model, recs)
        assert m["absorbed_power"]["MAE"] == 0.0 and m["absorbed_flux"]["MSE"] == 0.0

    def test_zero_model(self):
        recs = recs_with([(0.0, 0.0), (1.0, 1.0)])
        model = Lookup({(r.material, r.thickness, r.wavelength): (0.0, 0.0) for r in recs})
        assert evaluate(model, recs)["absorbed_power"]["MAE"] == 0.5

    @settings(max_examples=50, deadline=None)
    @given(st.permutations(range(6)))
    def test_permutation_invariant(self, perm):
        recs = recs_with([(i / 7, i / 9) for i in range(6)])
        model = Lookup({(r.material, r.thickness, r.wavelength): (0.5, 0.25) for r in recs})
        a = evaluate(model, recs)
        b = evaluate(model, [recs[i] for i in perm])
        assert a["absorbed_power"]["MAE"] == pytest.approx(b["absorbed_power"]["MAE"], rel=1e-15)

    def test_empty(self):
        with pytest.raises(EvaluationError):
            evaluate(Lookup({}), [])


def small_model(seed=0):
    rng = np.random.default_rng(seed)
    net = build_mlp(hidden=(8, 8), seed=seed)
    randomize(net, rng)
    for layer in net.layers:
        if isinstance(layer, BatchNorm):
            layer.state["mean"] = rng.normal(size=layer.n_features)
            layer.state["var"] = rng.uniform(0.5, 2.0, size=layer.n_features)
    return Surrogate(
        "mlp",
        net,
        ScalerParams((30.0, 900.0), (14.1, 350.0)),
        ScalerParams((0.4, 0.2), (0.2, 0.1)),
        info={"seed": seed},
    )


class TestSerialization:
    def test_round_trip_bit_identical(self, tmp_path):
        model = small_model()
        save_model(model, tmp_path / "m.bin")
        back = load_model(tmp_path / "m.bin")
        x = np.random.default_rng(1).normal(size=(100, 4))
        assert np.array_equal(model.predict_features(x), back.predict_features(x))
        assert back.x_scaler == model.x_scaler and back.one_hot_order == ("Au", "Ag")

    def test_cnn_round_trip(self, tmp_path):
        net = build_cnn(coarse=(2, 2), channels=(2, 2), seed=1)
        model = Surrogate("cnn", net, ScalerParams((30.0, 900.0), (14.0, 350.0)), ScalerParams((0.5,), (2.0,)))
        save_model(model, tmp_path / "c.bin")
        x = np.random.default_rng(2).normal(size=(5, 4))
        assert np.array_equal(load_model(tmp_path / "c.bin").predict_features(x), model.predict_features(x))

    @pytest.mark.parametrize("cut", [4, 30, -1])
    def test_truncated(self, tmp_path, cut):
        data = model_io.dumps(small_model())
        (tmp_path / "m.bin").write_bytes(data[:cut])
        with pytest.raises(FormatError):
            load_model(tmp_path / "m.bin")

    def test_corrupted_payload(self):
        data = bytearray(model_io.dumps(small_model()))
        data[-3] ^= 0xFF
        with pytest.raises(FormatError, match="hash"):
            model_io.loads(bytes(data))

    def test_version_mismatch(self):
        data = bytearray(model_io.dumps(small_model()))
        data[8] = model_io.VERSION + 1
        with pytest.raises(FormatError, match="version"):
            model_io.loads(bytes(data))

    def test_bad_magic(self):
        with pytest.raises(FormatError, match="magic"):
            model_io.loads(b"X" * 64)

    def test_raw_units_match_prescaled(self):
        model = small_model(2)
        t = np.array([10.0, 25.0, 50.0])
        w = np.array([400.0, 800.0, 1300.0])
        mats = ["Au", "Ag", "Au"]
        z, _ = standardize(np.column_stack([t, w]), model.x_scaler)
        x = np.hstack([z, [[1, 0], [0, 1], [1, 0]]])
        assert np.array_equal(model.predict(t, w, mats), model.predict_features(x))


class TestPipeline:
    def test_train_mlp_on_synthetic_records(self):
        rng = np.random.default_rng(0)
        recs = []
        for m in ("Au", "Ag"):
            for t in (10.0, 20.0, 30.0):
                for w in np.linspace(400, 1000, 10):
                    a = 0.3 + 0.2 * np.sin(w / 200) + (0.1 if m == "Au" else 0.0) + t / 300
                    recs.append(SampleRecord(m, t, float(w), a, a / 2))
        recs[3].absorbed_power = float("nan")
        model, report = train_mlp(recs, TrainConfig.mlp(max_epochs=40, seed=1))
        assert model.info["split_sizes"] == [38, 9, 12]
        assert set(report.test_metrics) == {"absorbed_power", "absorbed_flux"}
        assert all(np.isfinite(report.train_loss))
        assert report.stop_epoch <= 40
