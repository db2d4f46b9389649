"""Viewpoint prediction: windows, linear and conv models, evaluation."""

import math

import numpy as np
import pytest

from tile360 import cnn
from tile360.geometry import wrap_longitude
from tile360.predictor import (
    WINDOW_LEN,
    CnnPredictor,
    HeadTrace,
    LinearAngleModel,
    LinearPredictor,
    NaivePredictor,
    angle_decode,
    angle_encode,
    cnn_training_set,
    encode_series,
    evaluate,
    horizon_steps,
    lr_fit,
    lr_predict,
    naive_predict,
    read_trace_csv,
    split_traces,
    window_pairs,
    write_trace_csv,
)


def make_trace(pitch, yaw):
    pitch = np.asarray(pitch, dtype=float)
    yaw = np.asarray(yaw, dtype=float)
    n = pitch.size
    return HeadTrace(
        times=np.arange(n) / 10.0,
        pitch=pitch,
        yaw=yaw,
        roll=np.zeros(n),
    )


def rotation_windows(rng, count, delta, h):
    """Windows that rotate at a fixed rate; targets continue the rotation."""
    phis = rng.uniform(-180.0, 180.0, count)
    windows = np.array([phi + delta * np.arange(WINDOW_LEN) for phi in phis])
    targets = phis + delta * (WINDOW_LEN - 1 + h)
    return windows, targets


def test_trace_validation():
    with pytest.raises(ValueError):
        HeadTrace(
            times=np.array([0.0, 0.2]),  # 0.2 s apart, not 0.1
            pitch=np.zeros(2), yaw=np.zeros(2), roll=np.zeros(2),
        )
    with pytest.raises(ValueError):
        HeadTrace(
            times=np.array([0.0, 0.1]),
            pitch=np.zeros(3), yaw=np.zeros(2), roll=np.zeros(2),
        )
    with pytest.raises(ValueError):
        make_trace([95.0, 0.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        make_trace([0.0, 0.0], [181.0, 0.0])
    trace = make_trace(np.zeros(5), np.zeros(5))
    assert len(trace) == 5
    with pytest.raises(ValueError):
        trace.angle("roll")


def test_angle_encoding_round_trip():
    for angle in (-179.5, -90.0, -0.25, 0.0, 33.3, 179.9):
        assert angle_decode(angle_encode(angle)) == pytest.approx(angle, abs=1e-12)
    # Unnormalized pairs decode by direction only.
    assert angle_decode((2.0, 2.0)) == pytest.approx(45.0, abs=1e-12)
    with pytest.raises(ValueError):
        angle_decode((1e-12, -1e-12))
    series = encode_series([0.0, 90.0, 180.0])
    assert series.shape == (3, 2)
    assert series[1] == pytest.approx([1.0, 0.0], abs=1e-15)


def test_horizon_steps():
    assert horizon_steps(1.0) == 10
    assert horizon_steps(0.1) == 1
    assert horizon_steps(2.5) == 25
    for bad in (0.05, 0.0, -1.0):
        with pytest.raises(ValueError):
            horizon_steps(bad)


def test_window_pairs_alignment():
    series = np.arange(25.0)
    trace = make_trace(np.zeros(25), series - 12.0)
    windows, targets = window_pairs(trace, "yaw", 0.3)
    h = 3
    assert windows.shape == (25 - WINDOW_LEN - h + 1, WINDOW_LEN)
    for i in range(windows.shape[0]):
        assert np.array_equal(windows[i], series[i:i + WINDOW_LEN] - 12.0)
        assert targets[i] == series[i + WINDOW_LEN - 1 + h] - 12.0
    # Too short for the horizon: empty result, not an error.
    short = make_trace(np.zeros(12), np.zeros(12))
    w, t = window_pairs(short, "yaw", 1.0)
    assert w.shape == (0, WINDOW_LEN) and t.size == 0


def test_naive_predictor():
    assert naive_predict([1.0, 5.0, -3.0]) == -3.0
    assert NaivePredictor().predict(np.array([2.0, 7.0])) == 7.0
    with pytest.raises(ValueError):
        naive_predict([])


def test_linear_fit_recovers_rotation():
    # Constant-rate rotations are reproducible from the encoded window
    # by a fixed rotation of the last sample, which is inside the model
    # class.  The sin/cos features of such windows span only a rank-3
    # subspace, so the ridge fallback must kick in, and predictions
    # should still be near-exact.
    rng = np.random.default_rng(4)
    windows, targets = rotation_windows(rng, 60, delta=3.0, h=10)
    model = lr_fit(windows, targets, t_w=1.0)
    assert model.used_ridge
    assert model.coef.shape == (2 * WINDOW_LEN + 1, 2)
    for i in range(10):
        got = lr_predict(model, windows[i])
        assert abs(wrap_longitude(got - wrap_longitude(targets[i]))) < 1e-3


def test_linear_fit_full_rank():
    rng = np.random.default_rng(5)
    windows = rng.uniform(-180.0, 180.0, size=(80, WINDOW_LEN))
    targets = rng.uniform(-180.0, 180.0, size=80)
    model = lr_fit(windows, targets, t_w=1.0)
    assert not model.used_ridge
    assert np.isfinite(lr_predict(model, windows[0]))
    with pytest.raises(ValueError):
        lr_fit(windows[:19], targets[:19], t_w=1.0)


def test_pitch_clamp():
    # A model whose intercept alone points at 100 degrees.
    coef = np.zeros((2 * WINDOW_LEN + 1, 2))
    coef[-1] = angle_encode(100.0)
    model = LinearAngleModel(coef=coef, used_ridge=False, horizon=1.0)
    window = np.zeros(WINDOW_LEN)
    assert lr_predict(model, window) == pytest.approx(100.0, abs=1e-9)
    assert LinearPredictor(model, clamp_pitch=True).predict(window) == 90.0
    assert LinearPredictor(model).predict(window) == pytest.approx(100.0, abs=1e-9)


def test_cnn_training_set_encoding():
    yaw = np.linspace(-30.0, 30.0, 25)
    trace = make_trace(np.zeros(25), yaw)
    xs, ts = cnn_training_set([trace], "yaw", 0.5)
    h = 5
    assert xs.shape == (25 - WINDOW_LEN - h + 1, 2, WINDOW_LEN)
    assert ts.shape == (xs.shape[0], 2)
    assert np.allclose(xs[0], encode_series(yaw[:WINDOW_LEN]).T)
    assert ts[0] == pytest.approx(angle_encode(yaw[WINDOW_LEN - 1 + h]))
    empty_x, empty_t = cnn_training_set([], "yaw", 0.5)
    assert empty_x.shape == (0, 2, WINDOW_LEN)
    assert empty_t.shape == (0, 2)


def test_cnn_forward_shape_and_range():
    model = cnn.init_cnn(seed=1)
    x = np.random.default_rng(0).uniform(-1.0, 1.0, size=(7, 2, WINDOW_LEN))
    out = cnn.cnn_forward(model, x)
    assert out.shape == (7, 2)
    assert np.all(np.abs(out) < 1.0)
    with pytest.raises(ValueError):
        cnn.cnn_forward(model, x[:, :, :5])


def test_cnn_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    windows, targets = rotation_windows(rng, 4, delta=2.0, h=10)
    xs = np.stack([encode_series(w).T for w in windows])
    ts = np.array([angle_encode(t) for t in targets])
    model = cnn.init_cnn(seed=0)
    gap = cnn.gradient_check(model, (xs[0], ts[0]), num_params=200, seed=0)
    assert gap < 1e-4
    numeric = cnn.numeric_param_gradient(model, (xs[0], ts[0]), "bd", (0,))
    _, grads = cnn.mse_loss_and_gradients(model, xs[:1], ts[:1])
    assert numeric == pytest.approx(float(grads["bd"][0]), rel=1e-5, abs=1e-10)


def test_cnn_training_reduces_loss():
    rng = np.random.default_rng(2)
    windows, targets = rotation_windows(rng, 64, delta=3.0, h=1)
    xs = np.stack([encode_series(w).T for w in windows])
    ts = np.array([angle_encode(t) for t in targets])
    config = cnn.TrainConfig(epochs=30, decay_epochs=15, rng_seed=0)
    model, losses = cnn.cnn_train((xs, ts), config)
    assert len(losses) == 30
    assert losses[-1] < 0.1 * losses[0]
    # Same seed, same result.
    again, losses2 = cnn.cnn_train((xs, ts), config)
    assert losses == losses2
    assert all(np.array_equal(a, b) for a, b in
               zip(model.params().values(), again.params().values()))
    with pytest.raises(ValueError):
        cnn.cnn_train((xs[:0], ts[:0]), config)
    with pytest.raises(ValueError):
        cnn.cnn_train((xs, ts[:5]), config)


def test_train_config():
    config = cnn.TrainConfig(lr_start=1e-3, lr_end=1e-4, decay_epochs=5)
    assert config.learning_rate(0) == pytest.approx(1e-3)
    assert config.learning_rate(4) == pytest.approx(1e-4)
    assert config.learning_rate(100) == 1e-4
    with pytest.raises(ValueError):
        cnn.TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        cnn.TrainConfig(lr_start=-1.0)


def test_checkpoint_round_trip(tmp_path):
    model = cnn.init_cnn(seed=3)
    path = tmp_path / "model.npz"
    cnn.save_model(model, path, angle="yaw", horizon=1.0)
    loaded, meta = cnn.load_model(path)
    assert meta == {"angle": "yaw", "horizon": 1.0}
    x = np.random.default_rng(1).uniform(-1.0, 1.0, size=(3, 2, WINDOW_LEN))
    assert np.array_equal(cnn.cnn_forward(model, x), cnn.cnn_forward(loaded, x))
    # A future format version must be refused, not misread.
    with np.load(path) as data:
        blob = {name: data[name] for name in data.files}
    blob["format_version"] = 2
    np.savez(path, **blob)
    with pytest.raises(ValueError):
        cnn.load_model(path)


def test_evaluate_wraps_yaw_errors():
    # A yaw series marching across the antimeridian: naive errors are
    # one step of 1.5 degrees, never a 358.5-degree wrap artifact.
    steps = np.arange(40) * 1.5 + 170.0
    yaw = np.array([wrap_longitude(v) for v in steps])
    trace = make_trace(np.zeros(40), yaw)
    naive = {"pitch": NaivePredictor(), "yaw": NaivePredictor()}
    results = evaluate(naive, [trace], t_w=0.1)
    assert results["yaw"].metrics.mean_abs_error == pytest.approx(1.5, abs=1e-9)
    assert results["yaw"].metrics.rmse == pytest.approx(1.5, abs=1e-9)
    assert results["pitch"].metrics.rmse == 0.0
    # Mean absolute error never exceeds the RMSE.
    assert (results["yaw"].metrics.mean_abs_error
            <= results["yaw"].metrics.rmse + 1e-12)
    with pytest.raises(ValueError):
        evaluate(naive, [make_trace(np.zeros(5), np.zeros(5))], t_w=1.0)


def test_cnn_predictor_beats_naive_on_rotation():
    # Steady rotation is the easiest motion with structure: repeating
    # the last sample lags by the full look-ahead, while a trained
    # model tracks it.
    rng = np.random.default_rng(6)
    windows, targets = rotation_windows(rng, 128, delta=2.0, h=10)
    xs = np.stack([encode_series(w).T for w in windows])
    ts = np.array([angle_encode(t) for t in targets])
    config = cnn.TrainConfig(epochs=80, decay_epochs=40, rng_seed=0)
    model, _ = cnn.cnn_train((xs, ts), config)
    predictor = CnnPredictor(model)
    cnn_errs = [
        abs(wrap_longitude(wrap_longitude(t) - predictor.predict(w)))
        for w, t in zip(windows[:20], targets[:20])
    ]
    naive_errs = [
        abs(wrap_longitude(wrap_longitude(t) - w[-1]))
        for w, t in zip(windows[:20], targets[:20])
    ]
    assert np.mean(cnn_errs) < 0.5 * np.mean(naive_errs)


def test_split_traces():
    traces = [make_trace(np.zeros(12), np.full(12, float(i))) for i in range(10)]
    train, test = split_traces(traces, train_fraction=0.8, seed=0)
    assert len(train) == 8 and len(test) == 2
    ids = lambda group: {t.yaw[0] for t in group}
    assert ids(train) | ids(test) == set(map(float, range(10)))
    assert not ids(train) & ids(test)
    train2, test2 = split_traces(traces, train_fraction=0.8, seed=0)
    assert ids(train) == ids(train2) and ids(test) == ids(test2)


def test_trace_csv_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    trace = make_trace(
        rng.uniform(-60.0, 60.0, 15), rng.uniform(-170.0, 170.0, 15)
    )
    path = tmp_path / "trace.csv"
    write_trace_csv(trace, path)
    back = read_trace_csv(path)
    assert np.allclose(back.times, trace.times, atol=1e-8)
    assert np.allclose(back.pitch, trace.pitch, atol=1e-8)
    assert np.allclose(back.yaw, trace.yaw, atol=1e-8)
    bad = tmp_path / "bad.csv"
    bad.write_text("time,p,y,r\n0,0,0,0\n")
    with pytest.raises(ValueError):
        read_trace_csv(bad)
    empty = tmp_path / "empty.csv"
    empty.write_text("t,pitch,yaw,roll\n")
    with pytest.raises(ValueError):
        read_trace_csv(empty)
