"""Viewpoint prediction from 10-sample head-orientation windows.

Angles are encoded as (sin, cos) pairs before prediction so the
antimeridian discontinuity disappears (a 359 degree raw gap is a
1 degree encoded gap), and decoded with the quadrant-aware
arctangent.  Three predictors share one interface: naive (repeat the
latest angle), linear regression on the encoded window, and the CNN
from cnn.py.  Pitch and yaw are predicted by separate models.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import cnn
from .error_model import ErrorSamples
from .geometry import wrap_longitude

SAMPLE_RATE_HZ = 10.0
WINDOW_LEN = 10

TRACE_HEADER = ["t", "pitch", "yaw", "roll"]


@dataclass(frozen=True)
class HeadTrace:
    """Head-orientation samples at a fixed 10 Hz."""

    times: np.ndarray = field(repr=False)
    pitch: np.ndarray = field(repr=False)
    yaw: np.ndarray = field(repr=False)
    roll: np.ndarray = field(repr=False)

    def __post_init__(self):
        arrays = {}
        for name in ("times", "pitch", "yaw", "roll"):
            arrays[name] = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arrays[name])
        n = arrays["times"].size
        if any(a.size != n for a in arrays.values()):
            raise ValueError("trace columns disagree in length")
        if n >= 2:
            spacing = np.diff(arrays["times"])
            if np.any(np.abs(spacing - 1.0 / SAMPLE_RATE_HZ) > 1e-6):
                raise ValueError("trace samples must be 0.1 s apart")
        if np.any(np.abs(arrays["pitch"]) > 90.0):
            raise ValueError("pitch outside [-90, 90]")
        if np.any(np.abs(arrays["yaw"]) > 180.0):
            raise ValueError("yaw outside [-180, 180]")

    def __len__(self):
        return self.times.size

    def angle(self, name):
        if name not in ("pitch", "yaw"):
            raise ValueError(f"unknown angle {name!r}")
        return getattr(self, name)


def angle_encode(angle):
    """Angle in degrees -> (sin, cos) pair."""
    r = math.radians(angle)
    return math.sin(r), math.cos(r)


def angle_decode(pair):
    """(sin, cos) pair -> degrees in [-180, 180], quadrant-aware.

    The pair need not be normalized, but a near-zero pair carries no
    angle information and is rejected.
    """
    s, c = pair
    if abs(s) < 1e-9 and abs(c) < 1e-9:
        raise ValueError("cannot decode a near-zero (sin, cos) pair")
    return math.degrees(math.atan2(s, c))


def encode_series(angles):
    """(n,) degrees -> (n, 2) of (sin, cos) rows."""
    r = np.radians(np.asarray(angles, dtype=float))
    return np.column_stack([np.sin(r), np.cos(r)])


def horizon_steps(t_w):
    """Prediction horizon in samples; t_w must be a multiple of 0.1 s."""
    steps = t_w * SAMPLE_RATE_HZ
    if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
        raise ValueError(f"horizon {t_w} s is not a positive multiple of 0.1 s")
    return int(round(steps))


def window_pairs(trace, angle, t_w):
    """All (window, target) pairs of one angle at the given horizon.

    Returns (windows (n, 10) degrees, targets (n,) degrees).
    """
    h = horizon_steps(t_w)
    series = trace.angle(angle)
    n = series.size - WINDOW_LEN - h + 1
    if n <= 0:
        return np.empty((0, WINDOW_LEN)), np.empty(0)
    idx = np.arange(n)[:, None] + np.arange(WINDOW_LEN)[None, :]
    return series[idx], series[idx[:, -1] + h]


class NaivePredictor:
    """Repeats the latest observed angle; horizon-independent."""

    def predict(self, window):
        return float(np.asarray(window)[-1])


def naive_predict(history, t_w=None):
    """Latest observed angle; the horizon does not enter."""
    history = np.asarray(history, dtype=float)
    if history.size == 0:
        raise ValueError("empty history")
    return float(history[-1])


@dataclass(frozen=True)
class LinearAngleModel:
    """OLS (or ridge-fallback) map from encoded window to encoded target."""

    coef: np.ndarray = field(repr=False)  # (21, 2): 20 features + intercept
    used_ridge: bool
    horizon: float


def _design_matrix(windows):
    n = windows.shape[0]
    feats = np.empty((n, 2 * WINDOW_LEN))
    r = np.radians(windows)
    feats[:, 0::2] = np.sin(r)
    feats[:, 1::2] = np.cos(r)
    return np.column_stack([feats, np.ones(n)])


def lr_fit(windows, targets, t_w):
    """Least squares on the encoded window predicting the encoded target.

    Rank-deficient designs fall back to ridge with penalty 1e-6 on the
    weights (not the intercept); the fallback is flagged on the model.
    """
    windows = np.asarray(windows, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if windows.shape[0] < 20:
        raise ValueError("lr_fit needs at least 20 training pairs")
    a = _design_matrix(windows)
    y = encode_series(targets)
    coef, _, rank, _ = np.linalg.lstsq(a, y, rcond=None)
    used_ridge = rank < a.shape[1]
    if used_ridge:
        penalty = 1e-6 * np.eye(a.shape[1])
        penalty[-1, -1] = 0.0
        coef = np.linalg.solve(a.T @ a + penalty, a.T @ y)
    return LinearAngleModel(coef=coef, used_ridge=used_ridge, horizon=t_w)


def lr_predict(model, window):
    """Predicted angle in degrees for one 10-sample window."""
    window = np.asarray(window, dtype=float).reshape(1, WINDOW_LEN)
    pair = _design_matrix(window)[0] @ model.coef
    return angle_decode(pair)


class LinearPredictor:
    def __init__(self, model, clamp_pitch=False):
        self.model = model
        self.clamp_pitch = clamp_pitch

    def predict(self, window):
        angle = lr_predict(self.model, window)
        if self.clamp_pitch:
            angle = min(max(angle, -90.0), 90.0)
        return angle


class CnnPredictor:
    def __init__(self, model, clamp_pitch=False):
        self.model = model
        self.clamp_pitch = clamp_pitch

    def predict(self, window):
        x = encode_series(window).T.reshape(1, 2, WINDOW_LEN)
        pair = cnn.cnn_forward(self.model, x)[0]
        angle = angle_decode(pair)
        if self.clamp_pitch:
            angle = min(max(angle, -90.0), 90.0)
        return angle


def cnn_training_set(traces, angle, t_w):
    """Encoded (inputs, targets) for cnn_train from whole traces."""
    xs, ts = [], []
    for trace in traces:
        windows, targets = window_pairs(trace, angle, t_w)
        for w, t in zip(windows, targets):
            xs.append(encode_series(w).T)
            ts.append(angle_encode(t))
    if not xs:
        return np.empty((0, 2, WINDOW_LEN)), np.empty((0, 2))
    return np.stack(xs), np.array(ts)


@dataclass(frozen=True)
class PredictionMetrics:
    """Aggregate absolute-error statistics in degrees."""

    mean_abs_error: float
    rmse: float
    p999: float


@dataclass(frozen=True)
class AngleEvaluation:
    metrics: PredictionMetrics
    errors: ErrorSamples


def _metrics_from_errors(errors):
    abs_err = np.abs(errors)
    return PredictionMetrics(
        mean_abs_error=float(abs_err.mean()),
        rmse=float(np.sqrt(np.mean(errors**2))),
        p999=float(np.percentile(abs_err, 99.9)),
    )


def evaluate(predictors, traces, t_w):
    """Per-angle metrics and signed errors over all valid pairs.

    predictors maps 'pitch' and 'yaw' to objects with .predict(window).
    Errors are actual minus predicted; yaw errors are wrapped to
    [-180, 180] before aggregation.
    """
    results = {}
    for angle in ("pitch", "yaw"):
        errors = []
        for trace in traces:
            windows, targets = window_pairs(trace, angle, t_w)
            for w, target in zip(windows, targets):
                predicted = predictors[angle].predict(w)
                err = target - predicted
                if angle == "yaw":
                    err = wrap_longitude(err)
                errors.append(err)
        if not errors:
            raise ValueError("no valid (window, target) pairs for the horizon")
        errors = np.array(errors)
        results[angle] = AngleEvaluation(
            metrics=_metrics_from_errors(errors), errors=ErrorSamples(errors)
        )
    return results


def split_traces(traces, train_fraction=0.8, seed=0):
    """Split whole traces (not windows) into train/test deterministically."""
    order = np.random.default_rng(seed).permutation(len(traces))
    n_train = int(round(train_fraction * len(traces)))
    train = [traces[i] for i in order[:n_train]]
    test = [traces[i] for i in order[n_train:]]
    return train, test


def read_trace_csv(path):
    """Head-trace CSV with header t,pitch,yaw,roll; degrees at 0.1 s."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != TRACE_HEADER:
            raise ValueError(f"trace CSV must start with header {','.join(TRACE_HEADER)}")
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        raise ValueError("trace CSV has no samples")
    data = np.array(rows)
    return HeadTrace(times=data[:, 0], pitch=data[:, 1], yaw=data[:, 2], roll=data[:, 3])


def write_trace_csv(trace, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for row in zip(trace.times, trace.pitch, trace.yaw, trace.roll):
            writer.writerow([format(v, ".10g") for v in row])
