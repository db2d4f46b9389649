"""End-to-end streaming-session simulator.

Runs the full pipeline per segment: predict each user's viewpoint one
horizon ahead, map the predicted viewport to tiles, classify visibility,
allocate tile rates across users, then score both the expected quality
and the quality realized over the viewport the user actually looked at.
"""

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from . import cnn
from .allocator import (
    AllocationProblem,
    InfeasibleProblemError,
    RateVector,
    UserSession,
    objective,
    solve,
)
from .error_model import LaplaceParams, fit_laplace, sample_laplace
from .geometry import Fov, TileGrid, ViewAngles, viewport_bounds, viewport_tile_region
from .predictor import (
    SAMPLE_RATE_HZ,
    WINDOW_LEN,
    CnnPredictor,
    HeadTrace,
    LinearPredictor,
    NaivePredictor,
    cnn_training_set,
    horizon_steps,
    lr_fit,
    window_pairs,
)
from .ratedist import (
    DEFAULT_LADDER,
    RateLadder,
    RdParams,
    distortion,
    spherical_mse_to_wspsnr,
    tile_weight_map,
)
from .visibility import classify_tiles

PREDICTOR_CHOICES = ("naive", "linear", "cnn")
ALGORITHM_CHOICES = ("proposed", "baseline", "greedy")

SEGMENT_CSV_HEADER = [
    "segment", "user", "t_predict_s", "t_true_s",
    "predicted_pitch_deg", "predicted_yaw_deg", "true_pitch_deg", "true_yaw_deg",
    "n_viewport", "n_marginal", "viewport_index", "marginal_histogram",
    "expected_q", "expected_mse", "expected_wspsnr_db",
    "realized_mse", "realized_wspsnr_db", "instability", "hit",
]

SWEEP_CSV_HEADER = [
    "algorithm", "omega", "server_capacity_kbps",
    "mean_expected_wspsnr_db", "mean_realized_wspsnr_db",
    "mean_instability", "mean_expected_q", "hit_rate",
]


@dataclass(frozen=True)
class SessionConfig:
    """Everything a session needs besides the head traces.

    user_capacities fixes per-user link rates in kbps; when omitted they
    are drawn uniformly from capacity_range with the session seed.  The
    Laplace error scales are fitted from the chosen predictor's own
    errors on the traces when not supplied.
    """

    omega: float
    server_capacity: float
    grid: TileGrid = TileGrid(8, 8)
    fov: Fov = Fov(horizontal=110.0, vertical=90.0)
    ladder: RateLadder = DEFAULT_LADDER
    horizon: float = 1.0
    threshold: float = 0.05
    user_capacities: tuple = None
    capacity_range: tuple = (1300.0, 1700.0)
    segment_duration: float = 1.0
    predictor: str = "naive"
    algorithm: str = "proposed"
    lat_error: LaplaceParams = None
    lon_error: LaplaceParams = None
    rd: RdParams = RdParams(sigma=3500.0, r0=0.5, d0=0.2)
    seed: int = 0

    def __post_init__(self):
        if self.predictor not in PREDICTOR_CHOICES:
            raise ValueError(f"predictor must be one of {PREDICTOR_CHOICES}")
        if self.algorithm not in ALGORITHM_CHOICES:
            raise ValueError(f"algorithm must be one of {ALGORITHM_CHOICES}")
        for name in ("omega",):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("server_capacity", "horizon", "threshold", "segment_duration"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if self.user_capacities is not None:
            caps = tuple(float(c) for c in self.user_capacities)
            if any(c <= 0.0 for c in caps):
                raise ValueError("user capacities must be positive")
            object.__setattr__(self, "user_capacities", caps)
        lo, hi = self.capacity_range
        if not 0.0 < lo <= hi:
            raise ValueError("capacity_range must be a positive (low, high) pair")


@dataclass(frozen=True)
class SegmentRecord:
    """One user's slice of one segment, scored against the true viewport."""

    segment: int
    user: int
    t_predict: float
    t_true: float
    predicted_pitch: float
    predicted_yaw: float
    true_pitch: float
    true_yaw: float
    n_viewport: int
    n_marginal: int
    viewport_index: int
    marginal_histogram: tuple
    expected_q: float
    expected_mse: float
    expected_wspsnr: float
    realized_mse: float
    realized_wspsnr: float
    instability: float
    hit: bool


@dataclass(frozen=True)
class SessionReport:
    n_users: int
    n_segments: int
    mean_expected_q: float
    mean_expected_wspsnr: float
    mean_realized_wspsnr: float
    mean_instability: float
    hit_rate: float


@dataclass(frozen=True)
class TraceSpec:
    """Sum-of-sinusoids head-motion generator parameters.

    Each uniform (low, high) pair is drawn once per user per component.
    Amplitude and frequency ranges default to a regime where the naive
    predictor's yaw RMSE at a 1 s horizon falls in the tens of degrees.
    """

    n_users: int = 10
    duration: float = 60.0
    yaw_components: int = 3
    yaw_amplitude: tuple = (20.0, 60.0)
    yaw_frequency: tuple = (0.02, 0.15)
    pitch_offset: tuple = (-10.0, 10.0)
    pitch_amplitude: tuple = (5.0, 15.0)
    pitch_frequency: tuple = (0.02, 0.15)
    yaw_jitter: float = 2.0
    pitch_jitter: float = 1.0

    def __post_init__(self):
        if self.n_users < 1:
            raise ValueError("n_users must be at least 1")
        if not self.duration > 0.0:
            raise ValueError("duration must be positive")
        if self.yaw_components < 1:
            raise ValueError("yaw_components must be at least 1")
        if self.yaw_jitter < 0.0 or self.pitch_jitter < 0.0:
            raise ValueError("jitter scales must be non-negative")


def _wrap_degrees(angles):
    return (np.asarray(angles, dtype=float) + 180.0) % 360.0 - 180.0


def synth_traces(spec, seed):
    """Seeded per-user head traces at the fixed 10 Hz sample rate."""
    rng = np.random.default_rng(seed)
    n = int(round(spec.duration * SAMPLE_RATE_HZ)) + 1
    t = np.arange(n) / SAMPLE_RATE_HZ
    traces = []
    for _ in range(spec.n_users):
        yaw = np.full(n, rng.uniform(-180.0, 180.0))
        for _ in range(spec.yaw_components):
            amp = rng.uniform(*spec.yaw_amplitude)
            freq = rng.uniform(*spec.yaw_frequency)
            phase = rng.uniform(0.0, 2.0 * math.pi)
            yaw = yaw + amp * np.sin(2.0 * math.pi * freq * t + phase)
        if spec.yaw_jitter > 0.0:
            yaw = yaw + sample_laplace(LaplaceParams(scale=spec.yaw_jitter), n, rng)
        pitch = np.full(n, rng.uniform(*spec.pitch_offset))
        amp = rng.uniform(*spec.pitch_amplitude)
        freq = rng.uniform(*spec.pitch_frequency)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        pitch = pitch + amp * np.sin(2.0 * math.pi * freq * t + phase)
        if spec.pitch_jitter > 0.0:
            pitch = pitch + sample_laplace(LaplaceParams(scale=spec.pitch_jitter), n, rng)
        traces.append(HeadTrace(
            times=t,
            pitch=np.clip(pitch, -90.0, 90.0),
            yaw=_wrap_degrees(yaw),
            roll=np.zeros(n),
        ))
    return traces


def _train_predictors(config, traces):
    """Predictor pair for pitch and yaw, self-trained on the session traces."""
    if config.predictor == "naive":
        return {"pitch": NaivePredictor(), "yaw": NaivePredictor()}
    if config.predictor == "linear":
        out = {}
        for angle in ("pitch", "yaw"):
            windows, targets = [], []
            for trace in traces:
                w, tg = window_pairs(trace, angle, config.horizon)
                windows.append(w)
                targets.append(tg)
            model = lr_fit(np.vstack(windows), np.concatenate(targets), config.horizon)
            out[angle] = LinearPredictor(model, clamp_pitch=(angle == "pitch"))
        return out
    out = {}
    train_cfg = cnn.TrainConfig(epochs=60, decay_epochs=30, rng_seed=config.seed)
    for angle in ("pitch", "yaw"):
        dataset = cnn_training_set(traces, angle, config.horizon)
        model, _ = cnn.cnn_train(dataset, train_cfg)
        out[angle] = CnnPredictor(model, clamp_pitch=(angle == "pitch"))
    return out


def _fit_error_params(config, predictors, traces):
    """Laplace scales of the chosen predictor's own errors on the traces."""
    lat, lon = config.lat_error, config.lon_error
    if lat is not None and lon is not None:
        return lat, lon
    from .predictor import evaluate

    results = evaluate(predictors, traces, config.horizon)
    if lat is None:
        lat = fit_laplace(results["pitch"].errors)
    if lon is None:
        lon = fit_laplace(results["yaw"].errors)
    return lat, lon


def _segment_epochs(config, traces):
    """Sample indices (predict-at, score-at) for each segment.

    The first segment is scored at the earliest instant with a full
    observation window one horizon earlier; later segments advance by
    the segment duration.
    """
    h = horizon_steps(config.horizon)
    step = config.segment_duration * SAMPLE_RATE_HZ
    if abs(step - round(step)) > 1e-9 or round(step) < 1:
        raise ValueError("segment duration is not a positive multiple of 0.1 s")
    step = int(round(step))
    n = min(len(trace) for trace in traces)
    first = WINDOW_LEN - 1 + h
    if first >= n:
        raise ValueError(
            f"trace too short: {n} samples cannot fit one window plus the horizon")
    return [(i - h, i) for i in range(first, n, step)]


def draw_capacities(config, n_users):
    """Per-user link capacities in kbps: fixed list or seeded uniform draw."""
    if config.user_capacities is not None:
        if len(config.user_capacities) != n_users:
            raise ValueError("one capacity per trace is required")
        return config.user_capacities
    rng = np.random.default_rng(config.seed)
    lo, hi = config.capacity_range
    return tuple(float(c) for c in rng.uniform(lo, hi, n_users))


def _prepare(config, traces):
    """Everything capacity-independent: predictions, classifications, users."""
    if not traces:
        raise ValueError("at least one trace is required")
    predictors = _train_predictors(config, traces)
    lat_err, lon_err = _fit_error_params(config, predictors, traces)
    epochs = _segment_epochs(config, traces)
    weights = tile_weight_map(config.grid)
    caps = draw_capacities(config, len(traces))

    segments = []
    for seg, (i_pred, i_true) in enumerate(epochs):
        entries = []
        for k, trace in enumerate(traces):
            pred_pitch = predictors["pitch"].predict(
                trace.pitch[i_pred - WINDOW_LEN + 1: i_pred + 1])
            pred_yaw = predictors["yaw"].predict(
                trace.yaw[i_pred - WINDOW_LEN + 1: i_pred + 1])
            pred_pitch = min(max(pred_pitch, -90.0), 90.0)
            bounds = viewport_bounds(
                ViewAngles(pitch=pred_pitch, yaw=pred_yaw), config.fov)
            cls = classify_tiles(config.grid, bounds, lat_err, lon_err, config.threshold)
            user = UserSession(user_id=k, classification=cls, capacity=caps[k],
                               rd=config.rd, weights=weights)
            true_pitch = float(trace.pitch[i_true])
            true_yaw = float(trace.yaw[i_true])
            true_bounds = viewport_bounds(
                ViewAngles(pitch=true_pitch, yaw=true_yaw), config.fov)
            true_region = viewport_tile_region(true_bounds, config.grid).members
            entries.append({
                "user": user,
                "predicted": (pred_pitch, pred_yaw),
                "true": (true_pitch, true_yaw),
                "true_region": true_region,
            })
        segments.append({
            "t_predict": float(traces[0].times[i_pred]),
            "t_true": float(traces[0].times[i_true]),
            "entries": entries,
        })
    return {"segments": segments, "weights": weights, "lat": lat_err, "lon": lon_err}


def _realized_mse(user, arr, true_region, ladder, weights):
    """Area-weighted distortion over the tiles the user actually watched."""
    num = 0.0
    den = 0.0
    for m, n in true_region:
        area = weights.area(m, n)
        rate = ladder.rate(int(arr[m - 1, n - 1]))
        num += area * distortion(user.rd_for(m, n), rate)
        den += area
    return num / den


def _score_segment(config, prepared, seg_pos, algorithm, server_capacity):
    seg = prepared["segments"][seg_pos]
    users = tuple(entry["user"] for entry in seg["entries"])
    problem = AllocationProblem(
        users=users, server_capacity=server_capacity,
        ladder=config.ladder, omega=config.omega)
    try:
        result = solve(problem, algorithm)
    except InfeasibleProblemError as exc:
        raise InfeasibleProblemError(f"segment {seg_pos}: {exc}") from exc

    records = []
    for k, entry in enumerate(seg["entries"]):
        user = entry["user"]
        arr = result.rates.indices[k]
        cls = user.classification
        single = AllocationProblem(
            users=(user,), server_capacity=config.server_capacity + 1e9,
            ladder=config.ladder, omega=config.omega)
        expected_q = float(objective(single, RateVector((arr,))))
        mg_counts = {}
        for m, n in sorted(cls.marginal_tiles):
            idx = int(arr[m - 1, n - 1])
            mg_counts[idx] = mg_counts.get(idx, 0) + 1
        vp = sorted(cls.viewport_tiles.members)
        realized = _realized_mse(user, arr, entry["true_region"],
                                 config.ladder, prepared["weights"])
        visible = cls.viewport_tiles.members | cls.marginal_tiles
        records.append(SegmentRecord(
            segment=seg_pos,
            user=user.user_id,
            t_predict=seg["t_predict"],
            t_true=seg["t_true"],
            predicted_pitch=entry["predicted"][0],
            predicted_yaw=entry["predicted"][1],
            true_pitch=entry["true"][0],
            true_yaw=entry["true"][1],
            n_viewport=len(vp),
            n_marginal=len(cls.marginal_tiles),
            viewport_index=int(arr[vp[0][0] - 1, vp[0][1] - 1]),
            marginal_histogram=tuple(sorted(mg_counts.items())),
            expected_q=expected_q,
            expected_mse=result.per_user_mse[k],
            expected_wspsnr=result.per_user_wspsnr[k],
            realized_mse=realized,
            realized_wspsnr=spherical_mse_to_wspsnr(realized),
            instability=result.per_user_instability[k],
            hit=entry["true_region"] <= visible,
        ))
    return records, result


def run_session(config, traces):
    """Simulate one multi-user session; returns (records, report).

    Records are ordered by (segment, user).  The report's expected Q is
    the mean of the per-segment allocator objectives.
    """
    prepared = _prepare(config, traces)
    records = []
    objectives = []
    for seg_pos in range(len(prepared["segments"])):
        recs, result = _score_segment(
            config, prepared, seg_pos, config.algorithm, config.server_capacity)
        records.extend(recs)
        objectives.append(result.objective)
    report = SessionReport(
        n_users=len(traces),
        n_segments=len(objectives),
        mean_expected_q=float(np.mean(objectives)),
        mean_expected_wspsnr=float(np.mean([r.expected_wspsnr for r in records])),
        mean_realized_wspsnr=float(np.mean([r.realized_wspsnr for r in records])),
        mean_instability=float(np.mean([r.instability for r in records])),
        hit_rate=float(np.mean([1.0 if r.hit else 0.0 for r in records])),
    )
    return records, report


def capacity_sweep(config, traces, capacities, algorithms=ALGORITHM_CHOICES):
    """One summary row per (algorithm, server capacity), canonically ordered.

    Predictions and classifications are shared across all sweep points;
    only the allocation step reruns.
    """
    if not capacities:
        raise ValueError("at least one capacity point is required")
    prepared = _prepare(config, traces)
    for algorithm in algorithms:
        if algorithm not in ALGORITHM_CHOICES:
            raise ValueError(f"algorithm must be one of {ALGORITHM_CHOICES}")
    rows = []
    for algorithm in sorted(set(algorithms)):
        for cap in sorted(float(c) for c in capacities):
            records = []
            objectives = []
            for seg_pos in range(len(prepared["segments"])):
                recs, result = _score_segment(config, prepared, seg_pos, algorithm, cap)
                records.extend(recs)
                objectives.append(result.objective)
            rows.append({
                "algorithm": algorithm,
                "omega": config.omega,
                "server_capacity_kbps": cap,
                "mean_expected_wspsnr_db": float(
                    np.mean([r.expected_wspsnr for r in records])),
                "mean_realized_wspsnr_db": float(
                    np.mean([r.realized_wspsnr for r in records])),
                "mean_instability": float(np.mean([r.instability for r in records])),
                "mean_expected_q": float(np.mean(objectives)),
                "hit_rate": float(np.mean([1.0 if r.hit else 0.0 for r in records])),
            })
    return rows


def _fmt(value):
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def records_to_csv(records):
    """Segment records as CSV text, one row per (segment, user)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SEGMENT_CSV_HEADER)
    for r in sorted(records, key=lambda r: (r.segment, r.user)):
        hist = ";".join(f"{idx}:{count}" for idx, count in r.marginal_histogram)
        writer.writerow([
            r.segment, r.user, _fmt(r.t_predict), _fmt(r.t_true),
            _fmt(r.predicted_pitch), _fmt(r.predicted_yaw),
            _fmt(r.true_pitch), _fmt(r.true_yaw),
            r.n_viewport, r.n_marginal, r.viewport_index, hist,
            _fmt(r.expected_q), _fmt(r.expected_mse), _fmt(r.expected_wspsnr),
            _fmt(r.realized_mse), _fmt(r.realized_wspsnr),
            _fmt(r.instability), _fmt(r.hit),
        ])
    return buf.getvalue()


def sweep_to_csv(rows):
    """Sweep summary as CSV text, one row per (algorithm, capacity)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_CSV_HEADER)
    ordered = sorted(rows, key=lambda r: (r["algorithm"], r["omega"],
                                          r["server_capacity_kbps"]))
    for row in ordered:
        writer.writerow([_fmt(row[name]) for name in SWEEP_CSV_HEADER])
    return buf.getvalue()


def report_to_json(report):
    """JSON-ready dict form of a session report."""
    return {
        "n_users": report.n_users,
        "n_segments": report.n_segments,
        "mean_expected_q": report.mean_expected_q,
        "mean_expected_wspsnr_db": report.mean_expected_wspsnr,
        "mean_realized_wspsnr_db": report.mean_realized_wspsnr,
        "mean_instability": report.mean_instability,
        "hit_rate": report.hit_rate,
    }


def session_config_from_json(obj):
    """SessionConfig from its JSON dict form; absent keys keep defaults."""
    kwargs = {
        "omega": float(obj["omega"]),
        "server_capacity": float(obj["server_capacity_kbps"]),
    }
    if "grid" in obj:
        kwargs["grid"] = TileGrid(rows=int(obj["grid"]["rows"]),
                                  cols=int(obj["grid"]["cols"]))
    if "fov" in obj:
        kwargs["fov"] = Fov(horizontal=float(obj["fov"]["horizontal"]),
                            vertical=float(obj["fov"]["vertical"]))
    if "ladder_kbps" in obj:
        kwargs["ladder"] = RateLadder(tuple(float(r) for r in obj["ladder_kbps"]))
    if "horizon_s" in obj:
        kwargs["horizon"] = float(obj["horizon_s"])
    if "threshold" in obj:
        kwargs["threshold"] = float(obj["threshold"])
    if "user_capacities_kbps" in obj:
        kwargs["user_capacities"] = tuple(float(c) for c in obj["user_capacities_kbps"])
    if "capacity_range_kbps" in obj:
        lo, hi = obj["capacity_range_kbps"]
        kwargs["capacity_range"] = (float(lo), float(hi))
    if "segment_duration_s" in obj:
        kwargs["segment_duration"] = float(obj["segment_duration_s"])
    if "predictor" in obj:
        kwargs["predictor"] = str(obj["predictor"])
    if "algorithm" in obj:
        kwargs["algorithm"] = str(obj["algorithm"])
    if "lat_error_scale" in obj:
        kwargs["lat_error"] = LaplaceParams(scale=float(obj["lat_error_scale"]))
    if "lon_error_scale" in obj:
        kwargs["lon_error"] = LaplaceParams(scale=float(obj["lon_error_scale"]))
    if "rd" in obj:
        kwargs["rd"] = RdParams(sigma=float(obj["rd"]["sigma"]),
                                r0=float(obj["rd"]["r0"]), d0=float(obj["rd"]["d0"]))
    if "seed" in obj:
        kwargs["seed"] = int(obj["seed"])
    return SessionConfig(**kwargs)


def trace_spec_from_json(obj):
    """TraceSpec from its JSON dict form; absent keys keep defaults."""
    kwargs = {}
    for name in ("n_users", "yaw_components"):
        if name in obj:
            kwargs[name] = int(obj[name])
    for name in ("duration", "yaw_jitter", "pitch_jitter"):
        if name in obj:
            kwargs[name] = float(obj[name])
    for name in ("yaw_amplitude", "yaw_frequency", "pitch_offset",
                 "pitch_amplitude", "pitch_frequency"):
        if name in obj:
            lo, hi = obj[name]
            kwargs[name] = (float(lo), float(hi))
    return TraceSpec(**kwargs)
