"""Bundled verification suites.

Each criterion exercises one documented end-to-end behavior with fixed
seeds against an explicit runtime budget.  `tile360 verify` prints one
line per criterion; tests/test_acceptance.py asserts on the same
runners.  Every expected value below is either exact arithmetic or an
independent numeric oracle (Monte Carlo sampling, adaptive quadrature,
exhaustive search) computed inside the runner.
"""

import math
import time
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import quad

from . import cnn
from .allocator import (
    AllocationProblem,
    UserSession,
    baseline_alloc,
    global_search,
    greedy_alloc,
    steepest_descent,
)
from .error_model import (
    LaplaceParams,
    jarque_bera,
    laplace_interval_probability,
    sample_laplace,
)
from .geometry import (
    Fov,
    TileGrid,
    ViewAngles,
    monte_carlo_bounds,
    tileset_from_members,
    viewport_bounds,
    wrap_longitude,
)
from .predictor import (
    CnnPredictor,
    LinearPredictor,
    NaivePredictor,
    cnn_training_set,
    evaluate,
    lr_fit,
    split_traces,
    window_pairs,
)
from .ratedist import (
    DEFAULT_LADDER,
    RateLadder,
    RdParams,
    distortion,
    fit_rd,
    tile_area,
    tile_weight_map,
)
from .sim import (
    SessionConfig,
    TraceSpec,
    capacity_sweep,
    draw_capacities,
    records_to_csv,
    run_session,
    synth_traces,
)
from .visibility import TileClassification, classify_tiles, tile_bounds


@dataclass(frozen=True)
class CriterionResult:
    name: str
    passed: bool
    detail: str
    seconds: float


# Wall-clock budgets in seconds, asserted by the acceptance tests.
BUDGET_SECONDS = {
    "geometry": 30.0,
    "quadrature": 10.0,
    "distribution": 20.0,
    "allocator-gap": 60.0,
    "arithmetic": 5.0,
    "trends": 300.0,
    "predictor": 600.0,
    "rd-fit": 5.0,
    "determinism": 60.0,
}


def _check_geometry():
    """Analytic viewport bounds vs Monte Carlo extremes, 1000 cases."""
    rng = np.random.default_rng(2024)
    worst = 0.0
    n_pole = 0
    n_anti = 0
    failures = 0
    for case in range(1000):
        # Every tenth case is forced toward a pole, every tenth toward
        # the antimeridian, so both edge regimes are well represented.
        if case % 10 == 0:
            pitch = float(rng.uniform(60.0, 90.0)) * (-1.0 if case % 20 else 1.0)
        else:
            pitch = float(rng.uniform(-90.0, 90.0))
        if case % 10 == 5:
            yaw = float(rng.uniform(165.0, 180.0)) * (-1.0 if case % 20 < 10 else 1.0)
        else:
            yaw = float(rng.uniform(-180.0, 180.0))
        fov = Fov(horizontal=float(rng.uniform(60.0, 120.0)),
                  vertical=float(rng.uniform(60.0, 120.0)))
        view = ViewAngles(pitch=pitch, yaw=yaw)
        analytic = viewport_bounds(view, fov)
        sampled = monte_carlo_bounds(view, fov, samples_per_axis=2001)

        n_pole += analytic.covers_north_pole or analytic.covers_south_pole
        n_anti += analytic.wraps_antimeridian
        if (analytic.covers_north_pole != sampled.covers_north_pole
                or analytic.covers_south_pole != sampled.covers_south_pole):
            failures += 1
            continue
        gap = max(abs(analytic.lat_north - sampled.lat_north),
                  abs(analytic.lat_south - sampled.lat_south))
        if not (analytic.covers_north_pole or analytic.covers_south_pole):
            gap = max(gap,
                      abs(wrap_longitude(analytic.lon_west - sampled.lon_west)),
                      abs(wrap_longitude(analytic.lon_east - sampled.lon_east)))
        worst = max(worst, gap)
        if gap > 0.5:
            failures += 1
    passed = failures == 0
    detail = (f"worst gap {worst:.2e} deg over 1000 cases "
              f"({n_pole} polar, {n_anti} antimeridian), {failures} failures")
    return passed, detail


def _check_quadrature():
    """Closed forms vs adaptive quadrature over 10 000 random inputs."""
    rng = np.random.default_rng(7)
    worst_prob = 0.0
    for _ in range(5000):
        scale = float(rng.uniform(0.3, 40.0))
        a, b = sorted(rng.uniform(-200.0, 200.0, 2))
        closed = laplace_interval_probability(LaplaceParams(scale), a, b)
        pts = (0.0,) if a < 0.0 < b else None
        numeric, _ = quad(lambda x: math.exp(-abs(x) / scale) / (2.0 * scale),
                          a, b, points=pts, epsabs=1e-13, epsrel=1e-13, limit=200)
        worst_prob = max(worst_prob, abs(closed - numeric))

    worst_area = 0.0
    for _ in range(5000):
        grid = TileGrid(rows=int(rng.integers(1, 25)), cols=int(rng.integers(1, 25)))
        m = int(rng.integers(1, grid.rows + 1))
        n = int(rng.integers(1, grid.cols + 1))
        closed = tile_area(m, n, grid)
        bounds = tile_bounds(m, n, grid)
        # The spherical-cap integrand cos(lat) has no longitude
        # dependence, so the longitude factor is exact width; the
        # latitude factor is integrated adaptively.
        lat_part, _ = quad(math.cos, math.radians(bounds.lat_lower),
                           math.radians(bounds.lat_upper),
                           epsabs=1e-13, epsrel=1e-13)
        numeric = lat_part * math.radians(bounds.lon_right - bounds.lon_left)
        worst_area = max(worst_area, abs(closed - numeric))

    sum_gap = 0.0
    for rows, cols in ((8, 8), (5, 9)):
        grid = TileGrid(rows=rows, cols=cols)
        total = sum(tile_area(m, n, grid)
                    for m in range(1, rows + 1) for n in range(1, cols + 1))
        sum_gap = max(sum_gap, abs(total - 4.0 * math.pi))

    passed = worst_prob <= 1e-9 and worst_area <= 1e-9 and sum_gap <= 1e-9
    detail = (f"max |closed - quad|: {worst_prob:.2e} (probability), "
              f"{worst_area:.2e} (area); |sum - 4pi| = {sum_gap:.2e}")
    return passed, detail


def _check_distribution():
    """Laplace rejected as Gaussian, Gaussian not, on 100k samples."""
    correct = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        laplace = sample_laplace(LaplaceParams(5.0), 100_000, rng)
        _, laplace_rejected = jarque_bera(laplace)
        gauss = rng.normal(0.0, 5.0, 100_000)
        _, gauss_rejected = jarque_bera(gauss)
        correct += int(laplace_rejected and not gauss_rejected)
    passed = correct >= 19
    return passed, f"{correct}/20 seeds discriminated both ways"


def gap_instance(seed):
    """Seeded 2-user allocation instance small enough for global search.

    Each user gets 1-2 viewport tiles and 0-2 marginal tiles on a 4x4
    grid with the 3-level ladder (2, 10, 49) kbps, tight enough link
    and server budgets to force real trade-offs, and an omega cycling
    through 0, 0.5, 1 with the seed.
    """
    rng = np.random.default_rng(seed)
    grid = TileGrid(rows=4, cols=4)
    weights = tile_weight_map(grid)
    ladder = RateLadder((2.0, 10.0, 49.0))
    all_tiles = [(m, n) for m in range(1, 5) for n in range(1, 5)]
    users = []
    min_cost = 0.0
    for uid in range(2):
        n_vp = int(rng.integers(1, 3))
        n_mg = int(rng.integers(0, 3))
        row = int(rng.integers(1, 5))
        col = int(rng.integers(1, 5 - (n_vp - 1)))
        vp_members = {(row, col + j) for j in range(n_vp)}
        remaining = sorted(set(all_tiles) - vp_members)
        picks = rng.choice(len(remaining), size=n_mg, replace=False)
        marginal = frozenset(remaining[int(i)] for i in picks)
        probs = {t: 0.0 for t in all_tiles}
        for t in vp_members:
            probs[t] = 1.0
        for t in sorted(marginal):
            probs[t] = float(rng.uniform(0.1, 0.9))
        sigma = float(rng.uniform(1000.0, 5000.0))
        d0 = float(rng.uniform(0.0, 3.0))
        n_vis = n_vp + n_mg
        cap = max(1.2 * n_vis * 2.0, float(rng.uniform(0.3, 1.0)) * n_vis * 49.0)
        cls = TileClassification(
            viewport_tiles=tileset_from_members(grid, vp_members),
            marginal_tiles=marginal,
            invisible_tiles=frozenset(set(all_tiles) - vp_members - marginal),
            probabilities=probs,
            threshold=0.05,
        )
        users.append(UserSession(user_id=uid, classification=cls, capacity=cap,
                                 rd=RdParams(sigma=sigma, r0=0.5, d0=d0),
                                 weights=weights))
        min_cost += n_vis * 2.0
    share = float(rng.uniform(0.6, 1.0))
    server = max(1.2 * min_cost, share * sum(u.capacity for u in users))
    omega = (0.0, 0.5, 1.0)[seed % 3]
    return AllocationProblem(users=tuple(users), server_capacity=server,
                             ladder=ladder, omega=omega)


def _check_allocator_gap():
    """Descent vs exhaustive search on 100 seeded small instances."""
    within = 0
    below_global = 0
    no_init_wins = 0
    worst_rel = 0.0
    for seed in range(100):
        problem = gap_instance(seed)
        best = global_search(problem)
        main = steepest_descent(problem, init="relaxation")
        plain = steepest_descent(problem, init="all_min")
        rel = (main.objective - best.objective) / best.objective
        worst_rel = max(worst_rel, rel)
        if rel <= 0.01 + 1e-12:
            within += 1
        if main.objective < best.objective - 1e-9:
            below_global += 1
        if plain.objective < main.objective - 1e-9:
            no_init_wins += 1
    passed = within >= 95 and below_global == 0 and no_init_wins == 0
    detail = (f"{within}/100 within 1% (worst {100 * worst_rel:.2f}%), "
              f"{below_global} below exhaustive, "
              f"{no_init_wins} plain-descent wins")
    return passed, detail


def _check_arithmetic():
    """Hand-checkable ladder arithmetic and the zero-instability floor."""
    grid = TileGrid(rows=8, cols=8)
    bounds = viewport_bounds(ViewAngles(pitch=0.0, yaw=0.0),
                             Fov(horizontal=110.0, vertical=90.0))
    cls = classify_tiles(grid, bounds, LaplaceParams(5.0), LaplaceParams(5.0), 0.05)
    user = UserSession(user_id=0, classification=cls, capacity=2000.0,
                       rd=RdParams(sigma=3500.0, r0=0.5, d0=0.2),
                       weights=tile_weight_map(grid))
    problem = AllocationProblem(users=(user,), server_capacity=1_000_000.0,
                                ladder=DEFAULT_LADDER, omega=0.0)
    n_vp = len(cls.viewport_tiles.members)
    result = greedy_alloc(problem)
    tile = next(iter(cls.viewport_tiles.members))
    vp_rate = problem.ladder.rate(result.rates.index(0, tile[0], tile[1]))
    checks = [
        (n_vp == 20, f"|viewport| = {n_vp}, want 20"),
        (vp_rate == 49.0, f"greedy viewport rate {vp_rate} kbps, want 49"),
        (result.consumed_total == 20 * 49.0 + 44 * 2.0,
         f"consumed {result.consumed_total} kbps, want 1068"),
    ]
    for seed in range(5):
        inst = baseline_alloc(gap_instance(seed)).per_user_instability
        checks.append((all(v == 0.0 for v in inst),
                       f"baseline instability {inst} on seed {seed}, want all 0"))
    inst0 = baseline_alloc(problem).per_user_instability
    checks.append((all(v == 0.0 for v in inst0),
                   f"baseline instability {inst0}, want all 0"))
    failed = [msg for ok, msg in checks if not ok]
    if failed:
        return False, "; ".join(failed)
    return True, "viewport rate 49 kbps, consumed 1068 kbps, baseline instability 0"


def _sweep_curves(rows):
    """sweep rows -> {algorithm: [(capacity, wspsnr, instability)] ascending}."""
    curves = {}
    for row in rows:
        curves.setdefault(row["algorithm"], []).append(
            (row["server_capacity_kbps"], row["mean_expected_wspsnr_db"],
             row["mean_instability"]))
    for pts in curves.values():
        pts.sort()
    return curves


def _check_trends():
    """Capacity-sweep shape: monotone, plateau, dominance, stability order."""
    traces = synth_traces(TraceSpec(n_users=10, duration=17.0), seed=42)
    config = SessionConfig(omega=0.0, server_capacity=9000.0,
                           predictor="naive", seed=42)
    capacities = [9000.0 + 3000.0 * i for i in range(8)]  # 9 to 30 Mbps
    rows_w0 = capacity_sweep(config, traces, capacities,
                             ("proposed", "baseline", "greedy"))
    rows_w1 = capacity_sweep(replace(config, omega=1.0), traces, capacities,
                             ("proposed",))
    curves = _sweep_curves(rows_w0)
    curve_w1 = _sweep_curves(rows_w1)["proposed"]
    cap_sum = sum(draw_capacities(config, len(traces)))

    problems = []
    for name, pts in list(curves.items()) + [("proposed-w1", curve_w1)]:
        quality = [q for _, q, _ in pts]
        if any(b < a - 1e-9 for a, b in zip(quality, quality[1:])):
            problems.append(f"{name} quality not non-decreasing")
        plateau = [q for (c, q, _) in pts if c >= cap_sum]
        if plateau and max(plateau) - min(plateau) > 1e-6:
            problems.append(f"{name} no plateau past {cap_sum:.0f} kbps")
    for i, cap in enumerate(capacities):
        q_prop = curves["proposed"][i][1]
        if q_prop < curves["greedy"][i][1] - 1e-9:
            problems.append(f"greedy above proposed at {cap:.0f}")
        if q_prop < curves["baseline"][i][1] - 1e-9:
            problems.append(f"baseline above proposed at {cap:.0f}")
        s_base = curves["baseline"][i][2]
        s_w1 = curve_w1[i][2]
        s_w0 = curves["proposed"][i][2]
        s_greedy = curves["greedy"][i][2]
        if not s_base <= s_w1 + 1e-12 or not s_w1 <= s_w0 + 1e-12 \
                or not s_w0 <= s_greedy + 1e-12:
            problems.append(
                f"instability order {s_base:.3f}, {s_w1:.3f}, {s_w0:.3f}, "
                f"{s_greedy:.3f} broken at {cap:.0f}")
    if problems:
        return False, "; ".join(problems[:4])
    gain = curves["proposed"][0][1] - curves["baseline"][0][1]
    detail = (f"8 capacities, plateau past {cap_sum:.0f} kbps, "
              f"proposed +{gain:.2f} dB over baseline at 9 Mbps")
    return True, detail


def _check_predictor():
    """Gradient check, memorization, and naive-baseline comparisons."""
    problems = []

    model = cnn.init_cnn(seed=0)
    probe_trace = synth_traces(TraceSpec(n_users=1, duration=20.0), seed=3)[0]
    probe_x, probe_t = cnn_training_set([probe_trace], "yaw", 1.0)
    gap = cnn.gradient_check(model, (probe_x[0], probe_t[0]))
    if not gap < 1e-4:
        problems.append(f"gradient check {gap:.2e} >= 1e-4")

    smooth = TraceSpec(n_users=1, duration=40.0, yaw_components=1,
                       yaw_amplitude=(10.0, 10.0), yaw_frequency=(0.03, 0.03),
                       pitch_amplitude=(0.0, 0.0), yaw_jitter=0.0,
                       pitch_jitter=0.0)
    mem_set = cnn_training_set(synth_traces(smooth, seed=0), "yaw", 1.0)
    _, losses = cnn.cnn_train(mem_set, cnn.TrainConfig(rng_seed=0))
    if not losses[-1] < 1e-3:
        problems.append(f"memorization loss {losses[-1]:.2e} >= 1e-3")

    traces = synth_traces(TraceSpec(n_users=6, duration=60.0), seed=5)
    train, test = split_traces(traces, train_fraction=2 / 3, seed=1)
    kits = {"naive": {a: NaivePredictor() for a in ("pitch", "yaw")}}
    kits["linear"] = {}
    kits["cnn"] = {}
    for angle in ("pitch", "yaw"):
        windows = []
        targets = []
        for trace in train:
            w, t = window_pairs(trace, angle, 1.0)
            windows.append(w)
            targets.append(t)
        lin = lr_fit(np.vstack(windows), np.concatenate(targets), 1.0)
        kits["linear"][angle] = LinearPredictor(lin, clamp_pitch=angle == "pitch")
        net, _ = cnn.cnn_train(
            cnn_training_set(train, angle, 1.0),
            cnn.TrainConfig(epochs=120, decay_epochs=60, rng_seed=0))
        kits["cnn"][angle] = CnnPredictor(net, clamp_pitch=angle == "pitch")

    pooled = {}
    for kind, predictors in kits.items():
        per_angle = evaluate(predictors, test, 1.0)
        errs = np.concatenate([per_angle[a].errors.values for a in ("pitch", "yaw")])
        pooled[kind] = float(np.sqrt(np.mean(errs**2)))
        for angle, ev in per_angle.items():
            if ev.metrics.mean_abs_error > ev.metrics.rmse + 1e-12:
                problems.append(f"{kind} {angle} mean > rmse")
    if not pooled["cnn"] < pooled["naive"]:
        problems.append(
            f"cnn rmse {pooled['cnn']:.2f} not below naive {pooled['naive']:.2f}")
    if not pooled["linear"] < pooled["naive"]:
        problems.append(
            f"linear rmse {pooled['linear']:.2f} not below naive {pooled['naive']:.2f}")
    if problems:
        return False, "; ".join(problems)
    detail = (f"gradient gap {gap:.1e}, memorization {losses[-1]:.1e}, "
              f"rmse naive/linear/cnn = {pooled['naive']:.1f}/"
              f"{pooled['linear']:.1f}/{pooled['cnn']:.1f} deg")
    return True, detail


def _check_rd_fit():
    """Parameter recovery from ladder-rate samples, clean and noisy."""
    true = RdParams(sigma=3500.0, r0=0.5, d0=20.0)
    rates = DEFAULT_LADDER.rates

    def rel_errors(fitted):
        return (abs(fitted.sigma - true.sigma) / true.sigma,
                abs(fitted.r0 - true.r0) / true.r0,
                abs(fitted.d0 - true.d0) / true.d0)

    clean = [(r, distortion(true, r)) for r in rates]
    rel_clean = rel_errors(fit_rd(clean))
    rng = np.random.default_rng(3)
    noisy = [(r, distortion(true, r) * (1.0 + 0.01 * rng.standard_normal()))
             for r in rates for _ in range(3)]
    rel_noisy = rel_errors(fit_rd(noisy))
    passed = max(rel_clean) <= 0.01 and max(rel_noisy) <= 0.10
    detail = (f"clean worst {100 * max(rel_clean):.3f}%, "
              f"noisy worst {100 * max(rel_noisy):.2f}%")
    return passed, detail


def _check_determinism():
    """Identical config and traces give byte-identical CSV output."""
    traces = synth_traces(TraceSpec(n_users=2, duration=8.0), seed=9)
    config = SessionConfig(omega=0.5, server_capacity=6000.0,
                           user_capacities=(1500.0, 1500.0),
                           predictor="naive", seed=9)
    first, _ = run_session(config, traces)
    second, _ = run_session(config, traces)
    same = records_to_csv(first).encode() == records_to_csv(second).encode()
    return same, f"{len(first)} records, byte-identical: {same}"


_CRITERIA = (
    ("geometry", _check_geometry),
    ("quadrature", _check_quadrature),
    ("distribution", _check_distribution),
    ("allocator-gap", _check_allocator_gap),
    ("arithmetic", _check_arithmetic),
    ("trends", _check_trends),
    ("predictor", _check_predictor),
    ("rd-fit", _check_rd_fit),
    ("determinism", _check_determinism),
)

CRITERION_NAMES = tuple(name for name, _ in _CRITERIA)


def run_criteria(names=None):
    """Run the named criteria (all by default) and time each one."""
    table = dict(_CRITERIA)
    if names is None:
        names = CRITERION_NAMES
    unknown = [n for n in names if n not in table]
    if unknown:
        raise ValueError(f"unknown criteria {unknown}; pick from {CRITERION_NAMES}")
    results = []
    for name in names:
        start = time.perf_counter()
        passed, detail = table[name]()
        results.append(CriterionResult(name=name, passed=passed, detail=detail,
                                       seconds=time.perf_counter() - start))
    return results
