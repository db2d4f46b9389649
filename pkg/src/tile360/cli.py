"""Command-line interface.

Every subcommand reads one JSON config file; results go to stdout as
JSON (or CSV) unless the config names an output path.  Exit codes: 0 on
success, 2 on invalid input, 3 on an infeasible allocation instance.
"""

import argparse
import json
import sys

import numpy as np

from . import cnn
from .allocator import (
    InfeasibleProblemError,
    problem_from_json,
    result_to_json,
    solve,
)
from .error_model import LaplaceParams, fit_laplace, jarque_bera, read_error_csv
from .geometry import Fov, TileGrid, ViewAngles, viewport_bounds
from .predictor import (
    CnnPredictor,
    LinearAngleModel,
    LinearPredictor,
    NaivePredictor,
    cnn_training_set,
    evaluate,
    lr_fit,
    read_trace_csv,
    window_pairs,
    write_trace_csv,
)
from .sim import (
    capacity_sweep,
    records_to_csv,
    report_to_json,
    run_session,
    session_config_from_json,
    sweep_to_csv,
    synth_traces,
    trace_spec_from_json,
)
from .visibility import classify_tiles


def _load_config(path):
    with open(path) as fh:
        return json.load(fh)


def _emit(text, path=None):
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _emit_json(obj, path=None):
    _emit(json.dumps(obj, indent=2, sort_keys=True), path)


def _load_traces(cfg):
    """Traces from CSV paths or a synthetic generator block."""
    if "traces" in cfg:
        paths = cfg["traces"]
        if not paths:
            raise ValueError("traces list is empty")
        return [read_trace_csv(p) for p in paths]
    if "synth" in cfg:
        spec = trace_spec_from_json(cfg["synth"].get("spec", {}))
        return synth_traces(spec, int(cfg["synth"].get("seed", 0)))
    raise ValueError("config needs either a traces list or a synth block")


def _cmd_synth_traces(cfg):
    spec = trace_spec_from_json(cfg.get("spec", {}))
    traces = synth_traces(spec, int(cfg.get("seed", 0)))
    prefix = cfg["out_prefix"]
    paths = []
    for k, trace in enumerate(traces):
        path = f"{prefix}{k}.csv"
        write_trace_csv(trace, path)
        paths.append(path)
    _emit_json({"traces": paths, "samples_per_trace": len(traces[0])})
    return 0


def _save_linear(model, path):
    np.savez(path, kind="linear", coef=model.coef,
             used_ridge=model.used_ridge, horizon=model.horizon)


def _load_linear(path):
    with np.load(path, allow_pickle=False) as data:
        if str(data["kind"]) != "linear":
            raise ValueError(f"{path} is not a linear predictor checkpoint")
        return LinearAngleModel(coef=data["coef"],
                                used_ridge=bool(data["used_ridge"]),
                                horizon=float(data["horizon"]))


def _cmd_predict_train(cfg):
    traces = _load_traces(cfg)
    horizon = float(cfg.get("horizon_s", 1.0))
    kind = cfg["predictor"]
    prefix = cfg["out_prefix"]
    summary = {}
    for angle in ("pitch", "yaw"):
        path = f"{prefix}_{angle}.npz"
        if kind == "linear":
            windows = []
            targets = []
            for trace in traces:
                w, t = window_pairs(trace, angle, horizon)
                windows.append(w)
                targets.append(t)
            model = lr_fit(np.vstack(windows), np.concatenate(targets), horizon)
            _save_linear(model, path)
            summary[angle] = {"path": path, "used_ridge": bool(model.used_ridge)}
        elif kind == "cnn":
            train_cfg = cnn.TrainConfig(**cfg.get("train", {}))
            dataset = cnn_training_set(traces, angle, horizon)
            model, losses = cnn.cnn_train(dataset, train_cfg)
            cnn.save_model(model, path, angle=angle, horizon=horizon)
            summary[angle] = {"path": path, "final_loss": float(losses[-1]),
                              "epochs": len(losses)}
        else:
            raise ValueError("predictor must be linear or cnn for training")
    _emit_json(summary)
    return 0


def _predictors_from_config(cfg, traces, horizon):
    kind = cfg.get("predictor", "naive")
    if kind == "naive":
        return {"pitch": NaivePredictor(), "yaw": NaivePredictor()}
    out = {}
    for angle in ("pitch", "yaw"):
        path = cfg[f"model_{angle}"]
        if kind == "linear":
            out[angle] = LinearPredictor(_load_linear(path),
                                         clamp_pitch=(angle == "pitch"))
        elif kind == "cnn":
            model, _ = cnn.load_model(path)
            out[angle] = CnnPredictor(model, clamp_pitch=(angle == "pitch"))
        else:
            raise ValueError(f"unknown predictor {kind!r}")
    return out


def _cmd_predict_eval(cfg):
    traces = _load_traces(cfg)
    horizon = float(cfg.get("horizon_s", 1.0))
    predictors = _predictors_from_config(cfg, traces, horizon)
    results = evaluate(predictors, traces, horizon)
    out = {}
    for angle, ev in results.items():
        out[angle] = {
            "mean_abs_error_deg": ev.metrics.mean_abs_error,
            "rmse_deg": ev.metrics.rmse,
            "p999_deg": ev.metrics.p999,
            "n_samples": int(ev.errors.values.size),
        }
    _emit_json(out, cfg.get("output_json"))
    return 0


def _cmd_fit_laplace(cfg):
    if "errors_csv" in cfg:
        samples = read_error_csv(cfg["errors_csv"])
    else:
        traces = _load_traces(cfg)
        horizon = float(cfg.get("horizon_s", 1.0))
        predictors = _predictors_from_config(cfg, traces, horizon)
        results = evaluate(predictors, traces, horizon)
        angle = cfg.get("angle", "yaw")
        if angle not in results:
            raise ValueError("angle must be pitch or yaw")
        samples = results[angle].errors
    params = fit_laplace(samples)
    stat, rejected = jarque_bera(samples)
    _emit_json({
        "scale_deg": params.scale,
        "jarque_bera_stat": stat,
        "gaussian_rejected_5pct": rejected,
    }, cfg.get("output_json"))
    return 0


def _cmd_map_viewport(cfg):
    grid_cfg = cfg.get("grid", {"rows": 8, "cols": 8})
    grid = TileGrid(rows=int(grid_cfg["rows"]), cols=int(grid_cfg["cols"]))
    fov_cfg = cfg.get("fov", {"horizontal": 110.0, "vertical": 90.0})
    fov = Fov(horizontal=float(fov_cfg["horizontal"]),
              vertical=float(fov_cfg["vertical"]))
    angles = ViewAngles(pitch=float(cfg["pitch"]), yaw=float(cfg["yaw"]))
    bounds = viewport_bounds(angles, fov)
    lat_err = LaplaceParams(scale=float(cfg.get("lat_error_scale", 5.0)))
    lon_err = LaplaceParams(scale=float(cfg.get("lon_error_scale", 5.0)))
    threshold = float(cfg.get("threshold", 0.05))
    cls = classify_tiles(grid, bounds, lat_err, lon_err, threshold)

    lines = []
    for m in range(1, grid.rows + 1):
        row = []
        for n in range(1, grid.cols + 1):
            if (m, n) in cls.viewport_tiles:
                row.append("V")
            elif (m, n) in cls.marginal_tiles:
                row.append("M")
            else:
                row.append(".")
        lines.append(" ".join(row))
    sys.stdout.write("\n".join(lines) + "\n")
    _emit_json({
        "bounds": {
            "lat_north": bounds.lat_north,
            "lat_south": bounds.lat_south,
            "lon_west": bounds.lon_west,
            "lon_east": bounds.lon_east,
        },
        "n_viewport": len(cls.viewport_tiles),
        "n_marginal": len(cls.marginal_tiles),
        "n_invisible": len(cls.invisible_tiles),
    })
    return 0


def _cmd_allocate(cfg):
    problem = problem_from_json(cfg["problem"])
    algorithm = cfg.get("algorithm", "proposed")
    result = solve(problem, algorithm)
    _emit_json(result_to_json(result, problem), cfg.get("output_json"))
    return 0


def _cmd_simulate(cfg):
    config = session_config_from_json(cfg["session"])
    traces = _load_traces(cfg)
    records, report = run_session(config, traces)
    if "output_csv" in cfg:
        _emit(records_to_csv(records), cfg["output_csv"])
    _emit_json(report_to_json(report), cfg.get("output_json"))
    return 0


def _cmd_sweep(cfg):
    config = session_config_from_json(cfg["session"])
    traces = _load_traces(cfg)
    capacities = [float(c) for c in cfg["capacities_kbps"]]
    algorithms = tuple(cfg.get("algorithms", ("proposed", "baseline", "greedy")))
    rows = capacity_sweep(config, traces, capacities, algorithms)
    _emit(sweep_to_csv(rows), cfg.get("output_csv"))
    return 0


def _cmd_verify(cfg):
    from . import verify

    names = cfg.get("criteria")
    results = verify.run_criteria(names)
    failed = 0
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        sys.stdout.write(f"{status} {res.name}: {res.detail} [{res.seconds:.1f}s]\n")
        failed += 0 if res.passed else 1
    return 0 if failed == 0 else 1


_COMMANDS = {
    "synth-traces": (_cmd_synth_traces, "generate seeded head-motion traces"),
    "predict-train": (_cmd_predict_train, "train a linear or cnn predictor"),
    "predict-eval": (_cmd_predict_eval, "evaluate predictors on traces"),
    "fit-laplace": (_cmd_fit_laplace, "fit the Laplace error model"),
    "map-viewport": (_cmd_map_viewport, "map one viewpoint to a tile grid"),
    "allocate": (_cmd_allocate, "solve one allocation problem"),
    "simulate": (_cmd_simulate, "run one streaming session"),
    "sweep": (_cmd_sweep, "run a server-capacity sweep"),
    "verify": (_cmd_verify, "run the bundled verification suites"),
}


def _parser():
    parser = argparse.ArgumentParser(
        prog="tile360",
        description="Tile-based adaptive 360-degree streaming toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in _COMMANDS.items():
        cmd = sub.add_parser(name, help=help_text)
        if name != "verify":
            cmd.add_argument("--config", required=True, help="JSON config file")
        else:
            cmd.add_argument("--config", required=False, help="JSON config file")
    return parser


def main(argv=None):
    args = _parser().parse_args(argv)
    handler = _COMMANDS[args.command][0]
    try:
        cfg = _load_config(args.config) if args.config else {}
        return handler(cfg)
    except InfeasibleProblemError as exc:
        sys.stderr.write(f"infeasible: {exc}\n")
        return 3
    except (ValueError, KeyError, TypeError, OSError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"invalid input: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
