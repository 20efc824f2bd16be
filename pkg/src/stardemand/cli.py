"""Config-driven command line front end.

Subcommands: ingest, weights, fit, grid, synth. Each reads a YAML config
(plus a few flag overrides), writes its outputs under a single run
directory with a manifest, and echoes the defaults-resolved config so a
run can be reproduced from its own output.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime
from pathlib import Path

import numpy as np
import yaml

from . import estimators, forecast, ingest, panel as panel_mod, synth, weights
from .errors import ConfigError, DataError, NumericalError
from .estimators import LassoConfig
from .forecast import MODEL_LASSO_STAR, MODEL_STAR, MODEL_VAR, ScenarioConfig, ScenarioGrid
from .panel import ModelOrder, SplitSpec

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML in {path}: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return cfg


def _resolve_path(cfg_path, value) -> Path:
    p = Path(value)
    if not p.is_absolute():
        p = Path(cfg_path).parent / p
    return p


def _require(cfg: dict, key: str, where: str):
    if key not in cfg:
        raise ConfigError(f"missing config key {where}.{key}" if where else
                          f"missing config key {key}")
    return cfg[key]


class RunDir:
    """Output directory with a manifest and an effective-config echo."""

    def __init__(self, path, command: str, effective_config: dict):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.outputs: list[str] = []
        self.command = command
        with open(self.path / "config.yaml", "w") as fh:
            yaml.safe_dump(effective_config, fh, sort_keys=True)

    def file(self, name: str) -> Path:
        self.outputs.append(name)
        return self.path / name

    def finish(self) -> None:
        manifest = {
            "command": self.command,
            "outputs": sorted(set(self.outputs + ["config.yaml"])),
        }
        with open(self.path / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")


def _load_zones(cfg: dict, cfg_path, where: str):
    if "zones" in cfg:
        zones = ingest.load_zones_geojson(_resolve_path(cfg_path, cfg["zones"]))
    elif "zones_csv" in cfg:
        zones = ingest.load_zones_centroid_csv(_resolve_path(cfg_path, cfg["zones_csv"]))
    else:
        raise ConfigError(f"{where}: need zones (GeoJSON) or zones_csv (centroids)")
    return sorted(zones, key=lambda z: z.zone_id)


def _parse_dt(s: str) -> datetime:
    for fmt in ("%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%d"):
        try:
            return datetime.strptime(s, fmt)
        except ValueError:
            continue
    raise ConfigError(f"unparsable timestamp {s!r} (use YYYY-MM-DD [HH:MM[:SS]])")


# -- subcommands --------------------------------------------------------

def cmd_ingest(args) -> int:
    cfg = load_config(args.config)
    icfg = _require(cfg, "ingest", "")
    out_dir = args.out or _require(cfg, "output_dir", "")
    trips_path = _resolve_path(args.config, _require(icfg, "trips", "ingest"))
    zones = _load_zones(icfg, args.config, "ingest")

    cols = icfg.get("columns", {})
    fmt = ingest.TripFormat(
        time_column=cols.get("time", "Date/Time"),
        lat_column=cols.get("lat", "Lat"),
        lon_column=cols.get("lon", "Lon"),
        timestamp_format=icfg.get("timestamp_format", ingest.DEFAULT_TS_FORMAT),
    )
    parse_policy = icfg.get("parse_policy", ingest.POLICY_SKIP)
    assign_policy = icfg.get("assign_policy", ingest.POLICY_DROP)
    bin_minutes = int(icfg.get("bin_minutes", 15))
    day_range = None
    if "day_range" in icfg:
        lo, hi = icfg["day_range"]
        day_range = (_parse_dt(str(lo)), _parse_dt(str(hi)))

    effective = {
        "command": "ingest",
        "seed": cfg.get("seed", 0),
        "ingest": {
            "trips": str(trips_path),
            "zones": icfg.get("zones", icfg.get("zones_csv")),
            "columns": {"time": fmt.time_column, "lat": fmt.lat_column, "lon": fmt.lon_column},
            "timestamp_format": fmt.timestamp_format,
            "bin_minutes": bin_minutes,
            "parse_policy": parse_policy,
            "assign_policy": assign_policy,
            "day_range": [str(d) for d in day_range] if day_range else None,
        },
    }
    run = RunDir(out_dir, "ingest", effective)

    report = ingest.IngestReport()
    trips = ingest.parse_trips(trips_path, fmt, policy=parse_policy, report=report)
    if not trips:
        report.write_json(run.file("ingest_report.json"))
        run.finish()
        raise DataError("no trips parsed")
    out_panel = ingest.bin_counts(
        trips, zones, bin_minutes=bin_minutes, day_range=day_range,
        assign_policy=assign_policy, report=report,
    )
    panel_mod.write_panel_csv(out_panel, run.file("panel.csv"))
    report.write_json(run.file("ingest_report.json"))
    run.finish()
    print(f"panel: {out_panel.k} zones x {out_panel.T} bins; "
          f"assigned {report.assigned}, dropped "
          f"{report.dropped_parse + report.dropped_outside_range + report.dropped_unassigned}")
    return EXIT_OK


def cmd_weights(args) -> int:
    cfg = load_config(args.config)
    wcfg = _require(cfg, "weights", "")
    out_dir = args.out or _require(cfg, "output_dir", "")
    scheme = _require(wcfg, "scheme", "weights")
    eta_max = int(_require(wcfg, "eta_max", "weights"))

    if scheme == weights.SCHEME_CENTROID:
        zones = _load_zones(wcfg, args.config, "weights")
        stack = weights.centroid_rings(zones, eta_max)
    elif scheme == weights.SCHEME_ADJACENCY:
        zones = _load_zones(wcfg, args.config, "weights")
        zone_ids = [z.zone_id for z in zones]
        adj_path = _resolve_path(args.config, _require(wcfg, "adjacency", "weights"))
        graph = weights.read_adjacency_csv(adj_path, zone_ids)
        stack = weights.adjacency_rings(graph, eta_max)
    else:
        raise ConfigError(f"unknown weight scheme {scheme!r}")

    effective = {"command": "weights", "weights": {
        "scheme": scheme, "eta_max": eta_max,
        "zones": wcfg.get("zones", wcfg.get("zones_csv")),
        "adjacency": wcfg.get("adjacency"),
    }}
    run = RunDir(out_dir, "weights", effective)
    stack_dir = run.path / "stack"
    weights.write_stack(stack, stack_dir)
    run.outputs.append("stack")
    checks = weights.validate_stack(stack)
    with open(run.file("stack_checks.json"), "w") as fh:
        json.dump(checks, fh, indent=2)
        fh.write("\n")
    run.finish()
    failed = [c for c in checks if not c["ok"]]
    if failed:
        raise NumericalError(f"stack validation failed: {failed}")
    print(f"stack: scheme={scheme} eta_max={eta_max} k={stack.k} -> {stack_dir}")
    return EXIT_OK


def _load_panel(cfg: dict, cfg_path):
    path = _resolve_path(cfg_path, _require(cfg, "panel", ""))
    return panel_mod.read_panel_csv(path)


def _load_stacks(cfg: dict, cfg_path) -> dict[str, weights.WeightStack]:
    stacks_cfg = _require(cfg, "stacks", "")
    return {name: weights.read_stack(_resolve_path(cfg_path, p))
            for name, p in stacks_cfg.items()}


def _split_from_config(cfg: dict, n_bins: int, pn: panel_mod.DemandPanel) -> SplitSpec:
    scfg = cfg.get("split", {})
    if "t2" in scfg:
        t2 = int(scfg["t2"])
        t_end = int(scfg.get("t_end", n_bins))
        t1 = int(scfg.get("t1", (t2 + 1) // 2))
        return SplitSpec(t1=t1, t2=t2, t_end=t_end)
    t2_frac = float(scfg.get("t2_fraction", 2 / 3))
    t1_frac = float(scfg.get("t1_fraction_of_t2", 0.5))
    return panel_mod.split(pn, t2_frac, t1_frac)


def _lasso_from_config(cfg: dict) -> tuple[LassoConfig, bool]:
    lcfg = cfg.get("lasso", {})
    grid = lcfg.get("grid")
    lasso = LassoConfig(
        n_lambdas=int(lcfg.get("n_lambdas", 50)),
        lambda_min_ratio=float(lcfg.get("lambda_min_ratio", 1e-4)),
        include_zero=bool(lcfg.get("include_zero", True)),
        tolerance=float(lcfg.get("tolerance", 1e-8)),
        max_sweeps=int(lcfg.get("max_sweeps", 10_000)),
        explicit_grid=tuple(float(g) for g in grid) if grid is not None else None,
    )
    return lasso, bool(lcfg.get("refit_after_tuning", True))


def _maybe_standardize(cfg, pn, spl):
    if not cfg.get("standardize", False):
        return pn, None
    std_panel, std = panel_mod.standardize(pn, (0, spl.t1))
    return std_panel, std


def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    fcfg = _require(cfg, "fit", "")
    out_dir = args.out or _require(cfg, "output_dir", "")
    pn = _load_panel(cfg, args.config)
    spl = _split_from_config(cfg, pn.T, pn)
    pn, _ = _maybe_standardize(cfg, pn, spl)
    kind = _require(fcfg, "model", "fit")
    p = int(_require(fcfg, "p", "fit"))
    lasso, refit = _lasso_from_config(cfg)

    effective = {"command": "fit", "fit": dict(fcfg),
                 "split": {"t1": spl.t1, "t2": spl.t2, "t_end": spl.t_end},
                 "standardize": bool(cfg.get("standardize", False))}
    run = RunDir(out_dir, "fit", effective)

    if kind == MODEL_VAR:
        model = estimators.fit_var_ols(pn, p, (0, spl.t2))
    else:
        eta = int(_require(fcfg, "eta", "fit"))
        stacks = _load_stacks(cfg, args.config)
        stack_name = _require(fcfg, "stack", "fit")
        if stack_name not in stacks:
            raise ConfigError(f"fit.stack {stack_name!r} not in stacks")
        stack = stacks[stack_name]
        order = ModelOrder(p=p, eta=eta)
        if kind == MODEL_STAR:
            designs = estimators.build_design(pn, stack, order, (0, spl.t2))
            model = estimators.fit_star_ols(designs, scheme=stack.scheme)
        elif kind == MODEL_LASSO_STAR:
            lam, curve = estimators.tune_lambda(pn, stack, order, spl, lasso)
            fit_end = spl.t2 if refit else spl.t1
            designs = estimators.build_design(pn, stack, order, (0, fit_end))
            model = estimators.fit_lasso_star(designs, lam, lasso, scheme=stack.scheme)
            with open(run.file("lambda_curve.json"), "w") as fh:
                json.dump({"lambda": lam,
                           "curve": [[l, m] for l, m in curve]}, fh, indent=2)
                fh.write("\n")
        else:
            raise ConfigError(f"unknown model kind {kind!r}")
    estimators.write_model_json(model, run.file("model.json"))
    run.finish()
    print(f"fitted {kind} (p={p}) -> {run.path / 'model.json'}")
    return EXIT_OK


def cmd_grid(args) -> int:
    cfg = load_config(args.config)
    gcfg = _require(cfg, "grid", "")
    out_dir = args.out or _require(cfg, "output_dir", "")
    pn = _load_panel(cfg, args.config)
    spl = _split_from_config(cfg, pn.T, pn)
    pn, _ = _maybe_standardize(cfg, pn, spl)
    stacks = _load_stacks(cfg, args.config)
    lasso, refit = _lasso_from_config(cfg)

    models = tuple(gcfg.get("models", [MODEL_STAR, MODEL_LASSO_STAR]))
    for m in models:
        if m not in (MODEL_STAR, MODEL_LASSO_STAR):
            raise ConfigError(f"grid.models entry {m!r} must be star or lasso_star")
    p_values = tuple(int(v) for v in gcfg.get("p", [1, 2, 3, 4]))
    eta_values = tuple(int(v) for v in gcfg.get("eta", [1, 2, 3, 4, 5, 6]))
    include_var = bool(gcfg.get("include_var", True))
    timings = bool(cfg.get("timings", True))

    grid = ScenarioGrid(
        p_values=p_values,
        eta_values=eta_values,
        stacks=tuple(stacks[name] for name in sorted(stacks)),
        model_kinds=models,
        include_var=include_var,
        split=spl,
        config=ScenarioConfig(lasso=lasso, refit_after_tuning=refit),
    )

    effective = {
        "command": "grid", "seed": cfg.get("seed", 0),
        "panel": str(_resolve_path(args.config, cfg["panel"])),
        "stacks": {n: str(_resolve_path(args.config, p)) for n, p in cfg["stacks"].items()},
        "split": {"t1": spl.t1, "t2": spl.t2, "t_end": spl.t_end},
        "standardize": bool(cfg.get("standardize", False)),
        "timings": timings,
        "grid": {"models": list(models), "p": list(p_values),
                 "eta": list(eta_values), "include_var": include_var},
    }
    run = RunDir(out_dir, "grid", effective)

    reports = forecast.run_grid(pn, grid, jobs=args.jobs)
    forecast.reports_to_csv(reports, run.file("reports.csv"), include_seconds=timings)
    table = forecast.render_table(reports)
    with open(run.file("table.txt"), "w") as fh:
        fh.write(table)
    run.finish()
    print(table, end="")
    ok = [r for r in reports if r.error is None]
    failed = [r for r in reports if r.error is not None]
    if failed:
        print(f"{len(failed)} scenario(s) failed:", file=sys.stderr)
        for r in failed:
            print(f"  {r.model} p={r.p} eta={r.eta} scheme={r.scheme}: {r.error}",
                  file=sys.stderr)
    if not ok:
        raise NumericalError("every scenario failed")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    scfg = _require(cfg, "synth", "")
    out_dir = args.out or _require(cfg, "output_dir", "")
    seed = int(cfg.get("seed", scfg.get("seed", 0)))
    kind = _require(scfg, "kind", "synth")
    k = int(_require(scfg, "k", "synth"))
    length = int(_require(scfg, "length", "synth"))
    sigma = float(scfg.get("sigma", 1.0))
    burn_in = int(scfg.get("burn_in", 50))

    effective = {"command": "synth", "seed": seed, "synth": dict(scfg)}
    run = RunDir(out_dir, "synth", effective)

    if kind == synth.KIND_STAR:
        p = int(_require(scfg, "p", "synth"))
        eta = int(_require(scfg, "eta", "synth"))
        order = ModelOrder(p=p, eta=eta)
        if "stack" in scfg and scfg["stack"] != "random":
            stack = weights.read_stack(_resolve_path(args.config, scfg["stack"]))
        else:
            stack = synth.random_centroid_stack(k, int(scfg.get("eta_max", eta)), seed)
        if "coefficients" in scfg:
            spec = synth.ProcessSpec(
                kind=synth.KIND_STAR, k=k, length=length, sigma=sigma, seed=seed,
                initial=np.zeros((k, p)), order=order,
                star_coefficients=np.array(scfg["coefficients"], dtype=float),
                burn_in=burn_in, require_stable=bool(scfg.get("require_stable", False)),
            )
        else:
            spec = synth.random_sparse_star_spec(
                k, order, stack, sigma=sigma, length=length, seed=seed,
                density=float(scfg.get("density", 0.5)),
                target_radius=float(scfg.get("target_radius", 0.7)),
                burn_in=burn_in,
            )
        out_panel = synth.gen_star_process(spec, stack)
        stack_dir = run.path / "stack"
        weights.write_stack(stack, stack_dir)
        run.outputs.append("stack")
        with open(run.file("truth.json"), "w") as fh:
            json.dump({"kind": "star", "p": p, "eta": eta, "sigma": sigma,
                       "coefficients": spec.star_coefficients.tolist()}, fh, indent=2)
            fh.write("\n")
    elif kind == synth.KIND_VAR:
        intercept = np.array(scfg.get("intercept", [0.0] * k), dtype=float)
        mats = tuple(np.array(m, dtype=float)
                     for m in _require(scfg, "lag_matrices", "synth"))
        spec = synth.ProcessSpec(
            kind=synth.KIND_VAR, k=k, length=length, sigma=sigma, seed=seed,
            initial=np.zeros((k, len(mats))),
            var_intercept=intercept, var_lag_matrices=mats,
            burn_in=burn_in, require_stable=bool(scfg.get("require_stable", False)),
        )
        out_panel = synth.gen_var_process(spec)
        with open(run.file("truth.json"), "w") as fh:
            json.dump({"kind": "var", "p": len(mats), "sigma": sigma,
                       "intercept": intercept.tolist(),
                       "lag_matrices": [m.tolist() for m in mats]}, fh, indent=2)
            fh.write("\n")
    else:
        raise ConfigError(f"unknown synth kind {kind!r}")

    panel_mod.write_panel_csv(out_panel, run.file("panel.csv"))
    run.finish()
    print(f"synthetic panel: {out_panel.k} zones x {out_panel.T} bins -> "
          f"{run.path / 'panel.csv'}")
    return EXIT_OK


# -- entry point --------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="stardemand",
        description="Zone-level demand forecasting with VAR / STAR / LASSO-STAR",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn, helptext in [
        ("ingest", cmd_ingest, "bin raw trips into a demand panel"),
        ("weights", cmd_weights, "build a neighborhood weight stack"),
        ("fit", cmd_fit, "fit a single model and write it as JSON"),
        ("grid", cmd_grid, "run the scenario grid and render the MSPE table"),
        ("synth", cmd_synth, "generate a synthetic panel from a known process"),
    ]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("-c", "--config", required=True, help="YAML config file")
        p.add_argument("--out", help="output directory (overrides config output_dir)")
        if name == "grid":
            p.add_argument("--jobs", type=int, default=1, help="worker count")
        p.set_defaults(fn=fn)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
