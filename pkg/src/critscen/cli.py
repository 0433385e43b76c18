"""Command-line front end.

Usage:
    python -m critscen baseline --preset highway-3dof --out runs/base3
    python -m critscen optimize --config configs/set_a.yaml --out runs/a --seed 3
    python -m critscen campaign --config configs/sets_abcd.yaml --out runs/abcd
    python -m critscen cluster runs/base3/baseline.csv --out runs/recluster
    python -m critscen report --summary runs/abcd/summary.json --baseline runs/base3 --out runs/rep

Exit codes: 0 ok, 2 configuration error, 3 simulation or campaign error,
4 preset mismatch between inputs.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import os
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .acquisition import AcquisitionSettings
from .campaign import (BOTH, LOG_SCHEMA_VERSION, REQUIRED_MODES, CampaignConfig, CampaignError,
                       PresetMismatch, compare, dumps, records_to_csv, result_to_dict,
                       run_baseline, run_bo, run_repeats)
from .clustering import DbscanSettings, cluster_report, dbscan, label_modes
from .gp import HyperOptSettings
from .scenario import RNG_ALGORITHM, CapacityError, ScenarioSpace, preset
from .simulator import (NumericalFailure, SimConfig, SimOutcome, TRAJECTORY_COLUMNS,
                        criticality_vector, simulate, trajectory_rows)

EXIT_OK, EXIT_CONFIG, EXIT_SIM, EXIT_MISMATCH = 0, 2, 3, 4

PRESET_CONFIGS = {
    "highway-3dof": {"preset": "highway-3dof", "campaign": {"max_iters": 150}},
    "highway-6dof": {"preset": "highway-6dof", "campaign": {"max_iters": 600}},
}

_TOP_KEYS = {"preset", "space", "seed", "simulator", "gp", "dbscan", "threshold", "campaign",
             "cells", "grid_cap"}
_CAMPAIGN_KEYS = {"max_iters", "seed_multiplier", "stop_on_all_clusters", "required_modes",
                  "n_repeats", "metric_policy", "acquisition"}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: str | None = None, preset_name: str | None = None,
                seed: int | None = None) -> dict:
    """Resolve a raw config dict: named preset, then file, then CLI overrides.

    A run manifest is accepted as a config file; its snapshot is used.
    """
    raw = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        text = p.read_text()
        try:
            # YAML 1.1 reads exponent floats like 1e-05 as strings, so JSON
            # documents (manifests) go through the JSON parser
            raw = (json.loads(text) if text.lstrip().startswith("{")
                   else yaml.safe_load(text)) or {}
        except (yaml.YAMLError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        if "config" in raw and "rng_algorithm" in raw:
            raw = raw["config"]
    name = preset_name or raw.get("preset")
    if name is None and "space" not in raw:
        raise ConfigError("no scenario space: give --preset or a config with 'preset' or 'space'")
    if name is not None and name not in PRESET_CONFIGS:
        raise ConfigError(f"unknown preset {name!r}; known: {sorted(PRESET_CONFIGS)}")
    cfg = _merge(PRESET_CONFIGS[name], raw) if name else raw
    if preset_name:
        cfg["preset"] = preset_name
    if seed is not None:
        cfg["seed"] = seed
    cfg.setdefault("seed", 0)
    unknown = set(cfg) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    resolve(cfg)  # validate early
    return cfg


def _build(cls, d, where):
    if d is None:
        return cls()
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping")
    known = {f.name for f in fields(cls) if f.init}
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")
    floats = {f.name for f in fields(cls) if isinstance(f.default, float)}
    vals = {}
    for k, v in d.items():
        if isinstance(v, list):
            v = tuple(v)
        elif k in floats and isinstance(v, str):
            try:
                v = float(v)  # YAML 1.1 leaves "1e-5" as a string
            except ValueError:
                pass
        vals[k] = v
    try:
        return cls(**vals)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


class Resolved:
    """Typed view of a raw config dict."""

    def __init__(self, raw: dict):
        self.raw = raw
        self.preset = raw.get("preset") or ""
        try:
            self.space = (ScenarioSpace.from_dict(raw["space"]) if "space" in raw
                          else preset(self.preset))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid scenario space: {exc}") from None
        self.seed = raw.get("seed", 0)
        if not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer")
        self.sim = _build(SimConfig, raw.get("simulator"), "simulator")
        self.gp = _build(HyperOptSettings, raw.get("gp"), "gp")
        self.dbscan = _build(DbscanSettings, raw.get("dbscan"), "dbscan")
        self.threshold = float(raw.get("threshold", 3.5))
        self.grid_cap = int(raw.get("grid_cap", 10**6))
        self.campaign_raw = raw.get("campaign") or {}
        extra = set(self.campaign_raw) - _CAMPAIGN_KEYS
        if extra:
            raise ConfigError(f"unknown keys in campaign: {sorted(extra)}")
        self.campaign = self.campaign_config(self.campaign_raw)
        self.cells = []
        for i, cell in enumerate(raw.get("cells") or []):
            if not isinstance(cell, dict) or "name" not in cell:
                raise ConfigError(f"cells[{i}] needs a name")
            over = {k: v for k, v in cell.items() if k != "name"}
            extra = set(over) - _CAMPAIGN_KEYS
            if extra:
                raise ConfigError(f"unknown keys in cells[{i}]: {sorted(extra)}")
            self.cells.append((str(cell["name"]), self.campaign_config(
                _merge(self.campaign_raw, over))))
        names = [n for n, _ in self.cells]
        if len(set(names)) != len(names):
            raise ConfigError("cell names must be unique")

    def campaign_config(self, c: dict) -> CampaignConfig:
        c = dict(c)
        acq = _build(AcquisitionSettings, c.pop("acquisition", None), "campaign.acquisition")
        try:
            return CampaignConfig(space=self.space, acquisition=acq, sim=self.sim,
                                  hyperopt=self.gp, threshold=self.threshold,
                                  rng_seed=self.seed,
                                  **{k: (tuple(v) if isinstance(v, list) else v)
                                     for k, v in c.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"campaign: {exc}") from None


def resolve(raw: dict) -> Resolved:
    return Resolved(raw)


def _snapshot(r: Resolved) -> dict:
    """Fully expanded config: every default written out."""
    snap = {"preset": r.preset, "space": r.space.to_dict(), "seed": r.seed,
            "simulator": r.sim.to_dict(), "gp": _plain(asdict(r.gp)),
            "dbscan": asdict(r.dbscan), "threshold": r.threshold, "grid_cap": r.grid_cap,
            "campaign": _campaign_snapshot(r.campaign)}
    if r.cells:
        snap["cells"] = [{"name": n, **_campaign_snapshot(c)} for n, c in r.cells]
    return snap


def _campaign_snapshot(c: CampaignConfig) -> dict:
    acq = asdict(c.acquisition)
    acq.pop("rng_seed")
    return {"max_iters": c.max_iters, "seed_multiplier": c.seed_multiplier,
            "stop_on_all_clusters": c.stop_on_all_clusters,
            "required_modes": list(c.required_modes), "n_repeats": c.n_repeats,
            "metric_policy": c.metric_policy, "acquisition": acq}


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH pins the manifest clock for byte-identical reruns
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = time.gmtime(int(epoch)) if epoch else time.gmtime()
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", t)


def _write(out: Path, name: str, text: str, written: list) -> None:
    with open(out / name, "w", newline="") as f:
        f.write(text)
    written.append(name)


def _manifest(out: Path, command: str, r: Resolved, seeds, written, started) -> None:
    manifest = {
        "command": command,
        "tool": "critscen",
        "tool_version": __version__,
        "preset": r.preset,
        "rng_algorithm": RNG_ALGORITHM,
        "seeds": list(seeds),
        "csv_schema_version": LOG_SCHEMA_VERSION,
        "started": started,
        "finished": _timestamp(),
        "outputs": sorted(written),
        "config": _snapshot(r),
    }
    (out / "manifest.json").write_text(dumps(manifest))


def _dump_trajectories(out: Path, records, sim: SimConfig) -> list[str]:
    tdir = out / "trajectories"
    tdir.mkdir(exist_ok=True)
    names = []
    for rec in records:
        if rec.outcome.status != 0:
            continue
        rows = trajectory_rows(simulate(rec.scenario, sim, record=True))
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(TRAJECTORY_COLUMNS), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(float(v)) if k != "maneuver_state" else v)
                        for k, v in row.items()})
        name = f"trajectories/eval_{rec.index:05d}.csv"
        (out / name).write_text(buf.getvalue())
        names.append(name)
    return names


def _clusters_json(r_preset: str, labeling, metrics, n_points: int) -> dict:
    rep = cluster_report(labeling, metrics)
    return {"preset": r_preset, "baseline_size": n_points, **rep}


# ------------------------------------------------------------------ commands

def cmd_baseline(args, r: Resolved, out: Path) -> int:
    started = _timestamp()
    base = run_baseline(r.space, r.sim, args.parallel, r.dbscan, r.threshold, r.grid_cap)
    written = []
    extra = {"cluster": base.labeling.labels.tolist()}
    _write(out, "baseline.csv", records_to_csv(base.records, r.space, r.threshold, extra),
           written)
    metrics = [criticality_vector(rec.outcome) for rec in base.records]
    _write(out, "clusters.json",
           dumps(_clusters_json(r.preset, base.labeling, metrics, base.size)), written)
    if args.trajectories:
        written += _dump_trajectories(out, base.records, r.sim)
    _manifest(out, "baseline", r, [r.seed], written, started)
    counts = base.mode_counts(r.threshold)
    print(f"{base.size} scenarios, {base.labeling.n_clusters} clusters, "
          f"{base.labeling.noise_count} noise; modes {counts}")
    return EXIT_OK


def cmd_optimize(args, r: Resolved, out: Path) -> int:
    started = _timestamp()
    written = []
    cfg = r.campaign
    try:
        result = run_bo(cfg)
    except CampaignError as exc:
        if exc.partial is not None:
            _write(out, "bo_log.csv", records_to_csv(exc.partial.records, r.space, r.threshold),
                   written)
        raise
    _write(out, "bo_log.csv", records_to_csv(result.records, r.space, r.threshold), written)
    _write(out, "result.json", dumps({"preset": r.preset, **result_to_dict(result, r.threshold)}),
           written)
    if args.trajectories:
        written += _dump_trajectories(out, result.records, r.sim)
    _manifest(out, "optimize", r, [cfg.rng_seed], written, started)
    print(f"{result.n_evaluations} evaluations, stopped: {result.stopped_reason}, "
          f"first hits {result.first_hit}")
    return EXIT_OK


def cmd_campaign(args, r: Resolved, out: Path) -> int:
    started = _timestamp()
    cells = r.cells or [("default", r.campaign)]
    written = []
    summary = {"preset": r.preset, "modes": list(REQUIRED_MODES) + [BOTH], "cells": {}}
    seeds = []
    for name, cfg in cells:
        results, stats = run_repeats(cfg, parallelism=args.parallel)
        seeds += stats["seeds"]
        (out / "runs" / name).mkdir(parents=True, exist_ok=True)
        for res in results:
            _write(out, f"runs/{name}/run_{res.rng_seed}.csv",
                   records_to_csv(res.records, r.space, r.threshold), written)
        summary["cells"][name] = {
            "acquisition": cfg.acquisition.kind,
            "metric_policy": cfg.metric_policy,
            "max_iters": cfg.max_iters,
            "n_repeats": cfg.n_repeats,
            **stats,
        }
        both = stats["stats"][BOTH]
        print(f"{name}: {both['success_count']}/{cfg.n_repeats} runs hit every mode, "
              f"median {both['median']}")
    _write(out, "summary.json", dumps(summary), written)
    _manifest(out, "campaign", r, sorted(set(seeds)), written, started)
    return EXIT_OK


def _read_baseline_csv(path: Path):
    rows = list(csv.DictReader(io.StringIO(path.read_text())))
    if not rows or not {"status", "c_lat"} <= set(rows[0]):
        raise ConfigError(f"{path}: not a baseline CSV (needs status and c_lat columns)")
    outcomes = [SimOutcome(int(row["status"]), float(row["c_lat"]), row.get("off_road") == "true")
                for row in rows]
    return outcomes


def cmd_cluster(args, r: Resolved | None, out: Path) -> int:
    started = _timestamp()
    path = Path(args.csv)
    if not path.is_file():
        raise ConfigError(f"CSV not found: {path}")
    outcomes = _read_baseline_csv(path)
    settings = r.dbscan if r else DbscanSettings()
    threshold = r.threshold if r else 3.5
    metrics = [criticality_vector(o) for o in outcomes]
    labeling = label_modes(dbscan(metrics, settings), outcomes, threshold)
    written = []
    _write(out, "clusters.json",
           dumps(_clusters_json(r.preset if r else "", labeling, metrics, len(outcomes))), written)
    if r is not None:
        _manifest(out, "cluster", r, [r.seed], written, started)
    print(f"{len(outcomes)} points, {labeling.n_clusters} clusters, {labeling.noise_count} noise")
    return EXIT_OK


def _load_json(path: Path, what: str) -> dict:
    if not path.is_file():
        raise ConfigError(f"{what} not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def cmd_report(args, out: Path) -> int:
    if not args.summary or not args.baseline:
        raise ConfigError("report needs --summary and --baseline")
    summary = _load_json(Path(args.summary), "summary")
    bpath = Path(args.baseline)
    if bpath.is_dir():
        bpath = bpath / "clusters.json"
    baseline = _load_json(bpath, "baseline clusters")
    comparison = {"preset": baseline.get("preset", ""), "baseline_size": baseline["baseline_size"],
                  "cells": {}}
    for name, cell in summary.get("cells", {}).items():
        comparison["cells"][name] = compare(cell, baseline["baseline_size"],
                                            summary.get("preset", ""),
                                            baseline.get("preset", ""))["modes"]
    written = []
    _write(out, "comparison.json", dumps(comparison), written)
    _write(out, "boxplot.svg", boxplot_svg(summary), written)
    for name, modes in comparison["cells"].items():
        both = modes.get(BOTH, {})
        print(f"{name}: speedup {both.get('speedup')} (>=10x: {both.get('order_10x')}, "
              f">=100x: {both.get('order_100x')})")
    return EXIT_OK


# ------------------------------------------------------------------ box plot

def box_stats(values) -> dict | None:
    """Quartiles, 1.5 IQR whiskers and outliers of one sample."""
    if not values:
        return None
    v = np.sort(np.asarray(values, dtype=float))
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo_fence) & (v <= hi_fence)]
    return {"q1": float(q1), "median": float(med), "q3": float(q3),
            "whisker_lo": float(inside.min()), "whisker_hi": float(inside.max()),
            "outliers": [float(x) for x in v[(v < lo_fence) | (v > hi_fence)]]}


_MODE_COLORS = {"off_road": "#c0392b", "apriori_infeasible": "#2c6fbb", BOTH: "#555555"}


def boxplot_svg(summary: dict, modes=REQUIRED_MODES, width: int = 720, height: int = 400) -> str:
    """Static SVG: one box per (cell, mode) of first-hit evaluation counts."""
    cells = summary.get("cells", {})
    groups = [(name, mode, [h for h in cell["first_hits"][mode] if h is not None])
              for name, cell in cells.items() for mode in modes]
    all_vals = [v for _, _, vals in groups for v in vals]
    vmax = max(all_vals + [1.0])
    left, right, top, bottom = 60, 20, 30, 60
    plot_h = height - top - bottom
    slot = (width - left - right) / max(len(groups), 1)

    def ypix(v):
        return top + plot_h * (1.0 - v / (vmax * 1.05))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
           f'<line x1="{left}" y1="{top + plot_h}" x2="{width - right}" y2="{top + plot_h}" '
           'stroke="black"/>',
           f'<text x="15" y="{top + plot_h / 2:.1f}" transform="rotate(-90 15 '
           f'{top + plot_h / 2:.1f})" text-anchor="middle">evaluations to first hit</text>']
    for tick in np.linspace(0, vmax, 5):
        y = ypix(tick)
        out.append(f'<line x1="{left - 4}" y1="{y:.1f}" x2="{left}" y2="{y:.1f}" stroke="black"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end">{tick:.0f}</text>')
    for i, (name, mode, vals) in enumerate(groups):
        cx = left + slot * (i + 0.5)
        half = min(slot * 0.3, 30)
        color = _MODE_COLORS.get(mode, "#333333")
        out.append(f'<text x="{cx:.1f}" y="{top + plot_h + 16}" text-anchor="middle">'
                   f'{_esc(name)}</text>')
        out.append(f'<text x="{cx:.1f}" y="{top + plot_h + 30}" text-anchor="middle" '
                   f'fill="{color}">{_esc(mode)}</text>')
        b = box_stats(vals)
        if b is None:
            out.append(f'<text class="no-hit" x="{cx:.1f}" y="{top + plot_h / 2:.1f}" '
                       f'text-anchor="middle" fill="{color}">no-hit</text>')
            continue
        y1, ym, y3 = ypix(b["q1"]), ypix(b["median"]), ypix(b["q3"])
        ylo, yhi = ypix(b["whisker_lo"]), ypix(b["whisker_hi"])
        out.append(f'<g class="box-glyph" data-cell="{_esc(name)}" data-mode="{mode}">')
        out.append(f'<line x1="{cx:.1f}" y1="{yhi:.1f}" x2="{cx:.1f}" y2="{y3:.1f}" '
                   f'stroke="{color}"/>')
        out.append(f'<line x1="{cx:.1f}" y1="{y1:.1f}" x2="{cx:.1f}" y2="{ylo:.1f}" '
                   f'stroke="{color}"/>')
        for yw in (ylo, yhi):
            out.append(f'<line x1="{cx - half / 2:.1f}" y1="{yw:.1f}" x2="{cx + half / 2:.1f}" '
                       f'y2="{yw:.1f}" stroke="{color}"/>')
        out.append(f'<rect class="box" x="{cx - half:.1f}" y="{y3:.1f}" width="{2 * half:.1f}" '
                   f'height="{max(y1 - y3, 0.5):.1f}" fill="{color}" fill-opacity="0.25" '
                   f'stroke="{color}"/>')
        out.append(f'<line x1="{cx - half:.1f}" y1="{ym:.1f}" x2="{cx + half:.1f}" y2="{ym:.1f}" '
                   f'stroke="{color}" stroke-width="2"/>')
        for o in b["outliers"]:
            out.append(f'<circle class="outlier" cx="{cx:.1f}" cy="{ypix(o):.1f}" r="3" '
                       f'fill="none" stroke="{color}"/>')
        out.append('</g>')
        n_miss = len(cells[name]["first_hits"][mode]) - len(vals)
        if n_miss:
            out.append(f'<text class="no-hit" x="{cx:.1f}" y="{top - 8}" text-anchor="middle" '
                       f'fill="{color}">{n_miss} no-hit</text>')
    out.append('</svg>')
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


# ------------------------------------------------------------------ entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON config file (a run manifest also works)")
    common.add_argument("--preset", help="named scenario preset: highway-3dof or highway-6dof")
    common.add_argument("--out", default=".", help="output directory (created if missing)")
    common.add_argument("--seed", type=int, help="base RNG seed, overrides the config")
    common.add_argument("--parallel", type=int, default=1,
                        help="worker processes for baseline grids and campaign repeats")

    parser = argparse.ArgumentParser(prog="critscen", parents=[common],
                                     description="Critical-scenario search with GP-based "
                                                 "Bayesian optimization.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("baseline", parents=[common], help="simulate the full-factorial grid")
    p.add_argument("--trajectories", action="store_true",
                   help="also write per-scenario trajectory CSVs")
    p = sub.add_parser("optimize", parents=[common], help="one Bayesian-optimization run")
    p.add_argument("--trajectories", action="store_true",
                   help="also write trajectory CSVs of the evaluated scenarios")
    sub.add_parser("campaign", parents=[common], help="repeated runs over the config cells")
    p = sub.add_parser("cluster", parents=[common], help="re-cluster an existing baseline CSV")
    p.add_argument("csv", help="baseline.csv from a previous baseline run")
    p = sub.add_parser("report", parents=[common], help="box plots and speedup comparison")
    p.add_argument("--summary", help="summary.json from a campaign run")
    p.add_argument("--baseline", help="baseline output directory or its clusters.json")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        if args.parallel < 1:
            raise ConfigError("--parallel must be >= 1")
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "report":
            return cmd_report(args, out)
        if args.command == "cluster":
            r = (resolve(load_config(args.config, args.preset, args.seed))
                 if (args.config or args.preset) else None)
            return cmd_cluster(args, r, out)
        r = resolve(load_config(args.config, args.preset, args.seed))
        handler = {"baseline": cmd_baseline, "optimize": cmd_optimize,
                   "campaign": cmd_campaign}[args.command]
        return handler(args, r, out)
    except (ConfigError, CapacityError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PresetMismatch as exc:
        print(f"preset mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (NumericalFailure, CampaignError) as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIM


if __name__ == "__main__":
    sys.exit(main())
