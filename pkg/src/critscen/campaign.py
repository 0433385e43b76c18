"""Baseline grid runs, Bayesian-optimization campaigns and repeated-run statistics."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import acquisition as acq
from .clustering import (APRIORI_INFEASIBLE, OFF_ROAD, ClusterLabeling, DbscanSettings,
                         dbscan, failure_mode, label_modes)
from .gp import FitError, HyperOptSettings, fit
from .scenario import (ConcreteScenario, ScenarioSpace, full_factorial, latin_hypercube,
                       scenarios_to_phys)
from .simulator import (NumericalFailure, SimConfig, SimOutcome, criticality_vector,
                        outcomes_from_batch, simulate, simulate_batch)

CONTINUOUS = "continuous"
DISCRETE = "discrete"
ALTERNATING = "alternating"
METRIC_POLICIES = (CONTINUOUS, DISCRETE, ALTERNATING)

SEED_PHASE = "seed"
ACQUISITION_PHASE = "acquisition"
BASELINE_PHASE = "baseline"

ALL_CLUSTERS_FOUND = "all_clusters_found"
BUDGET_EXHAUSTED = "budget_exhausted"

REQUIRED_MODES = (OFF_ROAD, APRIORI_INFEASIBLE)
# pseudo-mode: evaluations until every required mode has been hit
BOTH = "all_modes"

LOG_SCHEMA_VERSION = 1


class CampaignError(RuntimeError):
    """A campaign aborted; ``partial`` holds the records gathered so far."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class PresetMismatch(ValueError):
    pass


@dataclass(frozen=True)
class CampaignConfig:
    space: ScenarioSpace
    max_iters: int = 150
    acquisition: acq.AcquisitionSettings = field(default_factory=acq.AcquisitionSettings)
    metric_policy: str = CONTINUOUS
    seed_multiplier: int = 5
    stop_on_all_clusters: bool = True
    required_modes: tuple[str, ...] = REQUIRED_MODES
    rng_seed: int = 0
    n_repeats: int = 10
    sim: SimConfig = field(default_factory=SimConfig)
    hyperopt: HyperOptSettings = field(default_factory=HyperOptSettings)
    threshold: float = 3.5

    def __post_init__(self):
        if self.metric_policy not in METRIC_POLICIES:
            raise ValueError(f"unknown metric_policy {self.metric_policy!r}")
        if self.seed_multiplier < 1 or self.n_seed < 2:
            raise ValueError("seed count seed_multiplier * dim must be >= 2")
        if self.max_iters < self.n_seed:
            raise ValueError(f"max_iters ({self.max_iters}) is below the seed count ({self.n_seed})")
        if self.n_repeats < 1:
            raise ValueError("n_repeats must be >= 1")
        unknown = set(self.required_modes) - set(REQUIRED_MODES)
        if unknown:
            raise ValueError(f"unknown required modes {sorted(unknown)}")
        object.__setattr__(self, "required_modes", tuple(self.required_modes))

    @property
    def n_seed(self) -> int:
        return self.seed_multiplier * self.space.n

    def metric_at(self, index: int) -> str:
        """Driving metric of the evaluation with 1-based ``index``."""
        if self.metric_policy != ALTERNATING:
            return self.metric_policy
        step = index - self.n_seed
        if step < 1:
            return CONTINUOUS
        return CONTINUOUS if step % 2 == 1 else DISCRETE


@dataclass(frozen=True)
class EvaluationRecord:
    index: int
    scenario: ConcreteScenario
    outcome: SimOutcome
    phase: str
    driving_metric: str


@dataclass
class CampaignResult:
    records: list[EvaluationRecord]
    first_hit: dict[str, int]
    stopped_reason: str
    best: dict[str, tuple[tuple[float, ...], float]]
    rng_seed: int = 0

    @property
    def n_evaluations(self) -> int:
        return len(self.records)

    def hits_all(self, modes=REQUIRED_MODES) -> int | None:
        """Evaluations needed until every mode in ``modes`` was hit, or None."""
        if all(m in self.first_hit for m in modes):
            return max(self.first_hit[m] for m in modes)
        return None


def metric_value(out: SimOutcome, metric: str) -> float:
    return out.c_lat if metric == CONTINUOUS else float(out.status)


def _first_hits(records, threshold) -> dict[str, int]:
    hits = {}
    for r in records:
        mode = failure_mode(r.outcome, threshold)
        if mode != "nominal" and mode not in hits:
            hits[mode] = r.index
    return hits


def _best(records, metrics) -> dict:
    best = {}
    for metric in metrics:
        values = [metric_value(r.outcome, metric) for r in records]
        i = int(np.argmax(values))
        best[metric] = (records[i].scenario.x_phys, float(values[i]))
    return best


def _policy_metrics(policy: str) -> tuple[str, ...]:
    return (CONTINUOUS, DISCRETE) if policy == ALTERNATING else (policy,)


def run_bo(cfg: CampaignConfig, simulator=simulate) -> CampaignResult:
    """One Bayesian-optimization campaign: LHS seeding, then fit, acquire, simulate.

    Deterministic given ``cfg``. The acquisition and seed designs draw from
    substreams of ``cfg.rng_seed``; the GP restart design is fixed.
    """
    space = cfg.space
    settings = replace(cfg.acquisition, rng_seed=cfg.rng_seed)
    records: list[EvaluationRecord] = []

    def evaluate(scn, phase):
        index = len(records) + 1
        try:
            out = simulator(scn, cfg.sim)
        except NumericalFailure as exc:
            raise CampaignError(f"evaluation {index}: {exc}", _result(records, cfg)) from exc
        records.append(EvaluationRecord(index, scn, out, phase, cfg.metric_at(index)))

    def done():
        if not cfg.stop_on_all_clusters:
            return False
        hits = _first_hits(records, cfg.threshold)
        return all(m in hits for m in cfg.required_modes)

    for scn in latin_hypercube(space, cfg.n_seed, [cfg.rng_seed, 0]):
        evaluate(scn, SEED_PHASE)
    thetas: dict[str, np.ndarray | None] = {CONTINUOUS: None, DISCRETE: None}
    while len(records) < cfg.max_iters and not done():
        index = len(records) + 1
        metric = cfg.metric_at(index)
        X = np.array([r.scenario.x_unit for r in records])
        y = np.array([metric_value(r.outcome, metric) for r in records])
        try:
            model = fit(X, y, cfg.hyperopt, init_theta=thetas[metric])
        except (FitError, ValueError) as exc:
            raise CampaignError(f"GP fit failed before evaluation {index}: {exc}",
                                _result(records, cfg)) from exc
        thetas[metric] = model.theta
        evaluate(acq.propose(model, space, settings, iteration=index), ACQUISITION_PHASE)
    return _result(records, cfg)


def _result(records, cfg: CampaignConfig) -> CampaignResult:
    hits = _first_hits(records, cfg.threshold)
    found = all(m in hits for m in cfg.required_modes)
    reason = ALL_CLUSTERS_FOUND if found and cfg.stop_on_all_clusters else BUDGET_EXHAUSTED
    best = _best(records, _policy_metrics(cfg.metric_policy)) if records else {}
    return CampaignResult(list(records), hits, reason, best, cfg.rng_seed)


def _stats(values) -> dict:
    if not values:
        return {"min": None, "q1": None, "median": None, "q3": None, "max": None,
                "mean": None}
    v = np.asarray(values, dtype=float)
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    return {"min": float(v.min()), "q1": float(q1), "median": float(med), "q3": float(q3),
            "max": float(v.max()), "mean": float(v.mean())}


def summarize(results: list[CampaignResult], modes=REQUIRED_MODES) -> dict:
    """Per-mode first-hit statistics over the runs that hit the mode.

    Counts include the seed evaluations. ``all_modes`` is the number of
    evaluations until every mode was hit.
    """
    per_mode = {m: [r.first_hit.get(m) for r in results] for m in modes}
    per_mode[BOTH] = [r.hits_all(modes) for r in results]
    stats = {}
    for mode, hits in per_mode.items():
        ok = [h for h in hits if h is not None]
        stats[mode] = {**_stats(ok), "success_count": len(ok), "n_runs": len(hits)}
    return {
        "seeds": [r.rng_seed for r in results],
        "first_hits": per_mode,
        "evaluations": [r.n_evaluations for r in results],
        "stats": stats,
    }


def _run_one(cfg):
    return run_bo(cfg)


def run_repeats(cfg: CampaignConfig, simulator=simulate, parallelism: int = 1):
    """``cfg.n_repeats`` campaigns with seeds ``rng_seed + r``; returns (results, summary)."""
    cfgs = [replace(cfg, rng_seed=cfg.rng_seed + r) for r in range(cfg.n_repeats)]
    if parallelism > 1 and simulator is simulate:
        with ProcessPoolExecutor(parallelism) as pool:
            results = list(pool.map(_run_one, cfgs))
    else:
        results = [run_bo(c, simulator) for c in cfgs]
    return results, summarize(results, cfg.required_modes)


@dataclass
class BaselineResult:
    space: ScenarioSpace
    records: list[EvaluationRecord]
    labeling: ClusterLabeling

    @property
    def size(self) -> int:
        return len(self.records)

    def mode_counts(self, threshold: float = 3.5) -> dict[str, int]:
        counts = {}
        for r in self.records:
            mode = failure_mode(r.outcome, threshold)
            counts[mode] = counts.get(mode, 0) + 1
        return counts


def _simulate_chunk(args):
    x, cfg = args
    return simulate_batch(x, cfg)


def run_baseline(space: ScenarioSpace, sim: SimConfig | None = None, parallelism: int = 1,
                 dbscan_settings: DbscanSettings | None = None, threshold: float = 3.5,
                 cap: int | None = None) -> BaselineResult:
    """Simulate every full-factorial grid point (grid order) and cluster the metrics."""
    sim = sim or SimConfig()
    scenarios = full_factorial(space) if cap is None else full_factorial(space, cap)
    x = scenarios_to_phys(scenarios)
    if parallelism > 1 and len(x) > parallelism:
        chunks = np.array_split(np.arange(len(x)), parallelism)
        with ProcessPoolExecutor(parallelism) as pool:
            parts = list(pool.map(_simulate_chunk, [(x[c], sim) for c in chunks]))
        arrays = [np.concatenate([p[k] for p in parts]) for k in range(4)]
    else:
        arrays = simulate_batch(x, sim)
    outcomes = outcomes_from_batch(*arrays)
    records = [EvaluationRecord(i + 1, s, o, BASELINE_PHASE, "")
               for i, (s, o) in enumerate(zip(scenarios, outcomes))]
    labeling = dbscan([criticality_vector(o) for o in outcomes], dbscan_settings)
    return BaselineResult(space, records, label_modes(labeling, outcomes, threshold))


def compare(summary: dict, baseline_size: int, summary_preset: str = "",
            baseline_preset: str = "") -> dict:
    """Speedup of each mode's median first hit over the exhaustive grid."""
    if summary_preset != baseline_preset:
        raise PresetMismatch(f"summary is for {summary_preset!r}, baseline for {baseline_preset!r}")
    modes = {}
    for mode, st in summary["stats"].items():
        med = st["median"]
        speedup = None if med is None else baseline_size / med
        modes[mode] = {
            "median_first_hit": med,
            "success_count": st["success_count"],
            "speedup": speedup,
            "order_10x": speedup is not None and speedup >= 10,
            "order_100x": speedup is not None and speedup >= 100,
        }
    return {"preset": baseline_preset, "baseline_size": baseline_size, "modes": modes}


# ---------------------------------------------------------------- serialization

def _num(v) -> str:
    """Shortest round-trip decimal text for CSV cells."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def log_columns(space: ScenarioSpace) -> list[str]:
    return (["index", "phase", "driving_metric"] + space.names
            + ["u_" + n for n in space.names]
            + ["status", "c_lat", "off_road", "first_exceed_t", "failure_mode"])


def records_to_csv(records, space: ScenarioSpace, threshold: float = 3.5,
                   extra: dict[str, list] | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    extra = extra or {}
    w.writerow(log_columns(space) + list(extra))
    for i, r in enumerate(records):
        o = r.outcome
        w.writerow([r.index, r.phase, r.driving_metric]
                   + [_num(v) for v in r.scenario.x_phys]
                   + [_num(v) for v in r.scenario.x_unit]
                   + [o.status, _num(o.c_lat), _num(o.off_road), _num(o.first_exceed_t),
                      failure_mode(o, threshold)]
                   + [_num(col[i]) for col in extra.values()])
    return buf.getvalue()


def records_from_csv(text: str, space: ScenarioSpace) -> list[EvaluationRecord]:
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and not set(log_columns(space)) <= set(rows[0]):
        raise ValueError("CSV columns do not match the scenario space")
    records = []
    for row in rows:
        x = tuple(float(row[n]) for n in space.names)
        u = tuple(float(row["u_" + n]) for n in space.names)
        t = row["first_exceed_t"]
        out = SimOutcome(int(row["status"]), float(row["c_lat"]), row["off_road"] == "true",
                         float(t) if t else None)
        records.append(EvaluationRecord(int(row["index"]), ConcreteScenario(x, u), out,
                                        row["phase"], row["driving_metric"]))
    return records


def result_to_dict(result: CampaignResult, threshold: float = 3.5) -> dict:
    return {
        "rng_seed": result.rng_seed,
        "n_evaluations": result.n_evaluations,
        "stopped_reason": result.stopped_reason,
        "first_hit": dict(sorted(result.first_hit.items())),
        "best": {m: {"x": list(x), "value": v} for m, (x, v) in sorted(result.best.items())},
        "records": [
            {"index": r.index, "phase": r.phase, "driving_metric": r.driving_metric,
             "x": list(r.scenario.x_phys), "u": list(r.scenario.x_unit),
             "status": r.outcome.status, "c_lat": r.outcome.c_lat,
             "off_road": r.outcome.off_road, "first_exceed_t": r.outcome.first_exceed_t,
             "failure_mode": failure_mode(r.outcome, threshold)}
            for r in result.records
        ],
    }


def dumps(obj) -> str:
    """Deterministic JSON text (floats use the shortest round-trip form)."""
    return json.dumps(obj, indent=2, sort_keys=False, allow_nan=False) + "\n"
