"""Scheme comparison, parameter sweeps, and the delimited-text/JSON result formats."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .baselines import greedy_feel, proportional_baseline
from .cost_model import ConstraintReport, energy_breakdown, validate_plan
from .scenario import DistributionSpec, Scenario, SystemConfig, generate_scenario
from .solver import SolveResult, SolverOptions, solve_support

SCHEMES = ("support", "baseline", "greedy-feel")
RESULT_COLUMNS = ["scheme", "seed", "workers", "subcarriers", "model_size", "latency", "reduction",
                  "energy_total", "feasible", "worst_violation", "loads"]


def run_scheme(scheme: str, scenario: Scenario, L: float, opts: SolverOptions | None = None) -> SolveResult:
    if scheme == "support":
        return solve_support(scenario, L, opts)
    if scheme == "baseline":
        return proportional_baseline(scenario, L, opts)
    if scheme == "greedy-feel":
        return greedy_feel(scenario, L, opts)
    raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")


@dataclass
class RunReport:
    scheme: str
    seed: int | None
    workers: int
    subcarriers: int
    model_size: float
    latency: float
    loads: list
    energy: list
    constraints: ConstraintReport
    solver_seconds: float
    reduction: float | None = None     # (T_scheme - T_support)/T_scheme, support rows leave it empty
    result: SolveResult | None = field(default=None, repr=False)

    def row(self) -> dict:
        return {
            "scheme": self.scheme,
            "seed": "" if self.seed is None else self.seed,
            "workers": self.workers,
            "subcarriers": self.subcarriers,
            "model_size": repr(float(self.model_size)),
            "latency": repr(float(self.latency)),
            "reduction": "" if self.reduction is None else repr(float(self.reduction)),
            "energy_total": repr(float(np.sum(self.energy))),
            "feasible": str(self.constraints.feasible).lower(),
            "worst_violation": repr(float(self.constraints.worst_violation)),
            "loads": ";".join(repr(float(x)) for x in self.loads),
        }

    def to_dict(self, timing: bool = False) -> dict:
        d = {k: v for k, v in self.row().items() if k != "loads"}
        d.update({"loads": [float(x) for x in self.loads], "energy": [float(x) for x in self.energy],
                  "constraints": self.constraints.to_dict()})
        if self.result is not None:
            d["plan"] = self.result.plan.to_dict()
        if timing:
            d["solver_seconds"] = self.solver_seconds
        return d


def make_report(scheme: str, scenario: Scenario, L: float, opts: SolverOptions | None = None) -> RunReport:
    t0 = time.perf_counter()
    res = run_scheme(scheme, scenario, L, opts)
    elapsed = time.perf_counter() - t0
    plan = res.plan
    if math.isfinite(plan.latency):
        cons = validate_plan(plan, scenario, model_size=L)
        energy = energy_breakdown(plan, scenario)[3].tolist()
    else:
        cons = ConstraintReport({}, False, math.inf, worst_constraint="latency")
        energy = [math.nan] * scenario.num_workers
    return RunReport(scheme, scenario.seed, scenario.num_workers, scenario.num_subcarriers, float(L),
                     plan.latency, plan.loads.tolist(), energy, cons, elapsed, None, res)


def compare_schemes(scenario: Scenario, L: float | None = None, schemes=SCHEMES,
                    opts: SolverOptions | None = None) -> list:
    """One report per scheme on the same scenario, with the latency reduction achieved by the joint scheme."""
    if not schemes:
        raise ValueError("schemes must be non-empty")
    L = scenario.config.model_size if L is None else L
    cache = {}
    reports = []
    for s in schemes:
        if s not in cache:
            cache[s] = make_report(s, scenario, L, opts)
        r = cache[s]
        reports.append(RunReport(**{**r.__dict__}))
    if "support" in cache:
        t_sup = cache["support"].latency
        for r in reports:
            if r.scheme != "support":
                r.reduction = (r.latency - t_sup) / r.latency if math.isfinite(r.latency) else 1.0
    return reports


def sweep(axis: str, values, base: SystemConfig | None = None, seeds=range(20), schemes=("support",),
          dist: DistributionSpec | None = None, workers: int = 50, opts: SolverOptions | None = None,
          model_size: float | None = None):
    """Median latency per (scheme, value) as the number of workers or subcarriers varies.

    Returns (summary rows, per-run reports). Runs are ordered by (value, seed, scheme).
    """
    if axis not in ("workers", "subcarriers"):
        raise ValueError("axis must be 'workers' or 'subcarriers'")
    values = list(values)
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError("sweep values must be increasing")
    base = base or SystemConfig()
    L = base.model_size if model_size is None else model_size
    runs = []
    for v in values:
        K = v if axis == "workers" else workers
        cfg = base if axis == "workers" else SystemConfig(**{**base.__dict__, "num_subcarriers": v})
        for seed in seeds:
            sc = generate_scenario(K, cfg, dist, seed)
            for r in compare_schemes(sc, L, schemes, opts):
                runs.append((v, r))
    summary = []
    for v in values:
        for s in schemes:
            lat = [r.latency for vv, r in runs if vv == v and r.scheme == s]
            summary.append({"axis": axis, "value": v, "scheme": s, "runs": len(lat),
                            "median_latency": float(np.median(lat)), "mean_latency": float(np.mean(lat))})
    return summary, [r for _, r in runs]


def mean_with_ci(x, z: float = 1.96):
    """Mean and normal-approximation confidence half-width."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()), float("nan")
    return float(x.mean()), float(z * x.std(ddof=1) / math.sqrt(x.size))


def write_results_csv(reports, fh=None) -> str:
    """Delimited results with a header row; returns the text when no file handle is given."""
    buf = fh or io.StringIO()
    w = csv.DictWriter(buf, RESULT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue() if fh is None else ""


def write_summary_csv(rows, fh=None) -> str:
    buf = fh or io.StringIO()
    cols = ["axis", "value", "scheme", "runs", "median_latency", "mean_latency"]
    w = csv.DictWriter(buf, cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in cols})
    return buf.getvalue() if fh is None else ""


def dumps_sidecar(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n"
