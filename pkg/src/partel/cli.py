"""Command-line entry point: generate scenarios, solve, compare schemes, sweep, simulate, plan CNN rounds."""
from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import report
from .cnn import CnnShape, plan_cnn_round
from .errors import InfeasibleError, PartelError
from .scenario import (DistributionSpec, SystemConfig, generate_scenario, load_scenario,
                       noise_power_from_density, save_scenario)
from .sim import DecomposableModel, SyntheticDataset, run_partel
from .solver import SolverOptions

log = logging.getLogger("partel")

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


def _int_list(text: str):
    """'10,20,30' or '0-19' (inclusive) or a mix of both."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    return out


def _schemes(text: str):
    names = [s.strip() for s in text.split(",") if s.strip()]
    bad = [s for s in names if s not in report.SCHEMES]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"unknown scheme(s) {bad}; choose from {', '.join(report.SCHEMES)}")
    return names


def _config_from_args(a, N_default: int) -> SystemConfig:
    return SystemConfig(num_subcarriers=a.subcarriers if a.subcarriers is not None else N_default,
                        bandwidth=a.bandwidth,
                        noise_power=noise_power_from_density(a.noise_density, a.bandwidth),
                        bits_per_param=a.bits, circuit_energy=a.circuit_energy,
                        model_size=a.model_size if a.model_size is not None else 1.24e6)


def _scenario(a, K_default=50, N_default=80):
    if getattr(a, "scenario", None):
        return load_scenario(a.scenario)
    dist = DistributionSpec(path_loss=a.path_loss)
    K = a.workers if a.workers is not None else K_default
    return generate_scenario(K, _config_from_args(a, N_default), dist, a.seed)


def _opts(a) -> SolverOptions:
    o = SolverOptions()
    if getattr(a, "tol", None) is not None:
        o = replace(o, bisection_tol=a.tol)
    return o


def _emit(text: str, path):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _model_size(a, scenario):
    return float(a.model_size) if a.model_size is not None else scenario.config.model_size


# -- commands ---------------------------------------------------------------

def cmd_gen(a):
    sc = _scenario(a)
    if a.out in (None, "-"):
        from .scenario import scenario_to_dict
        sys.stdout.write(report.dumps_sidecar(scenario_to_dict(sc)))
    else:
        save_scenario(sc, a.out)
    return EXIT_OK


def _write_reports(a, reports):
    _emit(report.write_results_csv(reports), a.out)
    if a.sidecar:
        Path(a.sidecar).write_text(report.dumps_sidecar([r.to_dict(timing=a.timing) for r in reports]))


def cmd_solve(a):
    sc = _scenario(a)
    reports = report.compare_schemes(sc, _model_size(a, sc), [a.scheme], _opts(a))
    _write_reports(a, reports)
    return EXIT_OK if all(r.constraints.feasible for r in reports) else EXIT_INFEASIBLE


def cmd_compare(a):
    sc = _scenario(a)
    reports = report.compare_schemes(sc, _model_size(a, sc), a.schemes, _opts(a))
    _write_reports(a, reports)
    return EXIT_OK


def cmd_sweep(a):
    base = _config_from_args(a, 80)
    dist = DistributionSpec(path_loss=a.path_loss)
    summary, runs = report.sweep(a.axis, a.values, base, a.seeds, a.schemes, dist,
                                 workers=a.workers if a.workers is not None else 50, opts=_opts(a))
    _emit(report.write_summary_csv(summary), a.out)
    if a.runs_out:
        Path(a.runs_out).write_text(report.write_results_csv(runs))
    return EXIT_OK


def cmd_simulate(a):
    sc = _scenario(a, K_default=10, N_default=16)
    data = SyntheticDataset.generate(a.samples, a.dim, seed=a.seed)
    model = DecomposableModel.zeros(a.dim, regularizer=a.regularizer, strength=a.strength,
                                    step_scale=a.step_scale)
    buf = io.StringIO()
    for i, scheme in enumerate(a.schemes):
        tr = run_partel(model.copy(), data, sc, scheme, a.rounds, redraw=a.redraw,
                        dist=DistributionSpec(path_loss=a.path_loss), seed=a.seed)
        w = csv.DictWriter(buf, ["round", "T", "cumulative_T", "loss", "scheme", "seed"], lineterminator="\n")
        if i == 0:
            w.writeheader()
        for row in tr.rows():
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    _emit(buf.getvalue(), a.out)
    return EXIT_OK


def cmd_plan_cnn(a):
    sc = _scenario(a, K_default=30, N_default=50)
    shape = CnnShape.lenet5(batch_size=a.batch)
    res = plan_cnn_round(sc, shape, _opts(a))
    cols = ["stage", "unit", "subproblems", "optimal_latency", "rounded_latency", "latency_bound",
            "cutoff", "cutoff_indicator", "loads"]
    buf = io.StringIO()
    w = csv.DictWriter(buf, cols, lineterminator="\n")
    w.writeheader()
    side = {}
    for st in (res.w_stage, res.z_stage):
        rp = st.rounding
        w.writerow({"stage": st.granularity.stage, "unit": repr(st.granularity.unit),
                    "subproblems": st.granularity.subproblems, "optimal_latency": repr(rp.base_latency),
                    "rounded_latency": repr(rp.realized_latency), "latency_bound": repr(rp.latency_bound),
                    "cutoff": rp.cutoff, "cutoff_indicator": repr(rp.cutoff_indicator),
                    "loads": ";".join(repr(float(x)) for x in rp.rounded_loads)})
        side[st.granularity.stage] = {"rounding": rp.to_dict(), "plan": st.plan.to_dict()}
    _emit(buf.getvalue(), a.out)
    if a.sidecar:
        Path(a.sidecar).write_text(report.dumps_sidecar({"seed": sc.seed, "total_latency": res.latency,
                                                         "stages": side}))
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def _add_scenario_args(p, scenario=True):
    if scenario:
        p.add_argument("--scenario", help="scenario file (otherwise one is generated from --seed)")
    p.add_argument("--seed", type=int, default=0, help="generation seed")
    p.add_argument("-K", "--workers", type=int, default=None)
    p.add_argument("-N", "--subcarriers", type=int, default=None)
    p.add_argument("--model-size", type=float, default=None, help="parameters to update per round")
    p.add_argument("--bandwidth", type=float, default=312.5e3, help="Hz per subcarrier")
    p.add_argument("--noise-density", type=float, default=1e-9, help="W/Hz")
    p.add_argument("--bits", type=float, default=32.0, help="bits per parameter")
    p.add_argument("--circuit-energy", type=float, default=0.0, help="J per worker per round")
    p.add_argument("--path-loss", type=float, default=1e-3, help="mean channel power gain")


def _add_output_args(p):
    p.add_argument("--out", default=None, help="output file (default stdout)")
    p.add_argument("--sidecar", default=None, help="JSON file with full plans")
    p.add_argument("--timing", action="store_true", help="add solver wall time to the sidecar")
    p.add_argument("--tol", type=float, default=None, help="relative bisection tolerance on T")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="partel", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a scenario file")
    _add_scenario_args(g, scenario=False)
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="solve one scheme on a scenario")
    _add_scenario_args(s)
    _add_output_args(s)
    s.add_argument("--scheme", choices=report.SCHEMES, default="support")
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("compare", help="run several schemes on the same scenario")
    _add_scenario_args(c)
    _add_output_args(c)
    c.add_argument("--schemes", type=_schemes, default=list(report.SCHEMES))
    c.set_defaults(func=cmd_compare)

    w = sub.add_parser("sweep", help="median latency as the worker or subcarrier count varies")
    _add_scenario_args(w, scenario=False)
    w.add_argument("--axis", choices=("workers", "subcarriers"), required=True)
    w.add_argument("--values", type=_int_list, required=True, help="e.g. 10,20,30")
    w.add_argument("--seeds", type=_int_list, default=list(range(20)), help="e.g. 0-19")
    w.add_argument("--schemes", type=_schemes, default=["support"])
    w.add_argument("--out", default=None)
    w.add_argument("--runs-out", default=None, help="per-run results file")
    w.add_argument("--tol", type=float, default=None)
    w.set_defaults(func=cmd_sweep)

    m = sub.add_parser("simulate", help="train a toy model and record loss against latency")
    _add_scenario_args(m)
    m.add_argument("--schemes", "--scheme", dest="schemes", type=_schemes, default=["support"])
    m.add_argument("--rounds", type=int, default=50)
    m.add_argument("--dim", type=int, default=2000, help="model size (features)")
    m.add_argument("--samples", type=int, default=1000)
    m.add_argument("--regularizer", choices=("l1", "l2"), default="l2")
    m.add_argument("--strength", type=float, default=1e-4)
    m.add_argument("--step-scale", type=float, default=0.1)
    m.add_argument("--redraw", action="store_true", help="new channel realization every round")
    m.add_argument("--out", default=None)
    m.set_defaults(func=cmd_simulate)

    n = sub.add_parser("plan-cnn", help="plan both stages of a CNN round with granularity rounding")
    _add_scenario_args(n)
    _add_output_args(n)
    n.add_argument("--batch", type=int, default=50)
    n.set_defaults(func=cmd_plan_cnn)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if a.command == "simulate" and a.model_size is None:
        a.model_size = float(a.dim)
    try:
        return a.func(a)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (PartelError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
