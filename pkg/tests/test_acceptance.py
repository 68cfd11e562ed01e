"""Acceptance suite: one PASS/FAIL line per criterion, collected into the terminal summary."""
import io
import json
import math
import time
from contextlib import redirect_stdout
from pathlib import Path

import numpy as np
import pytest

from partel.baselines import greedy_feel, proportional_baseline
from partel.cli import main as cli_main
from partel.cnn import CnnShape, plan_cnn_round, round_loads, stage_granularity
from partel.cost_model import latency_breakdown, validate_plan
from partel.oracle import convexity_probe
from partel.report import compare_schemes, mean_with_ci, write_results_csv
from partel.scenario import SystemConfig, generate_scenario, reference_scenario, scenario_from_dict
from partel.sim import DecomposableModel, SyntheticDataset, centralized_reference, run_partel
from partel.solver import (max_model_size, min_latency, optimal_rate, optimal_subcarrier_load,
                           optimal_worker_load, solve_support)

GOLDEN = Path(__file__).parent / "golden"
VERDICTS = []

# tolerances
EQUAL_LATENCY_TOL = 1e-6
EQUAL_LATENCY_BUDGET_S = 60.0
ORACLE_GAP = 0.02
ORACLE_REFINE = 0.01
PROBE_TOL = 1e-9
IDENTITY_TOL = 1e-12
ROUNDING_GAP = 0.05
LEMMA7_SLACK = 1e-12       # realized latency equals the bound up to one ulp at the cutoff worker
LEMMA1_TOL = 1e-9
DESK = dict(K=10, N=16)
PAPER_SCALE = dict(K=50, N=80, L=1.24e6)


def verdict(num, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {num}: {detail}"
    VERDICTS.append(line)
    print(line)
    return ok


def desk(seed, **kw):
    return generate_scenario(DESK["K"], SystemConfig(num_subcarriers=DESK["N"], **kw), seed=seed)


def test_01_equal_latency():
    t0 = time.perf_counter()
    worst, unconverged, checked = 0.0, 0, 0
    for seed in range(50):
        s = desk(seed)
        res = min_latency(s, 1.24e6)
        if not res.converged:
            unconverged += 1
            continue
        p = res.plan
        t_cmp, t_sub, _, _ = latency_breakdown(p, s)
        on = (p.assignment > 0) & (p.loads > 0)[:, None]
        dev = np.abs(t_cmp[:, None] + t_sub - p.latency)[on] / p.latency
        worst = max(worst, float(dev.max()))
        checked += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= EQUAL_LATENCY_TOL and elapsed < EQUAL_LATENCY_BUDGET_S and checked > 0
    verdict(1, ok, f"equal latency, worst deviation {worst:.2e} over {checked} converged solves "
                   f"({unconverged} unconverged), {elapsed:.1f}s")
    assert ok


def test_02_monotone_model_size():
    violations, worst_drop = 0, 0.0
    grid = np.geomspace(0.02, 20.0, 20)
    for seed in range(20):
        s = desk(seed)
        vals = [max_model_size(s, T).achieved_model_size for T in grid]
        for a, b in zip(vals, vals[1:]):
            if b < a:
                violations += 1
                worst_drop = max(worst_drop, (a - b) / a)
    ok = violations == 0
    verdict(2, ok, f"updatable size nondecreasing on 20 T points x 20 seeds, {violations} violations "
                   f"(worst relative drop {worst_drop:.1e})")
    assert ok


def test_03_oracle_gap():
    ref = json.loads((GOLDEN / "reference_k2n2.json").read_text())
    cases = [ref] + json.loads((GOLDEN / "oracle_tiny.json").read_text())
    gaps, refine = [], []
    for c in cases:
        s = scenario_from_dict(c["scenario"])
        T = solve_support(s, c["model_size"]).latency
        gaps.append(abs(T - c["latency"]) / c["latency"])
        refine.append(abs(c["latency_refined"] - c["latency"]) / c["latency"])
    ok = len(cases) == 20 and max(gaps) <= ORACLE_GAP and max(refine) <= ORACLE_REFINE
    verdict(3, ok, f"{len(cases)} tiny scenarios, worst |T_solver - T_oracle|/T_oracle {max(gaps):.2%}, "
                   f"worst grid-refinement change {max(refine):.1e}")
    assert ok


def test_04_convexity_probe():
    rep = convexity_probe(reference_scenario(), 11.0, trials=1000, seed=0, tol=PROBE_TOL)
    control = convexity_probe(reference_scenario(), 11.0, trials=200, seed=0, tol=PROBE_TOL, corrupt=True)
    ok = rep.violations == 0 and control.violations > 0
    verdict(4, ok, f"1000 convex combinations, {rep.feasibility_violations} feasibility and "
                   f"{rep.objective_violations} objective violations (worst {rep.worst_violation:.1e}); "
                   f"corrupted control flagged {control.violations}/200")
    assert ok


def test_05_closed_form_identity():
    # dual states: converged multipliers of random instances, each perturbed by up to 10x either way
    rng = np.random.default_rng(0)
    eps = np.finfo(float).eps
    worst, states, mismatched = 0.0, 0, 0
    kinds = {"interior": 0, "compute-bound": 0, "priced out": 0}
    for seed in range(100):
        s = desk(seed)
        c = s.config
        T = float(np.exp(rng.uniform(np.log(0.05), np.log(5.0))))
        d = max_model_size(s, T).duals
        for _ in range(100):
            k = int(rng.integers(s.num_workers))
            lam = d.lam[k] * 10.0 ** rng.uniform(-1, 1)
            nu = d.nu[k] * 10.0 ** rng.uniform(-1, 1)
            w, h = s.workers[k], s.channels[k]
            Lk = optimal_worker_load(T, lam, nu, w)
            R = optimal_rate(lam, nu, h, c.bandwidth, c.bits_per_param, c.noise_power)
            direct = optimal_subcarrier_load(T, lam, nu, w, h, c.bandwidth, c.bits_per_param, c.noise_power)
            rebuilt = R * (T - Lk / w.speed) / c.bits_per_param
            states += 1
            if Lk == 0:
                kinds["priced out"] += 1
                mismatched += int(np.any(direct != 0))
            elif Lk == w.speed * T:
                # no upload wait: both sides vanish, the rebuilt one up to round-off of T - T
                kinds["compute-bound"] += 1
                mismatched += int(np.any(direct != 0) or np.any(np.abs(rebuilt) > 4 * eps * R * T / c.bits_per_param))
            else:
                kinds["interior"] += 1
                nz = rebuilt != 0
                mismatched += int(np.any(direct[~nz] != 0))
                worst = max(worst, float(np.max(np.abs(direct[nz] - rebuilt[nz]) / np.abs(rebuilt[nz]),
                                                initial=0.0)))
    ok = states == 10_000 and worst <= IDENTITY_TOL and mismatched == 0
    counts = ", ".join(f"{v} {k}" for k, v in kinds.items())
    verdict(5, ok, f"{states} dual states ({counts}), worst relative difference {worst:.1e}, "
                   f"{mismatched} zero-pattern mismatches")
    assert ok


def test_06_scheme_dominance():
    cfg = SystemConfig(num_subcarriers=PAPER_SCALE["N"], model_size=PAPER_SCALE["L"])
    red_base, red_feel, fails, round_gaps = [], [], [], []
    for seed in range(50):
        s = generate_scenario(PAPER_SCALE["K"], cfg, seed=seed)
        sup = solve_support(s)
        base = proportional_baseline(s)
        feel = greedy_feel(s)
        if not (sup.latency <= base.latency and sup.latency <= feel.latency):
            fails.append(seed)
        red_base.append((base.latency - sup.latency) / base.latency)
        red_feel.append((feel.latency - sup.latency) / feel.latency)
        round_gaps.append(sup.latency / sup.info["relaxed_latency"] - 1)
    mb, hb = mean_with_ci(red_base)
    mf, hf = mean_with_ci(red_feel)
    ok = not fails and mb > 0
    verdict(6, ok, f"SUPPORT <= baseline and <= greedy FEEL on {50 - len(fails)}/50 seeds; mean reduction "
                   f"vs baseline {mb:.2%} +/- {hb:.2%}, vs greedy FEEL {mf:.2%} +/- {hf:.2%}; "
                   f"rounding gap over relaxed max {max(round_gaps):.2%} (envelope {ROUNDING_GAP:.0%})")
    assert ok
    assert max(round_gaps) <= ROUNDING_GAP
    assert min(round_gaps) >= -1e-6


def _medians(values, make, measure):
    """Median over 20 seeds of every quantity ``measure`` returns, per value."""
    out = {}
    for v in values:
        rows = [measure(make(v, seed)) for seed in range(20)]
        for key in rows[0]:
            out.setdefault(key, []).append(float(np.median([r[key] for r in rows])))
    return out


def _decomposable(s):
    return {"T*": solve_support(s, 1.24e6).latency}


def _cnn(s):
    res = plan_cnn_round(s, CnnShape.lenet5())
    return {"W T*": res.w_stage.rounding.base_latency, "Z T*": res.z_stage.rounding.base_latency,
            "rounded W+Z": res.latency}


def test_07_trends():
    Ks, Ns = [10, 20, 30, 40, 50], [40, 50, 60, 70, 80]
    curves = {}
    for name, vals, make, measure in [
        ("decomposable/K", Ks, lambda K, sd: generate_scenario(K, SystemConfig(num_subcarriers=80), seed=sd),
         _decomposable),
        ("decomposable/N", Ns, lambda N, sd: generate_scenario(50, SystemConfig(num_subcarriers=N), seed=sd),
         _decomposable),
        ("cnn/K", Ks, lambda K, sd: generate_scenario(K, SystemConfig(num_subcarriers=50), seed=sd), _cnn),
        ("cnn/N", Ns, lambda N, sd: generate_scenario(30, SystemConfig(num_subcarriers=N), seed=sd), _cnn),
    ]:
        for key, curve in _medians(vals, make, measure).items():
            curves[f"{name} {key}"] = curve
    # the gate is the optimal latency T* of each run; the post-rounding CNN round latency is recorded
    gated = {k: v for k, v in curves.items() if "T*" in k}
    nonincreasing = {k: all(b <= a for a, b in zip(v, v[1:])) for k, v in curves.items()}
    ok = all(nonincreasing[k] for k in gated)

    def fmt(k, v):
        tag = "" if nonincreasing[k] else " NOT monotone"
        return f"{k} [{', '.join(f'{x:.4g}' for x in v)}]{tag}"

    verdict(7, ok, "median T* nonincreasing, 20 seeds per point: "
                   + "; ".join(fmt(k, v) for k, v in gated.items())
                   + " | recorded, not gated: " + "; ".join(fmt(k, v) for k, v in curves.items() if k not in gated))
    assert ok


def test_08_cnn_rounding():
    rounded, _, _, ind, order, cutoff = round_loads([230, 370, 400], 100)
    hand = rounded.tolist() == [200, 400, 400] and cutoff == 2 and round(float(ind[order[cutoff - 1]]), 4) == 0.0811
    shape = CnnShape.lenet5()
    assert stage_granularity(shape, "W").subproblems == 226
    violations, worst_ratio, plans = 0, 0.0, 0
    for seed in range(50):
        s = generate_scenario(30, SystemConfig(num_subcarriers=50), seed=seed)
        res = plan_cnn_round(s, shape)
        for st in (res.w_stage, res.z_stage):
            plans += 1
            unit, rp = st.granularity.unit, st.rounding
            q = st.plan.loads / unit
            bound = rp.base_latency * (1 + rp.cutoff_indicator)
            bad = (np.any(np.abs(q - np.round(q)) > 1e-9)
                   or st.plan.loads.sum() < st.granularity.total * (1 - 1e-12)
                   or st.plan.latency > bound * (1 + LEMMA7_SLACK)
                   or not validate_plan(st.plan, s, granularity=unit).feasible)
            violations += int(bad)
            worst_ratio = max(worst_ratio, st.plan.latency / bound)
    ok = hand and violations == 0
    verdict(8, ok, f"hand trace {'matches' if hand else 'differs'}; {plans} stage plans on 50 scenarios, "
                   f"{violations} violations, max realized/bound {worst_ratio:.15f}")
    assert ok


def test_09_lemma1_equivalence():
    M, L, rounds = 1000, 2000, 50
    worst, dominated, seeds = 0.0, 0, range(3)
    for seed in seeds:
        data = SyntheticDataset.generate(M, L, seed=seed)
        s = generate_scenario(10, SystemConfig(num_subcarriers=16, model_size=L), seed=seed)
        make = lambda: DecomposableModel.zeros(L, regularizer="l1", strength=1e-5, step_scale=4.0)
        _, w_ref = centralized_reference(make(), data, rounds)
        scale = max(float(np.max(np.abs(w_ref))), 1e-300)
        traces = {}
        for planner in ("support", "baseline", "greedy-feel"):
            traces[planner] = tr = run_partel(make(), data, s, planner, rounds, seed=seed)
            worst = max(worst, float(np.max(np.abs(tr.weights - w_ref))) / scale)
        sup, base = traces["support"], traces["baseline"]
        same_losses = np.allclose(sup.loss, base.loss, rtol=1e-9, atol=0)
        if same_losses and np.all(sup.cumulative_latency <= base.cumulative_latency):
            dominated += 1
    ok = worst <= LEMMA1_TOL and dominated == len(seeds)
    verdict(9, ok, f"distributed vs centralized weights after {rounds} rounds, worst relative difference "
                   f"{worst:.1e} across 3 planners x {len(seeds)} seeds; SUPPORT curve dominates baseline on "
                   f"{dominated}/{len(seeds)} seeds")
    assert ok


def _cli_bytes(argv, tmp_path, tag):
    out = tmp_path / f"{tag}.csv"
    side = tmp_path / f"{tag}.json"
    args = argv + ["--out", str(out)]
    if argv[0] in ("compare", "plan-cnn"):
        args += ["--sidecar", str(side)]
    with redirect_stdout(io.StringIO()):
        code = cli_main(args)
    assert code == 0
    return out.read_bytes() + (side.read_bytes() if side.exists() else b"")


def test_10_determinism(tmp_path):
    commands = [
        ["compare", "-K", "10", "-N", "16", "--seed", "4"],
        ["sweep", "--axis", "workers", "--values", "5,10", "--seeds", "0-2", "-N", "16"],
        ["simulate", "-K", "10", "-N", "16", "--dim", "300", "--samples", "100", "--rounds", "5",
         "--schemes", "support,baseline,greedy-feel"],
        ["plan-cnn", "-K", "10", "-N", "20", "--seed", "1"],
    ]
    same = 0
    for i, argv in enumerate(commands):
        a = _cli_bytes(argv, tmp_path, f"a{i}")
        b = _cli_bytes(argv, tmp_path, f"b{i}")
        same += int(a == b)
    s = desk(7)
    text = [write_results_csv(compare_schemes(s, 1.24e6)) for _ in range(2)]
    same += int(text[0] == text[1])
    ok = same == len(commands) + 1
    verdict(10, ok, f"{same}/{len(commands) + 1} repeated report pairs byte-identical")
    assert ok


def test_11_scaling_record():
    Ks, times = [10, 20, 40, 80], []
    for K in Ks:
        s = generate_scenario(K, SystemConfig(num_subcarriers=80), seed=0)
        T = 1.24e6 / s.speeds.sum() * 4
        best = math.inf
        for _ in range(3):
            t0 = time.perf_counter()
            max_model_size(s, T)
            best = min(best, time.perf_counter() - t0)
        times.append(best)
    slope = float(np.polyfit(np.log(Ks), np.log(times), 1)[0])
    within = slope <= 2.0
    line = (f"RECORD criterion 11: fixed-T solve wall time at N=80 for K={Ks}: "
            f"[{', '.join(f'{t * 1e3:.1f}ms' for t in times)}], log-log slope {slope:.2f} "
            f"({'within' if within else 'above'} quadratic; not gating)")
    VERDICTS.append(line)
    print(line)
