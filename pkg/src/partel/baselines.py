"""Comparison schemes: compute-proportional loads, and greedy subcarrier assignment with full-model uploads."""
from __future__ import annotations

import logging
import math
from dataclasses import replace

import numpy as np

from . import _kernel as kern
from .cost_model import AllocationPlan
from .errors import InfeasibleError
from .scenario import Scenario
from .solver import (SolveResult, SolverOptions, _spg, argmax_rounding,
                     resolve_with_fixed_assignment)

log = logging.getLogger(__name__)


def proportional_loads(speeds, L) -> np.ndarray:
    """Integer loads proportional to compute speed, summing to ceil(L) (largest remainder, lowest index first)."""
    total = int(math.ceil(L))
    exact = total * np.asarray(speeds, dtype=float) / np.sum(speeds)
    base = np.floor(exact)
    rest = total - int(base.sum())
    order = np.argsort(-(exact - base), kind="stable")
    base[order[:rest]] += 1
    return base


def _relaxed_capped_assignment(scenario, rows, caps, opts, rel_tol=1e-3, iterations=60):
    """Fractional assignment near the smallest T where every worker can meet its fixed load.

    The capped total load is concave but kinked at the caps, so the duality
    gap does not certify infeasibility; each probe gets a fixed iteration
    budget instead. The result only seeds the rounding, so an approximate T
    is enough.
    """
    K, N = scenario.channels.shape
    loaded = caps > 0
    need = float(caps.sum())
    T_lo = max(scenario.latency_floor, float(np.max(caps[loaded] / rows.f[loaded])))
    T_hi = T_lo * opts.bracket_growth
    C = np.full((K, N), 1.0 / K)
    spg_opts = replace(opts, max_iterations=iterations)

    def predicate(T):
        nonlocal C
        ev, _, _, ok = _spg(rows, T, C, spg_opts, caps=caps, target=need * (1 - 1e-12))
        C = ev.C
        return ok

    doublings = 0
    while not predicate(T_hi):
        T_lo, T_hi = T_hi, T_hi * opts.bracket_growth
        doublings += 1
        if doublings > opts.max_doublings:
            raise InfeasibleError("fixed loads cannot be met at any latency")
    C_hi = C.copy()
    while T_hi - T_lo > rel_tol * T_hi:
        T_mid = 0.5 * (T_lo + T_hi)
        if predicate(T_mid):
            T_hi, C_hi = T_mid, C.copy()
        else:
            T_lo = T_mid
    return C_hi, T_hi


def _repair_starved(C, loads, C_rel, h):
    """Give every loaded worker without a subcarrier one from a worker that owns several."""
    C = C.copy()
    for k in np.flatnonzero((loads > 0) & (C.sum(axis=1) == 0)):
        owners = np.argmax(C, axis=0)
        spare = (C.sum(axis=1)[owners] >= 2) | (loads[owners] == 0)
        if not np.any(spare):
            raise InfeasibleError("fewer subcarriers than loaded workers")
        score = np.where(spare, C_rel[k] + 1e-12 * h[k] / h[k].max(), -np.inf)
        n = int(np.argmax(score))
        C[owners[n], n] = 0.0
        C[k, n] = 1.0
    return C


def bottleneck_search(rows, C, loads, max_moves: int = 10_000):
    """Move single subcarriers to the slowest worker while that shortens the round."""
    C = C.copy()
    K, N = C.shape
    lat = kern.min_latency_for_load(loads, C, rows).latency
    cols = np.arange(N)
    moves = 0
    while moves < max_moves:
        b = int(np.argmax(lat))
        owner = np.argmax(C, axis=0)
        count = C.sum(axis=1)
        cand = (owner != b) & ((count[owner] >= 2) | (loads[owner] == 0))
        if not np.any(cand):
            break
        ns = cols[cand]
        a = owner[ns]
        add = np.repeat(C[b][None, :], ns.size, axis=0)
        add[np.arange(ns.size), ns] = 1.0
        rem = C[a].copy()
        rem[np.arange(ns.size), ns] = 0.0
        t_b = kern.min_latency_for_load(loads[b], add, rows.take(np.full(ns.size, b))).latency
        t_a = kern.min_latency_for_load(loads[a], rem, rows.take(a)).latency
        M = np.repeat(lat[None, :], ns.size, axis=0)
        M[np.arange(ns.size), a] = t_a
        M[:, b] = t_b
        new = M.max(axis=1)
        i = int(np.argmin(new))
        if not new[i] < lat[b] * (1 - 1e-12):
            break
        n = ns[i]
        C[a[i], n], C[b, n] = 0.0, 1.0
        lat = M[i]
        moves += 1
    return C, moves


def proportional_baseline(scenario: Scenario, L: float | None = None, opts: SolverOptions | None = None,
                          refine: bool | None = None) -> SolveResult:
    """Loads fixed in proportion to compute speed; assignment, rates and powers optimized for them."""
    opts = opts or SolverOptions()
    refine = opts.refine if refine is None else refine
    L = scenario.config.model_size if L is None else L
    rows = kern.Rows.from_scenario(scenario)
    loads = proportional_loads(scenario.speeds, L)
    K, N = scenario.channels.shape
    if np.count_nonzero(loads) > N:
        raise InfeasibleError("fewer subcarriers than loaded workers")
    C_rel, T_rel = _relaxed_capped_assignment(scenario, rows, loads, opts)
    op = kern.load_point(T_rel, C_rel, rows, loads)
    C = argmax_rounding(C_rel, op.sub_loads(C_rel, rows))
    C = _repair_starved(C, loads, C_rel, scenario.channels)
    moves = 0
    if refine:
        C, moves = bottleneck_search(rows, C, loads)
    out = resolve_with_fixed_assignment(scenario, C, L, opts, loads=loads)
    out.info.update({"relaxed_latency": T_rel, "refine_moves": moves})
    return out


def greedy_feel(scenario: Scenario, L: float | None = None, opts: SolverOptions | None = None) -> SolveResult:
    """Every worker computes and uploads the whole model; subcarriers go, in index order,
    to whichever worker is currently slowest (lowest index on ties)."""
    L = scenario.config.model_size if L is None else L
    rows = kern.Rows.from_scenario(scenario)
    K, N = scenario.channels.shape
    loads = np.full(K, float(L))
    C = np.zeros((K, N))
    lat = np.full(K, np.inf)
    for n in range(N):
        k = int(np.argmax(lat))
        C[k, n] = 1.0
        new = float(kern.min_latency_for_load(loads[k:k + 1], C[k:k + 1], rows.take([k])).latency[0])
        # a subcarrier whose gain lies below the worker's water level stays
        # unused, so the latency can stay put; it must never grow
        if new > lat[k] * (1 + 1e-12):
            raise AssertionError(f"latency of worker {k} grew after gaining subcarrier {n}")
        lat[k] = new
    if np.any(C.sum(axis=1) == 0):
        # more workers than subcarriers: the round never completes
        z = np.zeros((K, N))
        plan = AllocationPlan(C, loads, z, z, float("inf"), float(L))
        return SolveResult(plan, None, float(L), 0, False, {"worker_latency": lat})
    out = resolve_with_fixed_assignment(scenario, C, L, opts, loads=loads)
    out = SolveResult(out.plan, None, float(L), N, True, out.info)
    return out
