"""Joint subcarrier, power and parameter allocation for minimum round latency.

The relaxed problem (fractional subcarrier shares) is solved at fixed T by
maximizing the total updatable model size over the assignment; the inner
per-worker problems are solved exactly through their optimality conditions
(water-filling rates, load split, and the multipliers that go with them).
An outer bisection on T finds the smallest latency at which the target model
size fits, and a rounding step plus an exact re-solve produce a binary plan.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from . import _kernel as kern
from .cost_model import AllocationPlan, realized_latency
from .errors import DegenerateDualError, InfeasibleError, ValidationError
from .scenario import Scenario, WorkerProfile

log = logging.getLogger(__name__)
LN2 = math.log(2.0)
NU_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# closed-form policies at given multipliers
# ---------------------------------------------------------------------------

def water_level(lam, nu, B, tau):
    """lambda*B/(nu*tau*ln2), the common level of power + noise floor (W)."""
    nu = np.asarray(nu, dtype=float)
    if np.any(nu <= 0):
        raise DegenerateDualError("power multiplier must be positive")
    return np.asarray(lam, dtype=float) * B / (nu * tau * LN2)


def optimal_rate(lam, nu, h, B, tau, sigma2):
    """Water-filling rate (bits/s); zero where the level is below the noise floor."""
    w = water_level(lam, nu, B, tau)
    with np.errstate(divide="ignore"):
        r = B * (np.log2(w) + np.log2(np.asarray(h, dtype=float) / sigma2))
    return np.maximum(r, 0.0)


def optimal_power(lam, nu, h, B, tau, sigma2):
    """Water-filling power (W): level minus noise floor, clamped at zero."""
    w = water_level(lam, nu, B, tau)
    return np.maximum(w - sigma2 / np.asarray(h, dtype=float), 0.0)


def _worker_arrays(worker):
    if isinstance(worker, WorkerProfile):
        return worker.speed, worker.power_factor, worker.power_cap
    f, g, P = worker
    return np.asarray(f, dtype=float), np.asarray(g, dtype=float), np.asarray(P, dtype=float)


def load_discriminant(T, lam, nu, worker, xi=0.0):
    """lambda*T + nu*g*f^2*T - nu*(P*T - xi)/f, the squared upload time at the optimum."""
    f, g, P = _worker_arrays(worker)
    return lam * T + nu * g * f * f * T - nu * (P * T - xi) / f


def optimal_worker_load(T, lam, nu, worker, xi=0.0):
    """Optimal block size f*(T - sqrt(D)) for discriminant D.

    D >= T^2 prices the worker out (load 0). D <= 0 means the multipliers put
    no cost on upload time, and the load saturates at its limit f*T.
    """
    f, _, _ = _worker_arrays(worker)
    D = load_discriminant(T, lam, nu, worker, xi)
    L = (T - np.sqrt(np.maximum(D, 0.0))) * f
    return np.clip(L, 0.0, f * T)


def optimal_subcarrier_load(T, lam, nu, worker, h, B, tau, sigma2, xi=0.0):
    """Parameters uploaded on one subcarrier: sqrt(D)/tau times the optimal rate.

    A priced-out worker (D >= T^2) carries no load and uploads nothing.
    """
    D = load_discriminant(T, lam, nu, worker, xi)
    L = np.sqrt(np.maximum(D, 0.0)) / tau * optimal_rate(lam, nu, h, B, tau, sigma2)
    return np.where(D >= np.square(T), 0.0, L)


def subcarrier_indicator(nu, h, B, R, sigma2):
    """Assignment score of a subcarrier; lower is better, zero for an unused one."""
    x = np.asarray(R, dtype=float) / B
    return nu * sigma2 / np.asarray(h, dtype=float) * (np.expm1(x * LN2) - x * np.exp2(x) * LN2)


def assign_subcarriers(I):
    """Give each subcarrier to its minimum-score worker, splitting exact ties evenly."""
    I = np.asarray(I, dtype=float)
    if not np.all(np.isfinite(I)):
        raise ValidationError("scores must be finite")
    winners = I == I.min(axis=0, keepdims=True)
    return winners / winners.sum(axis=0, keepdims=True)


# ---------------------------------------------------------------------------
# result types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DualState:
    lam: np.ndarray       # upload-constraint multipliers, per worker
    nu: np.ndarray        # power multipliers, per worker
    mu: np.ndarray        # per-subcarrier assignment multipliers (min score)
    phi: np.ndarray       # 1/(T - L_k/f_k), per worker
    rtilde: np.ndarray    # share-weighted rates C*R
    assignment: np.ndarray

    def to_dict(self):
        return {k: np.asarray(getattr(self, k)).tolist() for k in ("lam", "nu", "mu", "phi")}


@dataclass(frozen=True)
class SolverOptions:
    method: str = "spg"            # "spg" or "dual-ascent"
    step_lambda: float = 0.5       # dual-ascent step scale for lambda
    step_nu: float = 0.5           # dual-ascent step scale for nu
    max_iterations: int = 5000
    inner_tol: float = 1e-7        # relative duality gap (spg) / relative change (dual ascent)
    patience: int = 20             # dual ascent: iterations the change must stay below tol
    bisection_tol: float = 1e-6    # relative width of the final latency bracket
    bracket_growth: float = 2.0
    max_doublings: int = 60
    refine: bool = True            # local search after rounding

    def __post_init__(self):
        if self.method not in ("spg", "dual-ascent"):
            raise ValidationError(f"unknown method {self.method!r}")
        for name in ("step_lambda", "step_nu", "max_iterations", "inner_tol", "patience",
                     "bisection_tol", "max_doublings"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if not self.bracket_growth > 1:
            raise ValidationError("bracket_growth must exceed 1")


@dataclass(frozen=True, eq=False)
class SolveResult:
    plan: AllocationPlan
    duals: DualState | None
    achieved_model_size: float
    iterations: int
    converged: bool
    info: dict = field(default_factory=dict)

    @property
    def latency(self) -> float:
        return self.plan.latency

    def to_dict(self) -> dict:
        out = {"latency": self.plan.latency, "achieved_model_size": self.achieved_model_size,
               "iterations": self.iterations, "converged": self.converged,
               "plan": self.plan.to_dict()}
        if self.duals is not None:
            out["duals"] = self.duals.to_dict()
        return out


def dual_residuals(duals: DualState, scenario: Scenario, T: float):
    """Partial derivatives of the Lagrangian in (lambda, nu): upload and energy slack."""
    cfg = scenario.config
    f, g, P = scenario.speeds, scenario.power_factors, scenario.power_caps
    C, Rt, phi = duals.assignment, duals.rtilde, duals.phi
    with np.errstate(divide="ignore", invalid="ignore"):
        R = np.where(C > 0, Rt / C, 0.0)
    r_lam = f * (T * phi - 1.0) - Rt.sum(axis=1) / cfg.bits_per_param
    p = C * cfg.noise_power * np.expm1(R / cfg.bandwidth * LN2) / scenario.channels
    r_nu = p.sum(axis=1) + g * f ** 3 * (T * phi - 1.0) - (P * T - cfg.circuit_energy) * phi
    return r_lam, r_nu


# ---------------------------------------------------------------------------
# evaluation of an assignment at fixed T
# ---------------------------------------------------------------------------

@dataclass
class _Eval:
    C: np.ndarray
    T: float
    point: kern.WorkerPoint
    lam: np.ndarray
    nu: np.ndarray
    value: np.ndarray     # marginal model size per unit share (K x N)
    total: float          # sum of (capped) loads
    certifiable: bool     # value is a true supergradient


def _subcarrier_values(point, lam, nu, rows):
    """lambda*R/tau - nu*P for every (worker, subcarrier), assigned or not."""
    u = np.where(np.isfinite(point.u), point.u, -np.inf)[:, None]
    x = np.maximum(u + rows.a, 0.0)
    w = np.exp(np.minimum(u, kern.U_MAX))
    R = x * rows.bandwidth / LN2
    p = np.maximum(w - rows.floor, 0.0)
    return lam[:, None] * R / rows.tau - nu[:, None] * p


def _evaluate(rows, C, T, caps=None, start=None) -> _Eval:
    point = kern.max_load(T, C, rows, start=start)
    lam, nu = kern.multipliers(point, rows, C)
    V = _subcarrier_values(point, lam, nu, rows)
    loads = point.loads
    if caps is not None:
        capped = loads >= caps
        V = np.where(capped[:, None], 0.0, V)
        loads = np.minimum(loads, caps)
    idle = (C.sum(axis=1) <= 0) & (rows.P * T > rows.xi)
    if caps is not None:
        idle &= caps > 0
    certifiable = not np.any(idle)
    if not certifiable:
        # the marginal value of a first share is unbounded; any large value
        # pushes the ascent to hand the worker some share back
        V = np.where(idle[:, None], 2.0 * np.abs(V).max(axis=0, keepdims=True) + 1.0, V)
    return _Eval(C, float(T), point, lam, nu, V, float(loads.sum()), certifiable)


def _duality_gap(ev: _Eval) -> float:
    """Frank-Wolfe gap: upper bound on (optimum - current) for the concave total load."""
    return float(ev.value.max(axis=0).sum() - (ev.C * ev.value).sum())


def project_columns(Y):
    """Euclidean projection of every column onto the probability simplex."""
    K = Y.shape[0]
    U = -np.sort(-Y, axis=0)
    css = np.cumsum(U, axis=0) - 1.0
    idx = np.arange(1, K + 1)[:, None]
    cond = U - css / idx > 0
    r = K - 1 - np.argmax(cond[::-1], axis=0)
    theta = css[r, np.arange(Y.shape[1])] / (r + 1)
    return np.maximum(Y - theta, 0.0)


def _spg(rows, T, C0, opts: SolverOptions, caps=None, target=None, M=5):
    """Spectral projected gradient ascent on the assignment shares.

    Stops on a relative duality gap below ``opts.inner_tol``; with ``target``
    it stops as soon as the target is certified reachable (total >= target) or
    unreachable (total + gap < target).
    Returns (evaluation, iterations, converged, verdict).
    """
    ev = _evaluate(rows, project_columns(C0), T, caps)
    history = [ev.total]
    step = 1.0 / max(np.abs(ev.value).max(), 1e-300)
    for it in range(1, opts.max_iterations + 1):
        gap = _duality_gap(ev)
        if target is not None:
            if ev.total >= target:
                return ev, it, True, True
            if ev.certifiable and ev.total + gap < target:
                return ev, it, True, False
        if ev.certifiable and gap <= opts.inner_tol * max(ev.total, 1e-300):
            return ev, it, True, None if target is None else ev.total >= target
        D = project_columns(ev.C + step * ev.value) - ev.C
        slope = float((ev.value * D).sum())
        if slope <= 0:
            # no ascent direction left at this step size; numerically optimal
            return ev, it, True, None if target is None else ev.total >= target
        ref = max(history[-M:])
        t = 1.0
        while True:
            cand = _evaluate(rows, ev.C + t * D, T, caps, start=ev.point.u)
            if cand.total >= ref + 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        s = cand.C - ev.C
        sy = -float((s * (cand.value - ev.value)).sum())
        ss = float((s * s).sum())
        step = ss / sy if sy > 0 else step * 4.0
        step = min(max(step, 1e-30), 1e30)
        ev = cand
        history.append(ev.total)
    verdict = None if target is None else ev.total >= target
    return ev, opts.max_iterations, False, verdict


def _duals_from_eval(ev: _Eval, rows, scenario) -> DualState:
    cfg = scenario.config
    C = ev.C
    R = ev.point.rates(C, rows)
    u = np.where(np.isfinite(ev.point.u), ev.point.u, -np.inf)[:, None]
    R_all = np.maximum(u + rows.a, 0.0) * rows.bandwidth / LN2
    I = subcarrier_indicator(ev.nu[:, None], scenario.channels, cfg.bandwidth, R_all, cfg.noise_power)
    with np.errstate(divide="ignore"):
        phi = 1.0 / ev.point.upload_time
    return DualState(ev.lam, ev.nu, I.min(axis=0), phi, C * R, C)


def _plan_from_point(point, C, rows, T, L, loads=None) -> AllocationPlan:
    return AllocationPlan(C, point.loads if loads is None else loads, point.sub_loads(C, rows),
                          point.rates(C, rows), T, L)


def _check_latency(scenario, T):
    if T < scenario.latency_floor:
        raise InfeasibleError(
            f"latency {T!r} is below the circuit-energy floor {scenario.latency_floor!r}")


# ---------------------------------------------------------------------------
# relaxed problem
# ---------------------------------------------------------------------------

def max_model_size(scenario: Scenario, T: float, opts: SolverOptions | None = None,
                   init: np.ndarray | None = None) -> SolveResult:
    """Largest total model size all workers can update and upload within T (relaxed shares)."""
    opts = opts or SolverOptions()
    _check_latency(scenario, T)
    rows = kern.Rows.from_scenario(scenario)
    K, N = scenario.channels.shape
    C0 = np.full((K, N), 1.0 / K) if init is None else np.asarray(init, dtype=float)
    if opts.method == "dual-ascent":
        return dual_ascent(scenario, T, opts)
    ev, iters, conv, _ = _spg(rows, T, C0, opts)
    plan = _plan_from_point(ev.point, ev.C, rows, T, float("nan"))
    return SolveResult(plan, _duals_from_eval(ev, rows, scenario), ev.total, iters, conv,
                       {"gap": _duality_gap(ev) if ev.certifiable else float("inf"), "method": "spg"})


def dual_ascent(scenario: Scenario, T: float, opts: SolverOptions | None = None) -> SolveResult:
    """Projected dual ascent on (lambda, nu) with closed-form primal recovery.

    The assignment is recovered as the running average of the per-iteration
    score minimizers, then evaluated exactly so the returned plan is feasible.
    Slower and less accurate than the default method on large instances; kept
    as a faithful reference of the multiplier-update scheme.
    """
    opts = opts or SolverOptions(method="dual-ascent")
    _check_latency(scenario, T)
    cfg = scenario.config
    rows = kern.Rows.from_scenario(scenario)
    K, N = scenario.channels.shape
    worker = (scenario.speeds, scenario.power_factors, scenario.power_caps)
    xi = cfg.circuit_energy
    h = scenario.channels
    # start from the exact multipliers of an even split
    start = _evaluate(rows, np.full((K, N), 1.0 / K), T)
    lam = np.maximum(start.lam, NU_FLOOR)
    nu = np.maximum(start.nu, NU_FLOOR)
    C_avg = np.zeros((K, N))
    eta_lam = eta_nu = None
    prev, calm, total = None, 0, 0.0
    it = 0
    for it in range(1, opts.max_iterations + 1):
        R = optimal_rate(lam[:, None], nu[:, None], h, cfg.bandwidth, cfg.bits_per_param, cfg.noise_power)
        I = subcarrier_indicator(nu[:, None], h, cfg.bandwidth, R, cfg.noise_power)
        C = assign_subcarriers(I)
        L = optimal_worker_load(T, lam, nu, worker, xi)
        s = T - L / scenario.speeds
        with np.errstate(divide="ignore"):
            phi = np.where(s > 0, 1.0 / s, np.inf)
        duals = DualState(lam, nu, I.min(axis=0), phi, C * R, C)
        with np.errstate(invalid="ignore"):
            # saturated workers (phi = inf) give non-finite residuals, zeroed below
            r_lam, r_nu = dual_residuals(duals, scenario, T)
        r_lam = np.where(np.isfinite(r_lam), r_lam, 0.0)
        r_nu = np.where(np.isfinite(r_nu), r_nu, 0.0)
        if eta_lam is None:
            eta_lam = opts.step_lambda * lam / np.maximum(np.abs(r_lam), 1e-300)
            eta_nu = opts.step_nu * nu / np.maximum(np.abs(r_nu), 1e-300)
        # the upload residual is positive when the promised load exceeds what is uploaded
        lam = np.maximum(lam + eta_lam / math.sqrt(it) * r_lam, 0.0)
        nu = np.maximum(nu + eta_nu / math.sqrt(it) * r_nu, NU_FLOOR)
        C_avg += (C - C_avg) / it
        total = float(L.sum())
        if prev is not None and abs(total - prev) <= opts.inner_tol * max(abs(prev), 1e-300):
            calm += 1
            if calm >= opts.patience:
                break
        else:
            calm = 0
        prev = total
    ev = _evaluate(rows, C_avg, T)
    plan = _plan_from_point(ev.point, ev.C, rows, T, float("nan"))
    return SolveResult(plan, _duals_from_eval(ev, rows, scenario), ev.total, it,
                       calm >= opts.patience, {"method": "dual-ascent", "dual_estimate": total})


def _zero_result(scenario, L, T):
    K, N = scenario.channels.shape
    z = np.zeros((K, N))
    C = np.zeros((K, N))
    C[0, :] = 1.0
    plan = AllocationPlan(C, np.zeros(K), z, z, T, L)
    return SolveResult(plan, None, 0.0, 0, True, {"relaxed_latency": T})


def min_latency(scenario: Scenario, L: float, opts: SolverOptions | None = None) -> SolveResult:
    """Smallest T whose relaxed updatable model size reaches L, by bisection on T.

    The bracket is seeded from a converged solve at the compute-bound latency
    L/sum(f): the total load is homogeneous in T when circuit energy is zero,
    which makes the scaled guess exact in that case and a good start otherwise.
    """
    opts = opts or SolverOptions()
    floor = scenario.latency_floor
    if L <= 0:
        return _zero_result(scenario, float(L), floor)
    if opts.method == "dual-ascent":
        return _min_latency_dual_ascent(scenario, L, opts)
    rows = kern.Rows.from_scenario(scenario)
    K, N = scenario.channels.shape
    C = np.full((K, N), 1.0 / K)
    total_iters = 0
    tight = replace(opts, inner_tol=min(opts.inner_tol, 1e-9))

    def predicate(T):
        nonlocal C, total_iters
        ev, it, _, ok = _spg(rows, T, C, tight, target=L)
        total_iters += it
        C = ev.C
        return ok

    T_ref = max(L / scenario.speeds.sum(), floor * (1 + 1e-9))
    if scenario.config.circuit_energy == 0:
        # total load scales linearly with T for every fixed assignment, so a
        # solve at T_ref with duality gap G certifies T* in
        # [T_ref*L/(F+G), T_ref*L/F]
        ref, it, conv, _ = _spg(rows, T_ref, C, replace(opts, inner_tol=min(opts.inner_tol, opts.bisection_tol / 2)))
        total_iters += it
        C = ref.C
        if ref.total <= 0:
            raise InfeasibleError("no worker can upload anything")
        gap = _duality_gap(ref) if ref.certifiable else float("inf")
        T_hi = T_ref * L / ref.total
        T_lo = max(T_ref * L / (ref.total + gap), floor)
        ev = _evaluate(rows, C, T_hi, start=ref.point.u)
        if ev.total < L:
            T_hi *= 1 + 1e-12
            ev = _evaluate(rows, C, T_hi, start=ref.point.u)
        plan = _plan_from_point(ev.point, C, rows, T_hi, float(L))
        return SolveResult(plan, _duals_from_eval(ev, rows, scenario), ev.total, total_iters, conv,
                           {"relaxed_latency": T_hi, "latency_lower": T_lo, "method": "spg"})
    ref, it, _, _ = _spg(rows, T_ref, C, tight)
    total_iters += it
    C = ref.C
    guess = T_ref * L / ref.total if ref.total > 0 else T_ref * opts.bracket_growth
    half = opts.bisection_tol / 4
    T_lo, T_hi = max(guess * (1 - half), floor), guess * (1 + half)
    if T_lo > floor and predicate(T_lo):
        T_hi = T_lo
        T_lo = max(floor, T_ref)
        if predicate(T_lo):
            T_hi = T_lo
            T_lo = floor
    else:
        doublings = 0
        while not predicate(T_hi):
            T_lo = T_hi
            T_hi *= opts.bracket_growth
            doublings += 1
            if doublings > opts.max_doublings:
                raise InfeasibleError(f"model size {L!r} not reachable within {T_hi!r} s")
    while (T_hi - T_lo) > opts.bisection_tol * T_hi:
        T_mid = 0.5 * (T_lo + T_hi)
        if predicate(T_mid):
            T_hi = T_mid
        else:
            T_lo = T_mid
    ev, it, conv, _ = _spg(rows, T_hi, C, opts)
    total_iters += it
    if ev.total < L:
        # the loose final solve can sit a hair below the certified value
        ev, it, conv, _ = _spg(rows, T_hi, ev.C, tight)
        total_iters += it
    plan = _plan_from_point(ev.point, ev.C, rows, T_hi, float(L))
    return SolveResult(plan, _duals_from_eval(ev, rows, scenario), ev.total, total_iters, conv,
                       {"relaxed_latency": T_hi, "latency_lower": T_lo, "method": "spg"})


def _min_latency_dual_ascent(scenario, L, opts):
    floor = scenario.latency_floor
    T_lo = max(floor, L / scenario.speeds.sum())
    T_hi = T_lo * opts.bracket_growth
    res = dual_ascent(scenario, T_hi, opts)
    doublings = 0
    while res.achieved_model_size < L:
        T_lo, T_hi = T_hi, T_hi * opts.bracket_growth
        doublings += 1
        if doublings > opts.max_doublings:
            raise InfeasibleError(f"model size {L!r} not reachable")
        res = dual_ascent(scenario, T_hi, opts)
    while (T_hi - T_lo) > opts.bisection_tol * T_hi:
        T_mid = 0.5 * (T_lo + T_hi)
        r = dual_ascent(scenario, T_mid, opts)
        if r.achieved_model_size >= L:
            T_hi, res = T_mid, r
        else:
            T_lo = T_mid
    plan = res.plan.replace(model_size=float(L))
    return replace(res, plan=plan, info={**res.info, "relaxed_latency": T_hi})


# ---------------------------------------------------------------------------
# binary assignments
# ---------------------------------------------------------------------------

def _check_binary(C, N_expected=None):
    C = np.asarray(C, dtype=float)
    if not np.all((C == 0) | (C == 1)) or not np.all(C.sum(axis=0) == 1):
        raise ValidationError("assignment must be binary with exactly one worker per subcarrier")
    return C


def _fixed_total(rows, C, T):
    return float(kern.max_load(T, C, rows).loads.sum())


def _fixed_assignment_latency(rows, C, L, floor, opts):
    """Exact smallest T with sum of per-worker maximum loads >= L, for a frozen assignment."""
    has = C.sum(axis=1) > 0
    if not np.any(has):
        raise InfeasibleError("no worker owns a subcarrier")
    T_lo = max(floor, L / rows.f[has].sum())
    T_hi = T_lo * opts.bracket_growth
    doublings = 0
    while _fixed_total(rows, C, T_hi) < L:
        T_lo, T_hi = T_hi, T_hi * opts.bracket_growth
        doublings += 1
        if doublings > opts.max_doublings:
            raise InfeasibleError(f"model size {L!r} not reachable with this assignment")
    if _fixed_total(rows, C, T_lo) >= L:
        return T_lo
    T = brentq(lambda t: _fixed_total(rows, C, t) - L, T_lo, T_hi, xtol=1e-300, rtol=1e-13, maxiter=200)
    # brentq may land a rounding error below the root
    for _ in range(60):
        if _fixed_total(rows, C, T) >= L:
            break
        T *= 1 + 1e-13
    return T


def _fixed_assignment_result(scenario, rows, C, L, T, iters, info):
    ev = _evaluate(rows, C, T)
    plan = _plan_from_point(ev.point, C, rows, T, float(L))
    return SolveResult(plan, _duals_from_eval(ev, rows, scenario), ev.total, iters, True, info)


def resolve_with_fixed_assignment(scenario: Scenario, C_fixed, L: float, opts: SolverOptions | None = None,
                                  loads=None) -> SolveResult:
    """Minimum latency with the binary assignment frozen.

    With ``loads=None`` the block sizes are re-optimized; with explicit loads
    every worker runs at its own fastest feasible operating point and the
    round latency is the slowest worker's.
    """
    opts = opts or SolverOptions()
    C = _check_binary(C_fixed)
    if C.shape != scenario.channels.shape:
        raise ValidationError("assignment shape does not match scenario")
    rows = kern.Rows.from_scenario(scenario)
    if loads is not None:
        return _fixed_loads_result(scenario, rows, C, np.asarray(loads, dtype=float), L)
    if L <= 0:
        return _zero_result(scenario, float(L), scenario.latency_floor)
    T = _fixed_assignment_latency(rows, C, L, scenario.latency_floor, opts)
    return _fixed_assignment_result(scenario, rows, C, L, T, 0, {})


def _fixed_loads_result(scenario, rows, C, loads, L) -> SolveResult:
    starved = (loads > 0) & (C.sum(axis=1) == 0)
    if np.any(starved):
        raise InfeasibleError(f"workers {np.flatnonzero(starved).tolist()} carry load but own no subcarrier")
    point = kern.min_latency_for_load(loads, C, rows)
    T = float(max(np.max(point.latency), scenario.latency_floor))
    plan = AllocationPlan(C, loads, point.sub_loads(C, rows), point.rates(C, rows), T, float(L))
    return SolveResult(plan, None, float(loads.sum()), 0, True,
                       {"worker_latency": point.latency.copy()})


def argmax_rounding(C, sub_loads):
    """Binary assignment: each subcarrier to the worker uploading most on it (lowest index on ties)."""
    C = np.asarray(C, dtype=float)
    S = np.asarray(sub_loads, dtype=float)
    key = np.where(S.max(axis=0, keepdims=True) > 0, S, C)
    winner = np.argmax(key, axis=0)
    out = np.zeros_like(C)
    out[winner, np.arange(C.shape[1])] = 1.0
    return out


def _toggle_variants(C):
    """Rows (k, n): worker k's assignment row with subcarrier n flipped."""
    K, N = C.shape
    V = np.repeat(C[:, None, :], N, axis=1)
    idx = np.arange(N)
    V[:, idx, idx] = 1.0 - C
    return V.reshape(K * N, N)


def local_search(scenario: Scenario, C, L, opts: SolverOptions | None = None, max_passes: int = 200):
    """Improve a binary assignment by moving single subcarriers between workers.

    At the current optimal latency T, a move raises the latency-T total load
    exactly when it would lower the optimal latency, so candidates are scored
    by their load change. Moves touching disjoint worker pairs are applied
    together. Returns (C, T, passes).
    """
    opts = opts or SolverOptions()
    C = _check_binary(C).copy()
    rows = kern.Rows.from_scenario(scenario)
    K, N = C.shape
    floor = scenario.latency_floor
    T = _fixed_assignment_latency(rows, C, L, floor, opts)
    if K == 1:
        return C, T, 0
    vrows = rows.take(np.repeat(np.arange(K), N))
    cols = np.arange(N)
    passes = 0
    for passes in range(1, max_passes + 1):
        base = kern.max_load(T, C, rows).loads
        var = kern.max_load(T, _toggle_variants(C), vrows).loads.reshape(K, N)
        delta = var - base[:, None]
        owner = np.argmax(C, axis=0)
        gain = delta + delta[owner, cols][None, :]
        gain[owner, cols] = -np.inf
        order = np.argsort(-gain, axis=None, kind="stable")
        used = np.zeros(K, dtype=bool)
        moved_cols = set()
        moved = 0
        threshold = 1e-10 * L
        for flat in order:
            b, n = divmod(int(flat), N)
            g = gain[b, n]
            if not g > threshold:
                break
            a = owner[n]
            if used[a] or used[b] or n in moved_cols:
                continue
            C[a, n], C[b, n] = 0.0, 1.0
            used[a] = used[b] = True
            moved_cols.add(n)
            moved += 1
        if not moved:
            break
        T_new = _fixed_assignment_latency(rows, C, L, floor, opts)
        if T_new >= T:
            # disjoint moves are additive, so this only happens at round-off level
            break
        T = T_new
    return C, T, passes


def round_subcarriers(result: SolveResult, scenario: Scenario, L: float,
                      opts: SolverOptions | None = None) -> SolveResult:
    """Binary plan from a relaxed one: argmax rounding, exact re-solve, optional local search."""
    opts = opts or SolverOptions()
    plan = result.plan
    if plan.is_binary:
        return result
    rows = kern.Rows.from_scenario(scenario)
    C = argmax_rounding(plan.assignment, plan.sub_loads)
    info = {"relaxed_latency": result.info.get("relaxed_latency", plan.latency)}
    if L <= 0:
        return _zero_result(scenario, float(L), scenario.latency_floor)
    T = _fixed_assignment_latency(rows, C, L, scenario.latency_floor, opts)
    info["rounded_latency"] = T
    passes = 0
    if opts.refine:
        C, T, passes = local_search(scenario, C, L, opts)
    info["refine_passes"] = passes
    return _fixed_assignment_result(scenario, rows, C, L, T, result.iterations, info)


def solve_support(scenario: Scenario, L: float | None = None, opts: SolverOptions | None = None) -> SolveResult:
    """Full pipeline: relaxed minimum latency, rounding, exact re-solve on the binary assignment."""
    L = scenario.config.model_size if L is None else L
    relaxed = min_latency(scenario, L, opts)
    out = round_subcarriers(relaxed, scenario, L, opts)
    out.info.setdefault("relaxed_latency", relaxed.plan.latency)
    out.info["relaxed"] = relaxed
    return out


# ---------------------------------------------------------------------------
# integer loads
# ---------------------------------------------------------------------------

def integerize_loads(plan: AllocationPlan, scenario: Scenario | None = None,
                     model_size: float | None = None) -> AllocationPlan:
    """Floor every per-subcarrier load and hand the remainder to the largest fractions."""
    L = plan.model_size if model_size is None else model_size
    sub = plan.sub_loads
    if np.all(sub == np.floor(sub)) and (not np.isfinite(L) or sub.sum() >= L):
        return plan
    base = np.floor(sub)
    frac = sub - base
    carriers = (plan.assignment > 0) & (plan.rates > 0)
    remainder = int(math.ceil(L - base.sum() - 1e-9)) if np.isfinite(L) else int(round(frac.sum()))
    if remainder > 0:
        cand = np.flatnonzero(carriers.reshape(-1))
        if cand.size == 0:
            raise InfeasibleError("no subcarrier can carry the remaining parameters")
        # largest fraction first; stable sort keeps the lower flat index on ties
        order = cand[np.argsort(-frac.reshape(-1)[cand], kind="stable")]
        extra = np.zeros(sub.size)
        reps, rest = divmod(remainder, order.size)
        extra[order] += reps
        extra[order[:rest]] += 1
        base = base + extra.reshape(sub.shape)
    loads = base.sum(axis=1)
    out = AllocationPlan(plan.assignment, loads, base, plan.rates, plan.latency, plan.model_size)
    if scenario is not None:
        out = out.replace(latency=max(realized_latency(out, scenario), plan.latency))
    return out
