"""Brute-force references for tiny instances and a numeric convexity probe.

Deliberately independent of the solver: per-worker latencies come from
bisection on T with a sorted active-set water-filling, not from the solver's
Newton iteration on the water level.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .cost_model import AllocationPlan
from .errors import ValidationError
from .scenario import Scenario

LN2 = math.log(2.0)
MAX_WORKERS, MAX_SUBCARRIERS = 3, 4


@dataclass(frozen=True)
class OracleGrids:
    load_points: int = 64        # grid points per worker for the load split
    share_points: int = 16       # grid points per subcarrier share (relaxed oracle)
    bisection_tol: float = 1e-10 # relative tolerance of every 1-D bisection
    zoom_levels: int = 6         # local refinements of the best grid split

    def __post_init__(self):
        if self.load_points < 16 or self.share_points < 16:
            raise ValidationError("grid resolutions must be at least 16")
        if not 0 < self.bisection_tol < 1:
            raise ValidationError("bisection_tol must be in (0, 1)")

    def refined(self) -> "OracleGrids":
        return OracleGrids(2 * self.load_points, 2 * self.share_points, self.bisection_tol, self.zoom_levels)


def min_power_for_rate(rate, snr, share=None, B=1.0):
    """Least total power (sum of share*power) giving total throughput ``rate`` over parallel channels.

    ``snr`` holds h/sigma2 per channel, so powers come out in watts. The
    optimum fills the best channels up to a common level; the active set is
    found by scanning channels in order of decreasing gain.
    Returns (power, per-channel powers).
    """
    snr = np.asarray(snr, dtype=float)
    share = np.ones_like(snr) if share is None else np.asarray(share, dtype=float)
    keep = share > 0
    p = np.zeros_like(snr)
    if rate <= 0:
        return 0.0, p
    if not np.any(keep):
        return math.inf, p
    idx = np.flatnonzero(keep)[np.argsort(-snr[keep], kind="stable")]
    c_sum = 0.0
    clog = 0.0
    for m, n in enumerate(idx):
        c_sum += share[n]
        clog += share[n] * math.log2(snr[n])
        log_level = (rate / B - clog) / c_sum
        nxt = idx[m + 1] if m + 1 < idx.size else None
        if nxt is None or log_level <= -math.log2(snr[nxt]):
            if log_level > 1000:
                return math.inf, p
            level = 2.0 ** log_level
            act = idx[: m + 1]
            p[act] = np.maximum(level - 1.0 / snr[act], 0.0)
            return float((share * p).sum()), p
    raise AssertionError("unreachable")


def _bisect(pred, lo, hi, tol):
    """Smallest x in (lo, hi] with pred(x) true, for a predicate monotone false -> true."""
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return hi


def worker_min_latency(load, speed, power_factor, power_cap, xi, snr, share, B, tau, sigma2, tol=1e-10):
    """Shortest T at which one worker computes and uploads ``load`` parameters within its energy budget."""
    if load <= 0:
        return xi / power_cap
    if not np.any(np.asarray(share) > 0):
        return math.inf

    def feasible(T):
        s = T - load / speed
        if s <= 0:
            return False
        p, _ = min_power_for_rate(load * tau / s, snr, share, B)
        return power_factor * speed ** 2 * load + s * p + xi <= power_cap * T

    lo = max(load / speed, xi / power_cap)
    hi = 2 * lo + 1e-12
    while not feasible(hi):
        lo, hi = hi, 2 * hi
        if hi > 1e12:
            return math.inf
    return _bisect(feasible, lo, hi, tol)


def worker_max_load(T, speed, power_factor, power_cap, xi, snr, share, B, tau, sigma2, tol=1e-10):
    """Largest load one worker finishes within T; bisection on the load."""
    budget = power_cap * T - xi
    if budget <= 0 or not np.any(np.asarray(share) > 0):
        return 0.0

    def infeasible(load):
        s = T - load / speed
        if s <= 0:
            return True
        p, _ = min_power_for_rate(load * tau / s, snr, share, B)
        return power_factor * speed ** 2 * load + s * p > budget

    hi = speed * T
    return _bisect(infeasible, 0.0, hi, tol) if infeasible(hi) else hi


def _worker_args(s: Scenario, k):
    c = s.config
    return (s.speeds[k], s.power_factors[k], s.power_caps[k], c.circuit_energy,
            s.channels[k] / c.noise_power)


def _check_size(s: Scenario):
    K, N = s.channels.shape
    if K > MAX_WORKERS or N > MAX_SUBCARRIERS:
        raise ValidationError(f"oracle limited to K <= {MAX_WORKERS}, N <= {MAX_SUBCARRIERS}; got {K}x{N}")


def _splits(K, m):
    """All integer vectors of length K with entries >= 0 summing to m."""
    for cuts in itertools.combinations(range(m + K - 1), K - 1):
        prev, out = -1, []
        for c in cuts:
            out.append(c - prev - 1)
            prev = c
        out.append(m + K - 2 - prev)
        yield out


@dataclass
class OracleResult:
    latency: float
    assignment: np.ndarray
    loads: np.ndarray
    plan: AllocationPlan
    evaluated: int


def brute_force_min_latency(scenario: Scenario, L: float, grids: OracleGrids | None = None) -> OracleResult:
    """Minimum round latency over all binary assignments and a (zoomed) grid of load splits."""
    grids = grids or OracleGrids()
    _check_size(scenario)
    K, N = scenario.channels.shape
    c = scenario.config
    cache = {}

    def lat(k, owned, load):
        key = (k, owned, load)
        if key not in cache:
            share = np.array([1.0 if n in owned else 0.0 for n in range(N)])
            f, g, P, xi, snr = _worker_args(scenario, k)
            cache[key] = worker_min_latency(load, f, g, P, xi, snr, share, c.bandwidth,
                                            c.bits_per_param, c.noise_power, grids.bisection_tol)
        return cache[key]

    best = (math.inf, None, None)
    m = grids.load_points
    for owner in itertools.product(range(K), repeat=N):
        owned = [tuple(n for n in range(N) if owner[n] == k) for k in range(K)]
        # coarse grid over splits of L into m equal steps
        cand = (math.inf, None)
        for split in _splits(K, m):
            loads = [L * i / m for i in split]
            t = max(lat(k, owned[k], loads[k]) for k in range(K))
            if t < cand[0]:
                cand = (t, loads)
        if cand[1] is None:
            continue
        # zoom: re-grid a shrinking neighbourhood of the best split
        step = L / m
        loads = np.array(cand[1])
        t_best = cand[0]
        for _ in range(grids.zoom_levels):
            step /= 4
            offsets = np.arange(-4, 5) * step
            for d in itertools.product(offsets, repeat=K - 1):
                trial = loads.copy()
                trial[:-1] += d
                trial[-1] = L - trial[:-1].sum()
                if np.any(trial < 0):
                    continue
                t = max(lat(k, owned[k], float(trial[k])) for k in range(K))
                if t < t_best:
                    t_best, best_trial = t, trial
            if t_best < cand[0]:
                loads = best_trial
                cand = (t_best, loads)
        if cand[0] < best[0]:
            best = (cand[0], np.array(owner), np.array(cand[1], dtype=float))
    T, owner, loads = best
    C = np.zeros((K, N))
    if owner is not None:
        C[owner, np.arange(N)] = 1.0
    plan = _witness_plan(scenario, C, loads, T, L)
    return OracleResult(T, C, loads, plan, len(cache))


def _witness_plan(scenario, C, loads, T, L):
    """A concrete plan in which every worker runs at its own fastest point (all within T)."""
    K, N = C.shape
    c = scenario.config
    R = np.zeros((K, N))
    sub = np.zeros((K, N))
    for k in range(K):
        if loads[k] <= 0 or not np.isfinite(T):
            continue
        f, g, P, xi, snr = _worker_args(scenario, k)
        Tk = worker_min_latency(loads[k], f, g, P, xi, snr, C[k], c.bandwidth, c.bits_per_param,
                                c.noise_power, 1e-13)
        s = Tk - loads[k] / f
        _, p = min_power_for_rate(loads[k] * c.bits_per_param / s, snr, C[k], c.bandwidth)
        R[k] = np.where(C[k] > 0, c.bandwidth * np.log2(1 + p * snr), 0.0)
        total = (C[k] * R[k]).sum()
        sub[k] = loads[k] * C[k] * R[k] / total
    return AllocationPlan(C, loads, sub, R, T, L)


def brute_force_max_model_size(scenario: Scenario, T: float, grids: OracleGrids | None = None):
    """Best total load at latency T over a grid of fractional shares (a lower bound that tightens with the grid).

    Returns (total, shares).
    """
    grids = grids or OracleGrids()
    _check_size(scenario)
    K, N = scenario.channels.shape
    c = scenario.config
    q = grids.share_points
    columns = [np.array(sp, dtype=float) / q for sp in _splits(K, q)]
    cache = {}

    def wl(k, shares):
        key = (k, shares)
        if key not in cache:
            f, g, P, xi, snr = _worker_args(scenario, k)
            cache[key] = worker_max_load(T, f, g, P, xi, snr, np.array(shares), c.bandwidth,
                                         c.bits_per_param, c.noise_power, grids.bisection_tol)
        return cache[key]

    best, best_C = -1.0, None
    for cols in itertools.product(range(len(columns)), repeat=N):
        C = np.stack([columns[j] for j in cols], axis=1)
        total = sum(wl(k, tuple(C[k])) for k in range(K))
        if total > best:
            best, best_C = total, C
    return best, best_C


# ---------------------------------------------------------------------------
# convexity probe of the transformed problem
# ---------------------------------------------------------------------------

@dataclass
class ProbeReport:
    trials: int
    feasibility_violations: int
    objective_violations: int
    worst_violation: float

    @property
    def violations(self) -> int:
        return self.feasibility_violations + self.objective_violations


class TransformedProblem:
    """Constraints and objective in the variables (C, phi, Rt) with phi = 1/(T - L/f), Rt = C*R.

    With ``corrupt=True`` the energy constraint's direction is flipped, which
    makes the feasible set non-convex (used as a negative control).
    """

    def __init__(self, scenario: Scenario, T: float, corrupt: bool = False):
        self.s, self.T, self.corrupt = scenario, float(T), corrupt
        c = scenario.config
        self.f, self.g, self.P = scenario.speeds, scenario.power_factors, scenario.power_caps
        self.noise = c.noise_power / scenario.channels
        self.B, self.tau, self.xi = c.bandwidth, c.bits_per_param, c.circuit_energy

    def energy_terms(self, C, phi, Rt):
        with np.errstate(divide="ignore", invalid="ignore"):
            pc = np.where(C > 0, C * self.noise * np.expm1(Rt / (self.B * C) * LN2), 0.0)
        lhs = pc.sum(axis=1) + self.g * self.f ** 3 * (phi * self.T - 1.0)
        rhs = (self.P * self.T - self.xi) * phi
        return lhs, rhs

    def residuals(self, C, phi, Rt):
        """Scaled constraint violations (positive means violated)."""
        T = self.T
        out = [np.abs(C.sum(axis=0) - 1.0), np.maximum(-C, 0.0), np.maximum(C - 1.0, 0.0),
               np.maximum(1.0 - phi * T, 0.0), np.maximum(-Rt, 0.0).ravel()]
        up = self.f * (T * phi - 1.0) - Rt.sum(axis=1) / self.tau
        out.append(np.maximum(up, 0.0) / np.maximum(self.f * T * phi, 1.0))
        lhs, rhs = self.energy_terms(C, phi, Rt)
        gap = rhs - lhs if self.corrupt else lhs - rhs
        out.append(np.maximum(gap, 0.0) / np.maximum(np.abs(rhs) + np.abs(lhs), 1e-300))
        return float(max(np.max(o) if np.size(o) else 0.0 for o in out))

    def objective(self, phi):
        return float((self.f * (self.T - 1.0 / phi)).sum())

    def sample(self, rng, tries=1000):
        """A random feasible point (C, phi, Rt)."""
        K, N = self.s.channels.shape
        T = self.T
        for _ in range(tries):
            C = rng.dirichlet(np.ones(K), size=N).T
            R = rng.uniform(0, 8, size=(K, N)) * self.B * rng.uniform(0, 1) ** 2
            Rt = C * R
            lhs0, _ = self.energy_terms(C, np.full(K, 1.0 / T), Rt)
            A = lhs0  # energy left side at phi*T = 1
            slope = self.P * T - self.xi - self.g * self.f ** 3 * T
            phi_up = (Rt.sum(axis=1) / (self.tau * self.f) + 1.0) / T
            lo = np.full(K, 1.0 / T)
            hi = phi_up.copy()
            # energy: A - g f^3 <= phi * slope; the direction flips with the sign of slope
            with np.errstate(divide="ignore", invalid="ignore"):
                bound = (A - self.g * self.f ** 3) / slope
            lower_bound = (slope > 0) != self.corrupt
            lo = np.where(lower_bound, np.maximum(lo, bound), lo)
            hi = np.where(lower_bound, hi, np.minimum(hi, bound))
            if np.all(lo <= hi):
                phi = lo + rng.uniform(0, 1, size=K) * (hi - lo)
                if self.residuals(C, phi, Rt) <= 1e-12:
                    return C, phi, Rt
        raise RuntimeError("could not sample a feasible point")


def convexity_probe(scenario: Scenario, T: float, trials: int = 1000, seed: int = 0,
                    tol: float = 1e-9, corrupt: bool = False) -> ProbeReport:
    """Check convex combinations of random feasible points for feasibility and concavity of the objective."""
    if trials < 1:
        raise ValidationError("trials must be positive")
    rng = np.random.default_rng(seed)
    prob = TransformedProblem(scenario, T, corrupt)
    feas_bad = obj_bad = 0
    worst = 0.0
    for _ in range(trials):
        a = prob.sample(rng)
        b = prob.sample(rng)
        theta = rng.uniform(0, 1)
        mix = [theta * x + (1 - theta) * y for x, y in zip(a, b)]
        r = prob.residuals(*mix)
        worst = max(worst, r)
        if r > tol:
            feas_bad += 1
        lhs = prob.objective(mix[1])
        rhs = theta * prob.objective(a[1]) + (1 - theta) * prob.objective(b[1])
        rel = (rhs - lhs) / max(abs(rhs), 1.0)
        worst = max(worst, rel)
        if rel > tol:
            obj_bad += 1
    return ProbeReport(trials, feas_bad, obj_bad, worst)
