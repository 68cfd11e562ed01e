"""Vectorized exact per-worker solves in the log water level u = ln(w).

For a worker with assignment row c (shares per subcarrier) the optimal rate on
subcarrier n is B*(u + a_n)^+/ln2 with a_n = ln(h_n/sigma2), and the power is
(e^u - e^{-a_n})^+. Writing rho(u) = sum_n c_n R_n / tau for the upload
throughput (parameters/s) and P_up(u) = sum_n c_n p_n, a worker with round
latency T that spends s seconds uploading satisfies

    load    L = f (T - s) = rho s        =>  s = f T / (f + rho)
    energy  g f^2 L + s P_up + xi <= P T

Every quantity is monotone in u, so each per-worker problem reduces to one
scalar root. Rows are independent and every function handles a batch.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LN2 = np.log(2.0)
U_MAX = 700.0          # keeps exp(u) finite
NEWTON_UP_CAP = 4.0    # largest upward step while no upper bracket is known


@dataclass
class Rows:
    """Per-row worker data. ``a`` and ``floor`` are (R, N); the rest are (R,)."""
    a: np.ndarray         # ln(h / sigma2)
    floor: np.ndarray     # sigma2 / h
    f: np.ndarray
    g: np.ndarray
    P: np.ndarray
    xi: np.ndarray
    bandwidth: float
    tau: float

    @property
    def kr(self) -> float:
        """Parameters per second per nat of (u + a) on a full subcarrier."""
        return self.bandwidth / (self.tau * LN2)

    @classmethod
    def from_scenario(cls, scenario):
        cfg = scenario.config
        h = scenario.channels
        K = h.shape[0]
        return cls(a=np.log(h / cfg.noise_power), floor=cfg.noise_power / h,
                   f=scenario.speeds.astype(float), g=scenario.power_factors.astype(float),
                   P=scenario.power_caps.astype(float), xi=np.full(K, float(cfg.circuit_energy)),
                   bandwidth=float(cfg.bandwidth), tau=float(cfg.bits_per_param))

    def take(self, idx) -> "Rows":
        return Rows(self.a[idx], self.floor[idx], self.f[idx], self.g[idx], self.P[idx],
                    self.xi[idx], self.bandwidth, self.tau)


def activation_level(C, a):
    """Lowest u at which an assigned subcarrier turns on (+inf when nothing is assigned)."""
    return -np.where(C > 0, a, -np.inf).max(axis=1)


def throughput(u, C, rows):
    """(rho, d rho/du, P_up, d P_up/du) at log water level u."""
    x = u[:, None] + rows.a
    act = (x > 0) & (C > 0)
    Ca = np.where(act, C, 0.0)
    sa = Ca.sum(axis=1)
    rho = rows.kr * (Ca * np.where(act, x, 0.0)).sum(axis=1)
    w = np.exp(np.minimum(u, U_MAX))
    pup = w * sa - (Ca * rows.floor).sum(axis=1)
    return rho, rows.kr * sa, pup, w * sa


def solve_increasing(fun, lo, active, tol=1e-13, maxit=300, start=None):
    """Per-row root of an increasing function on (lo, inf), assuming fun(lo+) <= 0.

    ``fun(u)`` returns (value, derivative). Newton steps are safeguarded by a
    bracket; while there is no upper bound, upward steps are capped. ``start``
    optionally warm-starts rows where it is finite and above ``lo``.
    """
    lo = np.where(active, lo, 0.0).astype(float)
    hi = np.full_like(lo, np.inf)
    u = lo + 1.0
    if start is not None:
        ok = np.isfinite(start) & (start > lo)
        u = np.where(ok, start, u)
    for _ in range(maxit):
        val, der = fun(u)
        pos = val > 0
        hi = np.where(pos & active, np.minimum(hi, u), hi)
        lo = np.where(~pos & active, np.maximum(lo, u), lo)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            newton = -val / der
        done = ~active | (val == 0) | (np.abs(newton) <= tol * (1.0 + np.abs(u)))
        un = u + np.minimum(newton, NEWTON_UP_CAP)
        bracketed = np.isfinite(hi)
        bad = ~np.isfinite(un) | (un <= lo) | (un >= hi)
        mid = 0.5 * (lo + np.where(bracketed, hi, lo))
        un = np.minimum(np.where(bad, np.where(bracketed, mid, u + NEWTON_UP_CAP), un), U_MAX)
        # the final Newton correction is below round-off; keep it only when it stays in the bracket
        u = np.where(active & (~done | ~bad), un, u)
        if np.all(done):
            break
    return u


@dataclass
class WorkerPoint:
    """Operating point of a batch of workers.

    ``u`` is nan for rows that upload nothing (no subcarrier or no budget).
    """
    u: np.ndarray
    loads: np.ndarray
    upload_time: np.ndarray
    latency: np.ndarray

    def rates(self, C, rows):
        x = np.where(np.isfinite(self.u), self.u, -np.inf)[:, None] + rows.a
        return np.where((C > 0) & (x > 0), x, 0.0) * (rows.bandwidth / LN2)

    def powers(self, C, rows):
        w = np.exp(np.where(np.isfinite(self.u), np.minimum(self.u, U_MAX), -np.inf))[:, None]
        return np.where(C > 0, np.maximum(w - rows.floor, 0.0), 0.0)

    def sub_loads(self, C, rows):
        """Parameters sent per subcarrier (shares included)."""
        return C * self.rates(C, rows) * self.upload_time[:, None] / rows.tau


def max_load(T, C, rows, tol=1e-13, start=None):
    """Largest load each worker can compute and upload within T under its energy budget."""
    T = np.broadcast_to(np.asarray(T, dtype=float), rows.f.shape)
    f, g = rows.f, rows.g
    budget = rows.P * T - rows.xi
    lo = activation_level(C, rows.a)
    active = np.isfinite(lo) & (budget > 0)

    def energy_gap(u):
        rho, drho, pup, dpup = throughput(u, C, rows)
        q = f + rho
        s = f * T / q
        L = rho * s
        ds = -f * T / q ** 2 * drho
        dL = f * f * T / q ** 2 * drho
        e = g * f * f * L + s * pup - budget
        de = g * f * f * dL + ds * pup + s * dpup
        return e, de

    u = solve_increasing(energy_gap, lo, active, tol=tol, start=start)
    rho = throughput(u, C, rows)[0]
    s = np.where(active, f * T / (f + rho), T)
    L = np.where(active, rho * s, 0.0)
    return WorkerPoint(np.where(active, u, np.nan), L, s, T.copy())


def load_point(T, C, rows, target, tol=1e-13):
    """Least-energy operating point that delivers ``target`` parameters within T.

    Requires target < f*T; rows with a zero target or no subcarrier idle.
    """
    T = np.broadcast_to(np.asarray(T, dtype=float), rows.f.shape)
    f = rows.f
    target = np.broadcast_to(np.asarray(target, dtype=float), f.shape)
    lo = activation_level(C, rows.a)
    active = np.isfinite(lo) & (target > 0)
    s = np.where(active, T - target / f, T)
    with np.errstate(divide="ignore", invalid="ignore"):
        rho_needed = np.where(active, target / s, 0.0)

    def gap(u):
        rho, drho, _, _ = throughput(u, C, rows)
        return rho - rho_needed, drho

    u = solve_increasing(gap, lo, active, tol=tol)
    return WorkerPoint(np.where(active, u, np.nan), np.where(active, target, 0.0), s, T.copy())


def min_latency_for_load(load, C, rows, tol=1e-13):
    """Shortest round latency at which each worker finishes ``load`` parameters.

    With s = load/rho the latency is load/f + load/rho(u); the energy budget
    P*T bounds u from above, and T is smallest at the largest feasible u:
        load*(P_up(u) - P)/rho(u) + g f^2 load + xi - P load/f = 0
    The left side increases in u (power per unit rate grows), so the root is unique.
    """
    f, g, P, xi = rows.f, rows.g, rows.P, rows.xi
    load = np.broadcast_to(np.asarray(load, dtype=float), f.shape)
    lo = activation_level(C, rows.a)
    has = np.isfinite(lo)
    active = has & (load > 0)
    const = g * f * f * load + xi - P * load / f

    def gap(u):
        rho, drho, pup, dpup = throughput(u, C, rows)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = np.where(rho > 0, load * (pup - P) / rho + const, -np.inf)
            der = np.where(rho > 0, load * (dpup * rho - (pup - P) * drho) / rho ** 2, np.inf)
        return val, der

    u = solve_increasing(gap, lo, active, tol=tol)
    rho = throughput(u, C, rows)[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(active, load / rho, 0.0)
    T = np.where(active, load / f + s, np.where(load > 0, np.inf, xi / P))
    # an idle worker still needs T >= xi/P; a loaded one already pays xi inside the root
    return WorkerPoint(np.where(active, u, np.nan), load.copy(), s, T)


def multipliers(point: WorkerPoint, rows, C):
    """Upload and power multipliers (lambda, nu) consistent with an energy-tight point.

    At the optimum nu = s^2/D0 with D0 = w tau ln2 T/B + g f^2 T - (P T - xi)/f,
    and lambda = w nu tau ln2 / B. Idle rows get zeros.
    """
    T = point.latency
    s = point.upload_time
    u = point.u
    ok = np.isfinite(u) & (point.loads > 0)
    w = np.exp(np.where(ok, np.minimum(u, U_MAX), 0.0))
    scale = rows.tau * LN2 / rows.bandwidth
    D0 = w * scale * T + rows.g * rows.f ** 2 * T - (rows.P * T - rows.xi) / rows.f
    with np.errstate(divide="ignore", invalid="ignore"):
        nu = np.where(ok & (D0 > 0), s ** 2 / D0, 0.0)
    lam = w * nu * scale
    return np.where(ok, lam, 0.0), nu
