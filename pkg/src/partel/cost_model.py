"""Latency and energy of an allocation plan, and constraint validation."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import UndefinedLatencyError, ValidationError
from .scenario import Scenario

DEFAULT_TOL = 1e-6
CONSTRAINTS = ("assignment", "latency", "model_size", "upload", "energy", "granularity")


@dataclass(frozen=True, eq=False)
class AllocationPlan:
    """Assignment weights, per-worker and per-subcarrier loads, rates and the round latency.

    ``sub_loads[k, n]`` is the number of parameters actually sent by worker k on
    subcarrier n, so for a fractional assignment it already includes the share.
    """
    assignment: np.ndarray
    loads: np.ndarray
    sub_loads: np.ndarray
    rates: np.ndarray
    latency: float
    model_size: float = float("nan")

    def __post_init__(self):
        C = np.array(self.assignment, dtype=float)
        loads = np.array(self.loads, dtype=float).reshape(-1)
        sub = np.array(self.sub_loads, dtype=float)
        R = np.array(self.rates, dtype=float)
        if C.ndim != 2 or sub.shape != C.shape or R.shape != C.shape or loads.shape != (C.shape[0],):
            raise ValidationError("plan arrays have inconsistent shapes")
        for name, arr in (("assignment", C), ("loads", loads), ("sub_loads", sub), ("rates", R)):
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise ValidationError(f"plan {name} must be finite and non-negative")
        R = np.where(C > 0, R, 0.0)
        for name, arr in (("assignment", C), ("loads", loads), ("sub_loads", sub), ("rates", R)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "latency", float(self.latency))
        object.__setattr__(self, "model_size", float(self.model_size))

    @property
    def shape(self):
        return self.assignment.shape

    @property
    def is_binary(self) -> bool:
        return bool(np.all((self.assignment == 0) | (self.assignment == 1)))

    def replace(self, **changes) -> "AllocationPlan":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "latency": self.latency,
            "model_size": self.model_size,
            "loads": self.loads.tolist(),
            "assignment": self.assignment.tolist(),
            "sub_loads": self.sub_loads.tolist(),
            "rates": self.rates.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AllocationPlan":
        return cls(d["assignment"], d["loads"], d["sub_loads"], d["rates"], d["latency"],
                   d.get("model_size", float("nan")))


@dataclass
class ConstraintReport:
    slacks: dict
    feasible: bool
    worst_violation: float
    tolerance: float = DEFAULT_TOL
    worst_constraint: str | None = None
    violations: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "worst_violation": self.worst_violation,
            "worst_constraint": self.worst_constraint,
            "tolerance": self.tolerance,
            "min_slack": {k: (float(np.min(v)) if np.size(v) else None) for k, v in self.slacks.items()},
        }


def _check_dims(plan: AllocationPlan, scenario: Scenario):
    if plan.shape != scenario.channels.shape:
        raise ValidationError(f"plan shape {plan.shape} does not match scenario {scenario.channels.shape}")


def subcarrier_powers(plan: AllocationPlan, scenario: Scenario) -> np.ndarray:
    """Transmit power per subcarrier needed to sustain the planned rates."""
    _check_dims(plan, scenario)
    cfg = scenario.config
    return np.where(plan.assignment > 0,
                    np.expm1(plan.rates / cfg.bandwidth * np.log(2.0)) * cfg.noise_power / scenario.channels,
                    0.0)


def _upload_times(plan: AllocationPlan, scenario: Scenario) -> np.ndarray:
    tau = scenario.config.bits_per_param
    C, Lkn, R = plan.assignment, plan.sub_loads, plan.rates
    if np.any((C > 0) & (Lkn > 0) & (R <= 0)) or np.any((C == 0) & (Lkn > 0)):
        raise UndefinedLatencyError("a subcarrier carries load at zero rate")
    with np.errstate(divide="ignore", invalid="ignore"):
        # a fractional share C means the subcarrier is time-shared, so the
        # upload of Lkn parameters at rate R occupies Lkn*tau/(C*R) seconds
        t = np.where((C > 0) & (Lkn > 0), Lkn * tau / (C * R), 0.0)
    return t


def latency_breakdown(plan: AllocationPlan, scenario: Scenario):
    """Vectorized over workers: (compute time, per-subcarrier upload times, upload time, total)."""
    _check_dims(plan, scenario)
    t_cmp = plan.loads / scenario.speeds
    t_sub = _upload_times(plan, scenario)
    t_com = t_sub.max(axis=1) if t_sub.shape[1] else np.zeros_like(t_cmp)
    return t_cmp, t_sub, t_com, t_cmp + t_com


def energy_breakdown(plan: AllocationPlan, scenario: Scenario):
    """Vectorized over workers: (compute energy, per-subcarrier powers, upload energy, total)."""
    _check_dims(plan, scenario)
    cfg = scenario.config
    f, g = scenario.speeds, scenario.power_factors
    e_cmp = g * f ** 2 * plan.loads
    p = subcarrier_powers(plan, scenario)
    with np.errstate(divide="ignore", invalid="ignore"):
        # energy = power * airtime; airtime of Lkn parameters is Lkn*tau/R of full-band time
        e_sub = np.where((plan.assignment > 0) & (plan.sub_loads > 0),
                         p * plan.sub_loads * cfg.bits_per_param / plan.rates, 0.0)
    e_com = e_sub.sum(axis=1)
    return e_cmp, p, e_com, e_cmp + e_com + cfg.circuit_energy


def worker_latency(plan: AllocationPlan, scenario: Scenario, k: int):
    t_cmp, t_sub, t_com, total = latency_breakdown(plan, scenario)
    return float(t_cmp[k]), t_sub[k].copy(), float(t_com[k]), float(total[k])


def worker_energy(plan: AllocationPlan, scenario: Scenario, k: int):
    e_cmp, p, e_com, total = energy_breakdown(plan, scenario)
    return float(e_cmp[k]), p[k].copy(), float(e_com[k]), float(total[k])


def realized_latency(plan: AllocationPlan, scenario: Scenario) -> float:
    """Round latency implied by the plan: the slowest loaded worker."""
    return float(np.max(latency_breakdown(plan, scenario)[3], initial=0.0))


def validate_plan(plan: AllocationPlan, scenario: Scenario, granularity: float | None = None,
                  tol: float = DEFAULT_TOL, model_size: float | None = None) -> ConstraintReport:
    """Slack of every constraint (negative means violated) and a feasibility verdict.

    Feasibility compares each slack against ``tol`` times a natural scale of
    that constraint (1 for assignment sums, T for latencies, L for model size
    capped so that half a parameter short is always a violation,
    the worker load for uploads, P*T for energy, L_sub for granularity).
    """
    _check_dims(plan, scenario)
    L = plan.model_size if model_size is None else model_size
    T = plan.latency
    C = plan.assignment
    loaded = plan.loads > 0
    slacks, scales = {}, {}

    slacks["assignment"] = -np.abs(C.sum(axis=0) - 1.0)
    scales["assignment"] = np.ones_like(slacks["assignment"])

    t_cmp = plan.loads / scenario.speeds
    try:
        t_sub = _upload_times(plan, scenario)
        active = (C > 0) & loaded[:, None]
        lat = np.where(active, T - (t_cmp[:, None] + t_sub), np.inf)
        lat = np.concatenate([lat[active], (T - t_cmp)[loaded]])
    except UndefinedLatencyError:
        lat = np.array([-np.inf])
    slacks["latency"] = lat
    scales["latency"] = np.full(lat.shape, max(T, np.finfo(float).tiny))

    if np.isfinite(L):
        slacks["model_size"] = np.array([plan.loads.sum() - L])
        # parameters are whole, so missing half of one is a violation at any L
        scales["model_size"] = np.array([max(min(L, 0.5 / tol), 1.0)])

    sent = np.where(C > 0, plan.sub_loads, 0.0).sum(axis=1)
    slacks["upload"] = sent - plan.loads
    scales["upload"] = np.maximum(plan.loads, 1.0)

    e_total = energy_breakdown(plan, scenario)[3]
    budget = scenario.power_caps * T
    slacks["energy"] = budget - e_total
    scales["energy"] = np.maximum(budget, np.finfo(float).tiny)

    if granularity is not None:
        q = plan.loads / granularity
        slacks["granularity"] = -np.abs(q - np.round(q)) * granularity
        scales["granularity"] = np.full(q.shape, float(granularity))

    worst, worst_name, violations = 0.0, None, {}
    for name, s in slacks.items():
        if s.size == 0:
            continue
        rel = -s / scales[name]
        m = float(np.max(rel))
        nviol = int(np.sum(rel > tol))
        if nviol:
            violations[name] = nviol
        if m > worst:
            worst, worst_name = m, name
    return ConstraintReport(slacks, not violations, worst, tol, worst_name, violations)
