"""Granularity-aware load rounding for models trained as indivisible subproblems (neurons, per-sample blocks)."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .cost_model import AllocationPlan, realized_latency
from .errors import ValidationError
from .scenario import Scenario
from .solver import SolveResult, SolverOptions, solve_support

STAGES = ("W", "Z")


@dataclass(frozen=True)
class CnnShape:
    layer_neurons: tuple          # neurons per layer
    total_params: float           # parameters of the whole network
    batch_size: int
    aux_per_sample: float | None = None  # auxiliary entries per sample; defaults to the neuron count

    def __post_init__(self):
        if not self.layer_neurons or min(self.layer_neurons) < 1:
            raise ValidationError("layer_neurons must be non-empty with counts >= 1")
        if self.total_params < 1 or self.batch_size < 1:
            raise ValidationError("total_params and batch_size must be >= 1")
        if self.aux_per_sample is not None and self.aux_per_sample < 1:
            raise ValidationError("aux_per_sample must be >= 1")

    @property
    def neurons(self) -> int:
        return int(sum(self.layer_neurons))

    @classmethod
    def lenet5(cls, batch_size: int = 50) -> "CnnShape":
        """Two layers of 142 and 84 neurons, 60,000 parameters, auxiliary blocks of 9,388 entries per sample."""
        return cls((142, 84), 60_000.0, batch_size, 9_388.0)


@dataclass(frozen=True)
class GranularitySpec:
    stage: str
    unit: float        # parameters per indivisible subproblem
    total: float       # parameters of the whole stage

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValidationError(f"stage must be one of {STAGES}")
        if not (1 <= self.unit <= self.total):
            raise ValidationError("need 1 <= unit <= total")

    @property
    def subproblems(self) -> int:
        return int(round(self.total / self.unit))


def stage_granularity(shape: CnnShape, stage: str) -> GranularitySpec:
    """W-stage: one subproblem per neuron, equal sizes. Z-stage: one auxiliary block per sample."""
    if stage == "W":
        return GranularitySpec("W", shape.total_params / shape.neurons, shape.total_params)
    if stage == "Z":
        unit = float(shape.aux_per_sample if shape.aux_per_sample is not None else shape.neurons)
        return GranularitySpec("Z", unit, unit * shape.batch_size)
    raise ValidationError(f"unknown stage {stage!r}")


def compute_rounding_deltas(loads, unit):
    """Distance to the next multiple up and down, and the relative cost of rounding up."""
    L = np.asarray(loads, dtype=float)
    if np.any(L < 0):
        raise ValidationError("loads must be non-negative")
    down = np.mod(L, unit)
    # loads within round-off of a multiple count as exact multiples
    snap = (down < 1e-9 * unit) | (down > unit * (1 - 1e-9))
    down = np.where(snap, 0.0, down)
    up = np.where(down > 0, unit - down, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        indicator = np.where(L > 0, up / L, np.inf)
    return up, down, indicator


def select_roundup_set(up_sorted, down_sorted) -> int:
    """Smallest count K1 such that rounding the first K1 workers up covers what the rest shed."""
    up = np.asarray(up_sorted, dtype=float)
    down = np.asarray(down_sorted, dtype=float)
    K = up.size
    gained = np.concatenate([[0.0], np.cumsum(up)])
    shed = np.concatenate([np.cumsum(down[::-1])[::-1], [0.0]])
    ok = gained >= shed - 1e-9 * max(float(down.sum()), 1.0)
    if not ok[K]:
        raise AssertionError("rounding every worker up must always cover the deficit")
    return int(np.argmax(ok))


@dataclass
class CnnRoundingPlan:
    delta_up: np.ndarray
    delta_down: np.ndarray
    indicator: np.ndarray
    order: np.ndarray            # workers sorted by indicator, ascending
    cutoff: int                  # how many of them round up
    extra_sub_loads: np.ndarray  # change of per-subcarrier loads (K x N)
    latency_bound: float         # bound on the latency increase (s)
    base_latency: float
    rounded_loads: np.ndarray
    realized_latency: float
    unit: float

    @property
    def cutoff_indicator(self) -> float:
        return float(self.indicator[self.order[self.cutoff - 1]]) if self.cutoff > 0 else 0.0

    @property
    def round_up(self) -> np.ndarray:
        mask = np.zeros(self.delta_up.size, dtype=bool)
        mask[self.order[: self.cutoff]] = True
        return mask

    def to_dict(self) -> dict:
        return {
            "unit": self.unit,
            "delta_up": self.delta_up.tolist(),
            "delta_down": self.delta_down.tolist(),
            "indicator": [x if np.isfinite(x) else None for x in self.indicator.tolist()],
            "order": self.order.tolist(),
            "cutoff": self.cutoff,
            "cutoff_indicator": self.cutoff_indicator,
            "latency_bound": self.latency_bound,
            "base_latency": self.base_latency,
            "realized_latency": self.realized_latency,
            "rounded_loads": self.rounded_loads.tolist(),
        }


def round_loads(loads, unit):
    """Rounded loads for the given granularity together with the bookkeeping of how they were chosen.

    Returns (rounded, up, down, indicator, order, cutoff).
    """
    L = np.asarray(loads, dtype=float)
    up, down, ind = compute_rounding_deltas(L, unit)
    # empty workers sort last (infinite indicator) and never round up
    order = np.argsort(ind, kind="stable")
    cutoff = select_roundup_set(np.where(L[order] > 0, up[order], 0.0), down[order])
    rounded = L - down
    rounded[order[:cutoff]] = L[order[:cutoff]] + up[order[:cutoff]]
    # snap to exact multiples; the deltas are only accurate to round-off
    rounded = np.round(rounded / unit) * unit
    return rounded, up, down, ind, order, cutoff


def apply_cnn_rounding(result: SolveResult, spec: GranularitySpec, scenario: Scenario):
    """Round every worker's load to a whole number of subproblems, keeping assignment and rates.

    Each worker scales its per-subcarrier loads by the same factor as its total
    load, so its upload finishes within (1 + ratio) of its old time.
    Returns (plan, CnnRoundingPlan).
    """
    plan = result.plan
    L = plan.loads
    T0 = plan.latency
    if spec.unit > np.max(L, initial=0.0):
        warnings.warn("subproblem larger than every worker load; rounding collapses the stage onto few workers",
                      RuntimeWarning, stacklevel=2)
    rounded, up, down, ind, order, cutoff = round_loads(L, spec.unit)
    if np.all(up == 0) and np.all(down == 0):
        rp = CnnRoundingPlan(up, down, ind, order, cutoff, np.zeros_like(plan.sub_loads), 0.0, T0,
                             L.copy(), T0, spec.unit)
        return plan, rp
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(L > 0, rounded / L, 0.0)
    sub = plan.sub_loads * ratio[:, None]
    new = AllocationPlan(plan.assignment, rounded, sub, plan.rates, T0, plan.model_size)
    T_new = max(realized_latency(new, scenario), scenario.latency_floor)
    new = new.replace(latency=T_new)
    cut = float(ind[order[cutoff - 1]]) if cutoff > 0 else 0.0
    rplan = CnnRoundingPlan(up, down, ind, order, cutoff, sub - plan.sub_loads, T0 * cut, T0,
                            rounded, T_new, spec.unit)
    return new, rplan


@dataclass
class StagePlan:
    granularity: GranularitySpec
    solve: SolveResult
    plan: AllocationPlan
    rounding: CnnRoundingPlan

    @property
    def latency(self) -> float:
        return self.plan.latency


@dataclass
class CnnRoundResult:
    w_stage: StagePlan
    z_stage: StagePlan
    extra: dict = field(default_factory=dict)

    @property
    def latency(self) -> float:
        """Stages run one after the other."""
        return self.w_stage.latency + self.z_stage.latency


def plan_stage(scenario: Scenario, spec: GranularitySpec, opts: SolverOptions | None = None) -> StagePlan:
    res = solve_support(scenario, spec.total, opts)
    plan, rp = apply_cnn_rounding(res, spec, scenario)
    return StagePlan(spec, res, plan, rp)


def plan_cnn_round(scenario: Scenario, shape: CnnShape, opts: SolverOptions | None = None) -> CnnRoundResult:
    """Plan both stages of one training round with their own sizes and granularities."""
    w = plan_stage(scenario, stage_granularity(shape, "W"), opts)
    z = plan_stage(scenario, stage_granularity(shape, "Z"), opts)
    return CnnRoundResult(w, z)
