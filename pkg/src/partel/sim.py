"""Round-by-round replay of allocation plans while training a block-separable model."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .baselines import greedy_feel, proportional_baseline
from .cost_model import energy_breakdown, validate_plan
from .errors import InfeasibleError, ValidationError
from .scenario import DistributionSpec, Scenario, redraw_channels
from .solver import SolveResult, integerize_loads, solve_support

log = logging.getLogger(__name__)

PLANNERS: dict[str, Callable[[Scenario, float], SolveResult]] = {
    "support": lambda s, L: solve_support(s, L),
    "baseline": lambda s, L: proportional_baseline(s, L),
    "greedy-feel": lambda s, L: greedy_feel(s, L),
}
DATA_PARALLEL = {"greedy-feel"}


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class SyntheticDataset:
    features: np.ndarray   # M x L
    labels: np.ndarray     # M
    seed: int | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1 or y.shape != (X.shape[0],):
            raise ValidationError("need M >= 1 samples with one label each")
        self.features, self.labels = X, y

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @classmethod
    def generate(cls, num_samples: int = 1000, dim: int = 2000, seed: int = 0) -> "SyntheticDataset":
        """Gaussian features, labels from a planted linear separator."""
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((num_samples, dim)) / np.sqrt(dim)
        w_true = rng.standard_normal(dim)
        y = (X @ w_true > 0).astype(float)
        return cls(X, y, seed)


@dataclass
class DecomposableModel:
    """Squared error around a sigmoid inference function plus a separable penalty."""
    weights: np.ndarray
    regularizer: str = "l2"       # "l1" (proximal step) or "l2" (smooth)
    strength: float = 1e-4
    step_scale: float = 0.1       # step = step_scale / (largest squared sample norm)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).copy()
        if self.regularizer not in ("l1", "l2"):
            raise ValidationError("regularizer must be 'l1' or 'l2'")
        if self.strength < 0 or self.step_scale < 0:
            raise ValidationError("strength and step_scale must be non-negative")

    @classmethod
    def zeros(cls, dim: int, **kw) -> "DecomposableModel":
        return cls(np.zeros(dim), **kw)

    @property
    def size(self) -> int:
        return self.weights.size

    def copy(self) -> "DecomposableModel":
        return DecomposableModel(self.weights.copy(), self.regularizer, self.strength, self.step_scale)

    def penalty(self, w=None) -> float:
        w = self.weights if w is None else w
        if self.regularizer == "l1":
            return self.strength * float(np.abs(w).sum())
        return self.strength * float((w * w).sum())

    def loss(self, data: SyntheticDataset, w=None) -> float:
        w = self.weights if w is None else w
        r = data.labels - _sigmoid(data.features @ w)
        return float(np.mean(r * r)) + self.penalty(w)

    def residual_weights(self, data: SyntheticDataset, rows=slice(None)):
        """Per-sample factor d(loss)/d(x.w) for the smooth part, on a subset of samples."""
        X, y = data.features[rows], data.labels[rows]
        p = _sigmoid(X @ self.weights)
        return 2.0 * (p - y) * p * (1.0 - p)

    def step_size(self, data: SyntheticDataset) -> float:
        return self.step_scale / float(np.max(np.einsum("ij,ij->i", data.features, data.features)))

    def update_block(self, idx, grad_block, step):
        """Gradient or proximal step on the coordinates ``idx`` (``idx`` is a slice)."""
        w = self.weights[idx]
        if self.regularizer == "l2":
            w = w - step * (grad_block + 2.0 * self.strength * w)
        else:
            z = w - step * grad_block
            w = np.sign(z) * np.maximum(np.abs(z) - step * self.strength, 0.0)
        self.weights[idx] = w


@dataclass
class RoundTrace:
    scheme: str
    seed: int | None
    latency: list = field(default_factory=list)       # per round (s)
    energy: list = field(default_factory=list)        # per round, per worker (J)
    loss: list = field(default_factory=list)          # after each round
    initial_loss: float = float("nan")
    weights: np.ndarray | None = None

    @property
    def cumulative_latency(self) -> np.ndarray:
        return np.cumsum(self.latency)

    def time_to_loss(self, threshold: float) -> float:
        """Cumulative latency at which the loss first reaches ``threshold`` (inf if never)."""
        if self.initial_loss <= threshold:
            return 0.0
        cum = self.cumulative_latency
        for i, l in enumerate(self.loss):
            if l <= threshold:
                return float(cum[i])
        return float("inf")

    def rows(self):
        cum = self.cumulative_latency
        for r, (T, l) in enumerate(zip(self.latency, self.loss), start=1):
            yield {"round": r, "T": T, "cumulative_T": float(cum[r - 1]), "loss": l,
                   "scheme": self.scheme, "seed": self.seed}

    def write_csv(self, path_or_file):
        cols = ["round", "T", "cumulative_T", "loss", "scheme", "seed"]
        if hasattr(path_or_file, "write"):
            w = csv.DictWriter(path_or_file, cols, lineterminator="\n")
            w.writeheader()
            w.writerows(self.rows())
            return
        with open(path_or_file, "w", newline="") as fh:
            self.write_csv(fh)


def parameter_blocks(loads, size: int):
    """Contiguous index ranges, one per worker, covering 0..size-1 in worker order."""
    bounds, start = [], 0
    for l in np.asarray(loads, dtype=float):
        n = int(min(max(round(l), 0), size - start))
        bounds.append(slice(start, start + n))
        start += n
    if start < size:
        raise InfeasibleError(f"plan covers {start} of {size} parameters")
    return bounds


def sample_shards(num_samples: int, K: int):
    """Near-equal contiguous sample shards for data-parallel training."""
    edges = np.linspace(0, num_samples, K + 1).round().astype(int)
    return [slice(edges[k], edges[k + 1]) for k in range(K)]


def _plan_round(planner, scenario, L):
    res = planner(scenario, L)
    rep = validate_plan(res.plan, scenario)
    if not rep.feasible:
        raise InfeasibleError(f"planner returned an infeasible plan: worst {rep.worst_constraint} "
                              f"violation {rep.worst_violation:.3g}")
    return res


def run_partel(model: DecomposableModel, data: SyntheticDataset, scenario: Scenario,
               planner="support", rounds: int = 50, redraw: bool = False,
               dist: DistributionSpec | None = None, seed: int | None = None) -> RoundTrace:
    """Train ``model`` in place for ``rounds`` rounds, charging each round the planned latency.

    Model-parallel schemes split the parameter vector into per-worker blocks;
    the data-parallel scheme splits the samples and averages the gradients.
    The planner sees the model size as its target. Channels are redrawn every
    round when ``redraw`` is set, which forces a fresh plan.
    """
    if rounds < 0:
        raise ValidationError("rounds must be >= 0")
    if data.dim != model.size:
        raise ValidationError("dataset dimension must equal the model size")
    name = planner if isinstance(planner, str) else getattr(planner, "__name__", "custom")
    plan_fn = PLANNERS[planner] if isinstance(planner, str) else planner
    L = model.size
    step = model.step_size(data)
    trace = RoundTrace(name, seed if seed is not None else scenario.seed)
    trace.initial_loss = model.loss(data)
    K = scenario.num_workers
    res = None
    for r in range(rounds):
        sc = scenario
        if redraw:
            sc = redraw_channels(scenario, dist, seed=(0 if seed is None else seed) * 1_000_003 + r)
        if res is None or redraw:
            res = _plan_round(plan_fn, sc, L)
            if name in DATA_PARALLEL:
                shards = sample_shards(data.num_samples, K)
            else:
                blocks = parameter_blocks(integerize_loads(res.plan, model_size=L).loads, L)
        if name in DATA_PARALLEL:
            # every worker returns the full gradient over its shard; the server
            # weights each by its share of the samples
            grad = np.zeros(L)
            for sh in shards:
                if sh.stop > sh.start:
                    grad += data.features[sh].T @ model.residual_weights(data, sh) / data.num_samples
            model.update_block(slice(None), grad, step)
        else:
            # all workers see the same downloaded weights; each computes its own block
            rw = model.residual_weights(data)
            grads = [data.features[:, b].T @ rw / data.num_samples for b in blocks]
            for b, g in zip(blocks, grads):
                model.update_block(b, g, step)
        trace.latency.append(res.plan.latency)
        trace.energy.append(energy_breakdown(res.plan, sc)[3].tolist())
        trace.loss.append(model.loss(data))
    trace.weights = model.weights.copy()
    return trace


def centralized_reference(model: DecomposableModel, data: SyntheticDataset, rounds: int):
    """Same update rule on the whole parameter vector at once. Returns (loss history, weights)."""
    step = model.step_size(data)
    losses = []
    for _ in range(rounds):
        grad = data.features.T @ model.residual_weights(data) / data.num_samples
        model.update_block(slice(None), grad, step)
        losses.append(model.loss(data))
    return losses, model.weights.copy()
