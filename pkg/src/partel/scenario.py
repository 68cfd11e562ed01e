"""Problem instances: system constants, worker profiles and channel gains."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import ScenarioFormatError, ValidationError

SPEED_LEVELS = tuple(i * 1e5 for i in range(1, 11))
POWER_FACTOR_LEVELS = tuple(i / 1e17 for i in range(1, 11))


def noise_power_from_density(density: float, bandwidth: float) -> float:
    """Per-subcarrier noise power (W) from a spectral density (W/Hz)."""
    return density * bandwidth


@dataclass(frozen=True)
class SystemConfig:
    num_subcarriers: int = 80
    bandwidth: float = 312.5e3          # Hz per subcarrier
    noise_power: float = 3.125e-4       # W per subcarrier (1e-9 W/Hz * bandwidth)
    bits_per_param: float = 32.0
    circuit_energy: float = 0.0         # J per worker per round
    model_size: float = 1.24e6          # parameters

    def __post_init__(self):
        checks = {
            "num_subcarriers": self.num_subcarriers >= 1,
            "bandwidth": self.bandwidth > 0,
            "noise_power": self.noise_power > 0,
            "bits_per_param": self.bits_per_param >= 1,
            "circuit_energy": self.circuit_energy >= 0,
            "model_size": self.model_size >= 1,
        }
        for name, ok in checks.items():
            if not ok or not np.isfinite(getattr(self, name)):
                raise ValidationError(f"invalid {name}: {getattr(self, name)!r}")
        if int(self.num_subcarriers) != self.num_subcarriers:
            raise ValidationError("num_subcarriers must be an integer")

    @classmethod
    def from_noise_density(cls, density: float = 1e-9, bandwidth: float = 312.5e3, **kw):
        return cls(bandwidth=bandwidth, noise_power=noise_power_from_density(density, bandwidth), **kw)


@dataclass(frozen=True)
class WorkerProfile:
    speed: float          # parameters per second
    power_factor: float   # P_cmp = power_factor * speed**3
    power_cap: float      # W

    def __post_init__(self):
        if not (np.isfinite(self.speed) and self.speed > 0):
            raise ValidationError(f"worker speed must be positive, got {self.speed!r}")
        if not (np.isfinite(self.power_factor) and self.power_factor >= 0):
            raise ValidationError(f"worker power_factor must be >= 0, got {self.power_factor!r}")
        if not (np.isfinite(self.power_cap) and self.power_cap > 0):
            raise ValidationError(f"worker power_cap must be positive, got {self.power_cap!r}")


@dataclass(frozen=True)
class DistributionSpec:
    """How workers and channels are drawn by :func:`generate_scenario`."""
    path_loss: float = 1e-3
    speed_levels: tuple = SPEED_LEVELS
    power_factor_levels: tuple = POWER_FACTOR_LEVELS
    power_cap: float = 8.0

    def __post_init__(self):
        if not self.path_loss > 0:
            raise ValidationError("path_loss must be positive")
        if not self.speed_levels or min(self.speed_levels) <= 0:
            raise ValidationError("speed_levels must be non-empty and positive")
        if not self.power_factor_levels or min(self.power_factor_levels) < 0:
            raise ValidationError("power_factor_levels must be non-empty and non-negative")
        if not self.power_cap > 0:
            raise ValidationError("power_cap must be positive")


@dataclass(frozen=True, eq=False)
class Scenario:
    config: SystemConfig
    workers: tuple
    channels: np.ndarray          # K x N power gains
    seed: int | None = None
    # cached views, derived from the fields above
    speeds: np.ndarray = field(init=False, repr=False)
    power_factors: np.ndarray = field(init=False, repr=False)
    power_caps: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        workers = tuple(self.workers)
        h = np.array(self.channels, dtype=float)
        if h.ndim != 2 or h.shape != (len(workers), self.config.num_subcarriers):
            raise ValidationError(
                f"channels must be K x N = {len(workers)} x {self.config.num_subcarriers}, got {h.shape}")
        if len(workers) < 1:
            raise ValidationError("a scenario needs at least one worker")
        if not np.all(np.isfinite(h)) or np.any(h <= 0):
            raise ValidationError("channel gains must be positive and finite")
        h.setflags(write=False)
        object.__setattr__(self, "workers", workers)
        object.__setattr__(self, "channels", h)
        for name, attr in (("speeds", "speed"), ("power_factors", "power_factor"), ("power_caps", "power_cap")):
            arr = np.array([getattr(w, attr) for w in workers], dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def num_workers(self) -> int:
        return len(self.workers)

    @property
    def num_subcarriers(self) -> int:
        return self.config.num_subcarriers

    @property
    def latency_floor(self) -> float:
        """Smallest round latency at which every worker can afford its circuit energy."""
        return float(np.max(self.config.circuit_energy / self.power_caps))

    def with_config(self, **changes) -> "Scenario":
        cfg = SystemConfig(**{**asdict(self.config), **changes})
        return Scenario(cfg, self.workers, self.channels, self.seed)

    def subset(self, workers=None, subcarriers=None) -> "Scenario":
        """Restrict to a subset of worker and/or subcarrier indices."""
        wi = np.arange(self.num_workers) if workers is None else np.asarray(workers)
        ni = np.arange(self.num_subcarriers) if subcarriers is None else np.asarray(subcarriers)
        cfg = SystemConfig(**{**asdict(self.config), "num_subcarriers": len(ni)})
        return Scenario(cfg, [self.workers[i] for i in wi], self.channels[np.ix_(wi, ni)], self.seed)

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (self.config == other.config and self.workers == other.workers
                and self.seed == other.seed and np.array_equal(self.channels, other.channels))

    __hash__ = None


def generate_scenario(K: int, spec: SystemConfig | None = None, dist: DistributionSpec | None = None,
                      seed: int = 0) -> Scenario:
    """Draw a scenario: exponential power gains, speeds and power factors from discrete levels."""
    spec = spec or SystemConfig()
    dist = dist or DistributionSpec()
    if K < 1:
        raise ValidationError("K must be >= 1")
    rng = np.random.default_rng(seed)
    h = rng.exponential(dist.path_loss, size=(K, spec.num_subcarriers))
    # a zero draw is possible in principle but has probability ~1e-300
    h = np.maximum(h, np.finfo(float).tiny)
    f = rng.choice(np.asarray(dist.speed_levels, dtype=float), size=K)
    g = rng.choice(np.asarray(dist.power_factor_levels, dtype=float), size=K)
    workers = [WorkerProfile(float(f[k]), float(g[k]), float(dist.power_cap)) for k in range(K)]
    return Scenario(spec, workers, h, seed)


def redraw_channels(s: Scenario, dist: DistributionSpec | None, seed: int) -> Scenario:
    """Same workers and constants, fresh fading realization."""
    dist = dist or DistributionSpec()
    rng = np.random.default_rng(seed)
    h = np.maximum(rng.exponential(dist.path_loss, size=s.channels.shape), np.finfo(float).tiny)
    return Scenario(s.config, s.workers, h, s.seed)


# -- persistence -------------------------------------------------------------

def scenario_to_dict(s: Scenario) -> dict:
    return {
        "config": asdict(s.config),
        "workers": [asdict(w) for w in s.workers],
        "channels": [[float(x) for x in row] for row in s.channels],
        "seed": s.seed,
    }


def _require(d, key, where=""):
    if not isinstance(d, dict) or key not in d:
        raise ScenarioFormatError(f"{where}{key}")
    return d[key]


def scenario_from_dict(d: dict) -> Scenario:
    cfg_d = _require(d, "config")
    workers_d = _require(d, "workers")
    channels = _require(d, "channels")
    seed = _require(d, "seed")
    cfg_fields = ("num_subcarriers", "bandwidth", "noise_power", "bits_per_param",
                  "circuit_energy", "model_size")
    try:
        cfg = SystemConfig(**{k: _require(cfg_d, k, "config.") for k in cfg_fields})
    except TypeError as exc:
        raise ScenarioFormatError("config", str(exc)) from exc
    if not isinstance(workers_d, list):
        raise ScenarioFormatError("workers")
    workers = []
    for i, w in enumerate(workers_d):
        vals = [_require(w, k, f"workers[{i}].") for k in ("speed", "power_factor", "power_cap")]
        if not all(isinstance(v, (int, float)) for v in vals):
            raise ScenarioFormatError(f"workers[{i}]")
        workers.append(WorkerProfile(*map(float, vals)))
    if not isinstance(channels, list) or not all(isinstance(r, list) for r in channels):
        raise ScenarioFormatError("channels")
    try:
        h = np.array(channels, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioFormatError("channels", str(exc)) from exc
    if seed is not None and not isinstance(seed, int):
        raise ScenarioFormatError("seed")
    return Scenario(cfg, workers, h, seed)


def save_scenario(s: Scenario, path) -> None:
    # json writes floats with repr(), which round-trips binary64 exactly
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=1) + "\n")


def load_scenario(path) -> Scenario:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError("<document>", f"not a valid scenario file: {exc}") from exc
    return scenario_from_dict(d)


def reference_scenario() -> Scenario:
    """The two-worker, two-subcarrier instance used for oracle regression."""
    cfg = SystemConfig(num_subcarriers=2, bandwidth=312500.0, noise_power=3.125e-4,
                       bits_per_param=32.0, circuit_energy=0.0, model_size=1e6)
    workers = [WorkerProfile(1e6, 1e-16, 8.0), WorkerProfile(5e5, 2e-16, 8.0)]
    return Scenario(cfg, workers, np.array([[1e-3, 2e-3], [2e-3, 1e-3]]), seed=None)
