"""Run configuration: one YAML file fixes every artifact of a run.

Schema (all sections optional; missing keys take the defaults below)::

    seed: 0                      # model init and batch order
    out: runs/desk               # output directory (not part of the hash)
    routes: [straight_lead, ...] # shipped route names or paths to world YAML files
    collect:  {seeds: [0, 1, 2], noise_seeds: [100, 101, 102], frame_stride: 2,
               future_interval: 10, ds_floor: 95.0}
    evaluate: {seeds: [10, 11, 12], runs: 1, run_seed_stride: 1000}
    model:    ModelConfig fields (n_f is the last conv width, grid, hidden, horizon, ...)
    loss:     LossWeights fields (div is lambda_div)
    controller: ControllerConfig fields (PID gains, window, fusion weights)
    penalties:  per-infraction coefficients overriding the defaults
    optim:    {lr: 5e-3, momentum: 0.9, batch_size: 32, epochs: 30, val_every: 10, grad_clip: 5.0}
    interpret: {quantile: 0.85}

``run_hash`` covers everything except ``out``.  ``train_hash`` covers what
a checkpoint depends on (seed, routes, collection, model, loss, optim), so
a checkpoint can be evaluated under other run counts, gains or penalties.
``data_hash`` covers only what the collected dataset depends on, so twins
that differ in loss weights share one dataset.
"""

import copy
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from ..binio import canonical_json
from ..controller import ControllerConfig
from ..losses import LossWeights
from ..model import ModelConfig
from ..sim import desk
from ..sim.scoring import penalty_table

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / "data" / "desk.yaml"


class ConfigError(ValueError):
    """Invalid run configuration (a usage error at the CLI)."""


def _section(cls, d, name):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name}: {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {name} section: {e}") from e


@dataclass(frozen=True)
class CollectConfig:
    seeds: tuple = (0, 1, 2)
    noise_seeds: tuple = (100, 101, 102)
    frame_stride: int = 2
    future_interval: int = 10
    ds_floor: float = 95.0

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "noise_seeds", tuple(int(s) for s in self.noise_seeds))
        if self.frame_stride < 1 or self.future_interval < 1:
            raise ValueError("frame_stride and future_interval must be >= 1")


@dataclass(frozen=True)
class EvaluateConfig:
    seeds: tuple = (10, 11, 12)
    runs: int = 1
    run_seed_stride: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.runs < 1:
            raise ValueError("runs must be >= 1")


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 5e-3
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 30
    val_every: int = 10
    grad_clip: float = 5.0

    def __post_init__(self):
        if self.lr <= 0 or not 0 <= self.momentum < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("lr > 0, 0 <= momentum < 1, batch_size >= 1, epochs >= 0 required")
        if self.val_every < 2:
            raise ValueError("val_every must be >= 2")


@dataclass(frozen=True)
class InterpretConfig:
    quantile: float = 0.85

    def __post_init__(self):
        if not 0 < self.quantile < 1:
            raise ValueError("quantile must lie in (0, 1)")


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/desk"
    routes: tuple = desk.DESK_ROUTES
    collect: CollectConfig = field(default_factory=CollectConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    penalties: dict = field(default_factory=dict)
    optim: OptimConfig = field(default_factory=OptimConfig)
    interpret: InterpretConfig = field(default_factory=InterpretConfig)

    SECTIONS = {"collect": CollectConfig, "evaluate": EvaluateConfig, "model": ModelConfig,
                "loss": LossWeights, "controller": ControllerConfig, "optim": OptimConfig,
                "interpret": InterpretConfig}

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        allowed = {"seed", "out", "routes", "penalties", *cls.SECTIONS}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
        kw = {}
        for name, sec in cls.SECTIONS.items():
            kw[name] = _section(sec, d.get(name) or {}, name)
        try:
            penalty_table(d.get("penalties") or {})
        except ValueError as e:
            raise ConfigError(str(e)) from e
        routes = d.get("routes", desk.DESK_ROUTES)
        if routes is None or isinstance(routes, str):
            raise ConfigError("routes must be a list")
        routes = tuple(str(r) for r in routes)
        return cls(seed=int(d.get("seed", 0)), out=str(d.get("out", "runs/desk")), routes=routes,
                   penalties=dict(d.get("penalties") or {}), **kw)

    @classmethod
    def load(cls, path=None):
        path = Path(path) if path else DEFAULT_CONFIG
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"config {path} is not valid YAML: {e}") from e
        if data is not None and not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
        return cls.from_dict(data)

    def to_dict(self):
        d = {"seed": self.seed, "out": self.out, "routes": list(self.routes),
             "penalties": dict(sorted(self.penalties.items()))}
        for name in self.SECTIONS:
            sec = getattr(self, name)
            sd = sec.to_dict() if hasattr(sec, "to_dict") else {f.name: getattr(sec, f.name) for f in fields(sec)}
            d[name] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in sd.items()}
        return d

    def replace(self, **changes):
        """Copy with top-level or dotted-key changes, e.g. ``replace(**{"loss.div": 0.0})``."""
        d = copy.deepcopy(self.to_dict())
        for key, value in changes.items():
            parts = key.split(".")
            tgt = d
            for p in parts[:-1]:
                tgt = tgt.setdefault(p, {})
            tgt[parts[-1]] = value
        return RunConfig.from_dict(d)

    def _hash(self, d):
        return hashlib.sha256(canonical_json(d).encode()).hexdigest()

    @property
    def run_hash(self):
        d = self.to_dict()
        d.pop("out")
        return self._hash(d)

    @property
    def train_hash(self):
        d = self.to_dict()
        return self._hash({k: d[k] for k in ("seed", "routes", "collect", "model", "loss", "optim")})

    @property
    def data_hash(self):
        d = self.to_dict()
        return self._hash({"routes": d["routes"], "collect": d["collect"],
                           "grid": d["model"]["grid"], "horizon": d["model"]["horizon"]})

    def world_configs(self):
        out = []
        for r in self.routes:
            try:
                out.append(desk.load_route(r))
            except OSError as e:
                raise ConfigError(f"route {r!r} not found: {e}") from e
        return out

    def save(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)
