"""Run configuration: a strict, versioned JSON document.

Layout::

    {
      "schema_version": 1,
      "plate":   {...PlateConfig fields...},
      "model":   {"regime": "STL", "task_ids": null, "priors": {...}},
      "sampler": {"chains": 4, "warmup_iters": 1000, ...},
      "eval":    {"n_train": 100, "split_seed": null, "budgets": [5, 10, ...], ...},
      "io":      {"out_dir": "runs", "dataset": "population.csv", ...}
    }

Every section and key is optional; unknown keys are errors. Relative paths
under ``io`` resolve against ``io.out_dir``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from hiergp.datagen import PlateConfig
from hiergp.errors import ConfigError, DomainError
from hiergp.inference.nuts import SamplerConfig
from hiergp.model.joint import REGIMES
from hiergp.model.priors import PriorConstants

SCHEMA_VERSION = 1


def _strict(section, d, allowed):
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be an object")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {sorted(unknown)}")


@dataclass(frozen=True)
class ModelSection:
    regime: str = "STL"
    task_ids: tuple = None
    priors: PriorConstants = field(default_factory=PriorConstants)

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {self.regime!r}")

    def to_dict(self):
        return {"regime": self.regime,
                "task_ids": None if self.task_ids is None else list(self.task_ids),
                "priors": self.priors.to_dict()}


@dataclass(frozen=True)
class EvalSection:
    n_train: int = 100
    split_seed: int = None
    budgets: tuple = (5, 10, 20, 50, 100)
    repeats: int = 10
    holdout_ids: tuple = ()
    methods: tuple = ("STL", "MTL_A", "MTL_B")
    max_draws: int = 200
    max_test: int = None
    predict_split: str = "test"

    def __post_init__(self):
        if self.n_train < 1:
            raise ConfigError("eval.n_train must be positive")
        if any(b2 <= b1 for b1, b2 in zip(self.budgets, self.budgets[1:])) or \
                any(b < 1 for b in self.budgets):
            raise ConfigError("eval.budgets must be positive and strictly increasing")
        if self.repeats < 1:
            raise ConfigError("eval.repeats must be >= 1")
        bad = set(self.methods) - set(REGIMES)
        if bad:
            raise ConfigError(f"unknown method(s) {sorted(bad)}")
        if self.predict_split not in ("train", "test"):
            raise ConfigError("eval.predict_split must be 'train' or 'test'")
        if self.max_draws is not None and self.max_draws < 1:
            raise ConfigError("eval.max_draws must be positive")

    def to_dict(self):
        d = asdict(self)
        for k in ("budgets", "holdout_ids", "methods"):
            d[k] = list(d[k])
        return d


@dataclass(frozen=True)
class IOSection:
    out_dir: str = "runs"
    dataset: str = "population.csv"
    draws: str = None
    predictions: str = "predictions.csv"
    report: str = "lpy_report.csv"
    transfer: str = "transfer.csv"
    compare: dict = None
    transfer_fits: dict = None

    def to_dict(self):
        return asdict(self)

    def resolve(self, path):
        p = Path(path)
        return p if p.is_absolute() else Path(self.out_dir) / p


@dataclass(frozen=True)
class RunConfig:
    plate: PlateConfig = field(default_factory=PlateConfig)
    model: ModelSection = field(default_factory=ModelSection)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    io: IOSection = field(default_factory=IOSection)

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION,
                "plate": self.plate.to_dict(),
                "model": self.model.to_dict(),
                "sampler": asdict(self.sampler),
                "eval": self.eval.to_dict(),
                "io": self.io.to_dict()}

    def draws_path(self):
        return self.io.resolve(self.io.draws or f"draws_{self.model.regime}.csv")

    def with_overrides(self, seed=None, out_dir=None):
        cfg = self
        if seed is not None:
            try:
                cfg = replace(cfg, plate=replace(cfg.plate, seed=seed),
                              sampler=replace(cfg.sampler, seed=seed))
            except DomainError as exc:
                raise ConfigError(str(exc)) from None
        if out_dir is not None:
            cfg = replace(cfg, io=replace(cfg.io, out_dir=str(out_dir)))
        return cfg


def _section(cls, name, d, convert=None):
    names = [f.name for f in fields(cls)]
    _strict(name, d, names)
    d = dict(d)
    for k, fn in (convert or {}).items():
        if k in d and d[k] is not None:
            d[k] = fn(d[k])
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name!r} section: {exc}") from None


def _int_tuple(v):
    return tuple(int(x) for x in v)


def config_from_dict(d):
    """Build a RunConfig, rejecting unknown keys and wrong schema versions."""
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    _strict("<root>", d, ["schema_version", "plate", "model", "sampler", "eval", "io"])
    version = d.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"config schema_version {version} is not supported "
                          f"(expected {SCHEMA_VERSION})")
    try:
        plate = PlateConfig.from_dict(d.get("plate", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid 'plate' section: {exc}") from None
    m = dict(d.get("model", {}))
    _strict("model", m, ["regime", "task_ids", "priors"])
    try:
        priors = PriorConstants.from_dict(m.pop("priors", {}) or {})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid 'model.priors': {exc}") from None
    model = _section(ModelSection, "model", m, {"task_ids": _int_tuple})
    model = replace(model, priors=priors)
    sampler = _section(SamplerConfig, "sampler", d.get("sampler", {}))
    ev = _section(EvalSection, "eval", d.get("eval", {}),
                  {"budgets": _int_tuple, "holdout_ids": _int_tuple, "methods": tuple})
    io = _section(IOSection, "io", d.get("io", {}))
    return RunConfig(plate, model, sampler, ev, io)


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    return config_from_dict(data)


def dump_config(cfg, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return path
