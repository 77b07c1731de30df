"""Experiment configuration: a JSON document with a fixed schema.

Unknown keys anywhere are errors.  Every hyperparameter left out takes the
value from :class:`~dropout_transfer.transfer.MethodConfig` (batch 128,
Adam lr 0.001, 100 epochs, bottleneck 8, 6 T-PCA outputs, loss weights
0.008/1/1000, 4:1 split); whatever a file sets differently is listed under
``overrides`` in the output metadata.

Schema::

    {
      "name": "benchmark",
      "cohorts": [{"name": "A", "synth": {...GeneratorConfig keys...}},
                  {"name": "B", "path": "counts.csv", "format": "weekly_counts",
                   "demographics": "demo.csv", "attribute": "education"}],
      "pairs": [["A", "B"]],            # default: all ordered pairs
      "methods": ["passive", "active", ...],
      "weeks": [2, 3, 4],
      "seeds": [0],
      "reseed_cohorts": true,           # synthetic cohorts redrawn per seed
      "method": {...MethodConfig keys...},
      "pad": {...PadConfig keys...},
      "no_transfer_folds": 1,
      "group_attribute": null,
      "output_dir": null
    }
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

from .errors import ConfigurationError
from .evaluation import PadConfig
from .transfer import ALL_METHODS, MethodConfig

GROUP_METHOD = "active-group"
KNOWN_METHODS = ALL_METHODS + (GROUP_METHOD,)


@dataclass
class CohortSpec:
    name: str
    synth: dict | None = None
    path: str | None = None
    format: str = "weekly_counts"
    demographics: str | None = None
    attribute: str | None = None
    n_weeks: int = 9
    vocabulary: str | None = None

    def __post_init__(self):
        if (self.synth is None) == (self.path is None):
            raise ConfigurationError(f"cohort {self.name!r} needs exactly one of 'synth' or 'path'")


@dataclass
class ExperimentConfig:
    cohorts: list
    name: str = "experiment"
    pairs: list | None = None
    methods: tuple = ("passive", "active", "naive", "in-situ", "instance", "no-transfer")
    weeks: tuple = (2, 3, 4, 5, 6, 7, 8, 9)
    seeds: tuple = (0,)
    reseed_cohorts: bool = True
    method: MethodConfig = field(default_factory=MethodConfig)
    pad: PadConfig = field(default_factory=PadConfig)
    no_transfer_folds: int = 1
    group_attribute: str | None = None
    output_dir: str | None = None

    def __post_init__(self):
        names = [c.name for c in self.cohorts]
        if len(set(names)) != len(names):
            raise ConfigurationError("cohort names must be unique")
        if not self.cohorts:
            raise ConfigurationError("at least one cohort is required")
        for m in self.methods:
            if m not in KNOWN_METHODS:
                raise ConfigurationError(f"unknown method {m!r}; choose from {KNOWN_METHODS}")
        if GROUP_METHOD in self.methods and not self.group_attribute:
            raise ConfigurationError(f"{GROUP_METHOD!r} needs group_attribute")
        if any(int(k) < 2 for k in self.weeks):
            raise ConfigurationError("weeks start at 2 (week 1 has no history)")
        if self.no_transfer_folds < 1:
            raise ConfigurationError("no_transfer_folds must be >= 1")
        for pair in self.resolved_pairs():
            for c in pair:
                if c not in names:
                    raise ConfigurationError(f"pair refers to unknown cohort {c!r}")

    def resolved_pairs(self) -> list:
        if self.pairs is not None:
            return [tuple(p) for p in self.pairs]
        names = [c.name for c in self.cohorts]
        return [(s, t) for s in names for t in names if s != t]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["methods"] = list(self.methods)
        d["weeks"] = [int(k) for k in self.weeks]
        d["seeds"] = [int(s) for s in self.seeds]
        d["method"]["loss_weights"] = list(self.method.loss_weights)
        return d

    def overrides(self) -> dict:
        """Hyperparameters that differ from the defaults."""
        out = {}
        for section, default in (("method", MethodConfig()), ("pad", PadConfig())):
            cur = getattr(self, section)
            for f in fields(default):
                a, b = getattr(cur, f.name), getattr(default, f.name)
                if (list(a) if isinstance(a, tuple) else a) != (list(b) if isinstance(b, tuple) else b):
                    out[f"{section}.{f.name}"] = list(a) if isinstance(a, tuple) else a
        return out

    def replace_seeds(self, seeds) -> "ExperimentConfig":
        d = self.to_dict()
        d["seeds"] = list(seeds)
        return config_from_dict(d)


def _check_keys(d: dict, allowed, where: str):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigurationError(f"unknown keys in {where}: {sorted(unknown)}")


def _section(cls, d: dict | None, where: str):
    d = dict(d or {})
    _check_keys(d, [f.name for f in fields(cls)], where)
    if "loss_weights" in d:
        d["loss_weights"] = tuple(float(v) for v in d["loss_weights"])
        if len(d["loss_weights"]) != 3:
            raise ConfigurationError("loss_weights needs (prediction, reconstruction, coral)")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigurationError(f"{where}: {exc}") from None


def config_from_dict(d: dict) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigurationError("configuration must be a JSON object")
    _check_keys(d, [f.name for f in fields(ExperimentConfig)], "configuration")
    if "cohorts" not in d:
        raise ConfigurationError("configuration needs 'cohorts'")
    cohorts = []
    for i, c in enumerate(d["cohorts"]):
        if not isinstance(c, dict) or "name" not in c:
            raise ConfigurationError(f"cohort {i} needs a name")
        _check_keys(c, [f.name for f in fields(CohortSpec)], f"cohort {c['name']!r}")
        cohorts.append(CohortSpec(**c))
    kw = {k: v for k, v in d.items() if k not in ("cohorts", "method", "pad")}
    for key in ("methods", "weeks", "seeds"):
        if key in kw:
            kw[key] = tuple(kw[key])
    if "pairs" in kw and kw["pairs"] is not None:
        kw["pairs"] = [list(p) for p in kw["pairs"]]
        if any(len(p) != 2 for p in kw["pairs"]):
            raise ConfigurationError("each pair is [source, target]")
    return ExperimentConfig(cohorts, method=_section(MethodConfig, d.get("method"), "method"),
                            pad=_section(PadConfig, d.get("pad"), "pad"), **kw)


PRESETS = ("benchmark", "groups", "smoke")


def load_config(path_or_preset) -> ExperimentConfig:
    """Read a JSON config file, or a bundled preset by name (see ``PRESETS``)."""
    p = Path(str(path_or_preset))
    if p.exists():
        text = p.read_text()
    elif str(path_or_preset) in PRESETS:
        text = resources.files("dropout_transfer").joinpath("presets", f"{path_or_preset}.json").read_text()
    else:
        raise ConfigurationError(f"no config file or preset named {str(path_or_preset)!r}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"invalid JSON: {exc}") from None
    return config_from_dict(data)
