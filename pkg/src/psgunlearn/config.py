"""Run configuration: flat ``key = value`` text with dotted section prefixes.

Lines are ``section.key = value``; ``#`` starts a comment. Lists are
comma-separated. Every key has a typed default, so an empty file is a
valid configuration. Unknown keys and bad values raise
:class:`ConfigError` carrying the line number.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import METHODS, BaselineConfig
from .data import ClassFraction, FeaturePredicate
from .errors import ConfigError, InvalidInputError
from .inner_loop import InnerConfig
from .outer_loop import OuterConfig
from .training import TrainConfig


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _opt(conv):
    def parse(text):
        return None if text.strip().lower() in ("", "none", "null") else conv(text)
    return parse


def _list(conv):
    def parse(text):
        return [conv(p.strip()) for p in text.split(",") if p.strip()]
    return parse


def _str(text):
    return text.strip()


# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    "seed": (int, 0),
    "data.source": (_str, "blobs"),  # blobs | csv | idx
    "data.n_classes": (_opt(int), 3),
    "data.n_per_class": (int, 200),
    "data.dim": (int, 8),
    "data.separation": (float, 6.0),
    "data.test_fraction": (float, 0.2),
    "data.path": (_opt(_str), None),
    "data.labels_path": (_opt(_str), None),
    "data.header": (_bool, False),
    "data.pixel_scale": (_opt(float), None),
    "model.hidden": (_list(int), [64]),
    "train.lr": (float, 0.05),
    "train.batch_size": (int, 32),
    "train.max_epochs": (int, 100),
    "train.min_epochs": (int, 10),
    "train.tol": (float, 0.01),
    "forget.rule": (_str, "class"),  # class | feature
    "forget.class": (int, 0),
    "forget.fraction": (float, 1.0),
    "forget.feature": (int, 0),
    "forget.threshold": (float, 0.0),
    "forget.quantile": (_opt(float), None),
    "inner.c": (float, 1.0),
    "inner.steps": (int, 20),
    "inner.gamma": (float, 1e-4),
    "inner.lam": (float, 0.0),
    "inner.kappa": (_opt(float), None),
    "inner.early_stop": (_bool, False),
    "inner.noise": (_str, "gaussian"),
    "inner.schedule": (_str, "harmonic"),
    "outer.lr": (float, 0.05),
    "outer.epochs": (int, 5),
    "outer.batch_size": (int, 32),
    "outer.phi": (float, 1e-2),
    "outer.remain_loss": (_bool, False),
    "outer.remain_onset": (int, 1),
    "outer.soft_labels": (_bool, False),
    "outer.k": (int, 3),
    "baselines.methods": (_list(_str), list(METHODS)),
    "baselines.epochs": (_opt(int), None),
    "baselines.lr": (float, 0.05),
    "baselines.batch_size": (int, 32),
    "baselines.k_layers": (int, 1),
    "baselines.retrain_protocol": (_str, "fit"),  # fit | fixed
    "eval.mia_folds": (int, 5),
    "sweep.mode": (_str, "fraction"),  # fraction | gamma_lambda
    "sweep.fractions": (_list(float), [0.01, 0.1, 0.25, 0.5, 0.75, 1.0]),
    "sweep.gammas": (_list(float), [0.0, 1e-4, 1e-3, 1e-2]),
    "sweep.lams": (_list(float), [0.0, 1e-3, 1e-2, 1e-1, 1.0]),
    "verify.erf_draws": (int, 1_000_000),
    "verify.ascent_draws": (int, 100_000),
    "verify.ascent_trials": (int, 100),
    "verify.ascent_dim": (int, 50),
    "verify.other_kinds_trials": (int, 10),
}

CHOICES = {
    "data.source": ("blobs", "csv", "idx"),
    "forget.rule": ("class", "feature"),
    "baselines.retrain_protocol": ("fit", "fixed"),
    "sweep.mode": ("fraction", "gamma_lambda"),
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: _copy(d) for k, (_, d) in SCHEMA.items()})
    lines: dict = field(default_factory=dict)  # key -> source line, for diagnostics

    def __getitem__(self, key):
        return self.values[key]

    @property
    def seed(self) -> int:
        return self.values["seed"]

    def with_overrides(self, **kv) -> "RunConfig":
        values = dict(self.values)
        for k, v in kv.items():
            if k not in SCHEMA:
                raise ConfigError(f"unknown key {k!r}", key=k)
            values[k] = v
        cfg = RunConfig(values, dict(self.lines))
        cfg.validate()
        return cfg

    def snapshot(self) -> dict:
        return {k: self.values[k] for k in sorted(self.values)}

    def config_hash(self) -> str:
        blob = json.dumps(self.snapshot(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    # -- typed views -----------------------------------------------------------

    def widths(self, input_dim: int, n_classes: int) -> list[int]:
        return [input_dim, *self.values["model.hidden"], n_classes]

    def train_config(self) -> TrainConfig:
        v = self.values
        return self._build("train", TrainConfig, lr=v["train.lr"], batch_size=v["train.batch_size"],
                           max_epochs=v["train.max_epochs"], min_epochs=v["train.min_epochs"],
                           tol=v["train.tol"])

    def forget_rule(self, fraction: float | None = None):
        v = self.values
        if v["forget.rule"] == "class":
            return ClassFraction(v["forget.class"], v["forget.fraction"] if fraction is None else fraction)
        return FeaturePredicate(v["forget.feature"], v["forget.threshold"], v["forget.quantile"])

    def inner_config(self, **override) -> InnerConfig:
        v = self.values
        kw = dict(c=v["inner.c"], steps=v["inner.steps"], gamma=v["inner.gamma"], lam=v["inner.lam"],
                  kappa=v["inner.kappa"], early_stop=v["inner.early_stop"], noise=v["inner.noise"],
                  schedule=v["inner.schedule"], seed=v["seed"])
        kw.update(override)
        return self._build("inner", InnerConfig, **kw)

    def outer_config(self) -> OuterConfig:
        v = self.values
        return self._build("outer", OuterConfig, lr=v["outer.lr"], epochs=v["outer.epochs"],
                           batch_size=v["outer.batch_size"], phi=v["outer.phi"],
                           remain_loss=v["outer.remain_loss"], remain_onset=v["outer.remain_onset"],
                           soft_labels=v["outer.soft_labels"], k=v["outer.k"], seed=v["seed"])

    def baseline_configs(self) -> list[BaselineConfig]:
        v = self.values
        return [self._build("baselines", BaselineConfig, method=m, epochs=v["baselines.epochs"],
                            lr=v["baselines.lr"], batch_size=v["baselines.batch_size"],
                            k_layers=v["baselines.k_layers"], seed=v["seed"])
                for m in v["baselines.methods"]]

    def _build(self, section, cls, **kw):
        try:
            return cls(**kw)
        except InvalidInputError as exc:
            line = min((ln for k, ln in self.lines.items() if k.startswith(section + ".")),
                       default=None)
            raise ConfigError(f"[{section}] {exc}", line=line) from exc

    def validate(self) -> None:
        for key, allowed in CHOICES.items():
            if self.values[key] not in allowed:
                raise ConfigError(f"{key} must be one of {', '.join(allowed)}; got {self.values[key]!r}",
                                  line=self.lines.get(key), key=key)
        bad = [m for m in self.values["baselines.methods"] if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown method {bad[0]!r}; valid methods: {', '.join(METHODS)}",
                              line=self.lines.get("baselines.methods"), key="baselines.methods")
        if not self.values["model.hidden"] or min(self.values["model.hidden"]) < 1:
            raise ConfigError("model.hidden needs at least one positive width",
                              line=self.lines.get("model.hidden"), key="model.hidden")
        if self.values["data.source"] != "blobs" and not self.values["data.path"]:
            raise ConfigError("data.path is required for file sources",
                              line=self.lines.get("data.source"), key="data.path")
        if self.values["data.source"] == "idx" and not self.values["data.labels_path"]:
            raise ConfigError("data.labels_path is required for idx sources",
                              line=self.lines.get("data.source"), key="data.labels_path")
        for section in ("train", "inner", "outer"):
            getattr(self, f"{section}_config")()
        self.baseline_configs()


def _copy(v):
    return list(v) if isinstance(v, list) else v


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}",
                              line=lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", line=lineno, key=key)
        if key in cfg.lines:
            raise ConfigError(f"duplicate key {key!r} (first set on line "
                              f"{cfg.lines[key]})", line=lineno, key=key)
        conv = SCHEMA[key][0]
        try:
            cfg.values[key] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"bad value: {exc}", line=lineno,
                              key=key) from exc
        cfg.lines[key] = lineno
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    if path is None:
        cfg = RunConfig()
        cfg.validate()
        return cfg
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
