"""Flat ``section.key=value`` configuration files.

Blank lines and ``#`` comments are ignored. Values are typed by the
default they override. ``grid.<key>=v1,v2,...`` lines define sweep axes for
:class:`ExperimentPlan`.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field
from pathlib import Path

from .data import gen_blobs, gen_moons, load_csv, load_idx
from .exceptions import ConfigError
from .hessian import HvpConfig
from .nn import LossSpec, make_mlp
from .unlearn import TrainConfig, UnlearnRequest

DEFAULTS = {
    "data.kind": "blobs",
    "data.n": 512,
    "data.classes": 2,
    "data.spread": 1.0,
    "data.features": 2,
    "data.noise": 0.1,
    "data.seed": 0,
    "data.path": "",
    "data.label_column": "label",
    "data.images": "",
    "data.labels": "",
    "data.max_n": 0,
    "model.hidden": "16,16",
    "model.activation": "tanh",
    "model.seed": 0,
    "train.eta": 0.05,
    "train.batch_size": 32,
    "train.pretrain_steps": 0,
    "train.finetune_steps": 100,
    "train.epochs_over_target": 1,
    "train.loss": "ce",
    "train.gamma": 0.0,
    "train.lam": 0.0,
    "train.seed": 0,
    "train.sigma_every": 20,
    "train.log_updates": True,
    "instrument.hvp_probe_batch": 0,
    "instrument.epsilon_scale": 1e-5,
    "instrument.power_iters_max": 100,
    "instrument.power_tol": 1e-6,
    "instrument.probe_seed": 0,
    "instrument.sample_every": 0,
    "unlearn.method": "single_gradient",
    "unlearn.gradient_point": "at_initial",
    "unlearn.target_batch_index": 0,
    "prs.enabled": False,
    "prs.bins_per_label": 20,
    "prs.smoothing": 1.0,
    "bounds.n": 2,
    "bounds.dim": 1,
    "bounds.noise_sigma": 0.1,
    "bounds.eta": 0.1,
    "bounds.m_epochs": 1,
    "bounds.seed": 0,
    "landscape.gamma": "0.01,0.1,1,5",
    "landscape.resolution": 41,
    "landscape.range": 5.0,
}


def _coerce(key, raw):
    default = DEFAULTS[key]
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if isinstance(default, bool):
            if isinstance(raw, bool):
                return raw
            low = str(raw).lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            f = float(raw)
            if f != int(f):
                raise ValueError(raw)
            return int(f)
        if isinstance(default, float):
            return float(raw)
        return str(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {type(default).__name__}") from None


def _check_key(key):
    if key not in DEFAULTS:
        raise ConfigError(f"unknown key {key!r}; valid keys: {', '.join(sorted(DEFAULTS))}")


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class Config:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        _check_key(key)
        return self.values.get(key, DEFAULTS[key])

    def set(self, key, raw):
        _check_key(key)
        self.values[key] = _coerce(key, raw)
        return self

    def updated(self, overrides: dict):
        out = Config(dict(self.values))
        for k, v in overrides.items():
            out.set(k, v)
        return out

    def resolved(self):
        return {k: self[k] for k in sorted(DEFAULTS)}

    def serialize(self, explicit_only=False) -> str:
        items = sorted(self.values.items()) if explicit_only else self.resolved().items()
        return "".join(f"{k}={_fmt(v)}\n" for k, v in items)

    def run_id(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()[:12]

    def __eq__(self, other):
        return isinstance(other, Config) and self.resolved() == other.resolved()


def _lines(text):
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        yield lineno, key.strip(), value.strip()


def parse_config(text) -> Config:
    cfg = Config()
    for _, key, value in _lines(text):
        if key.startswith("grid."):
            raise ConfigError(f"{key}: grid keys belong in a plan file")
        cfg.set(key, value)
    return cfg


def load_config(path) -> Config:
    return parse_config(Path(path).read_text()) if path else Config()


@dataclass
class ExperimentPlan:
    base: Config
    grid: dict
    out_dir: str = "runs"

    def cells(self):
        keys = sorted(self.grid)
        for combo in itertools.product(*(self.grid[k] for k in keys)):
            yield self.base.updated(dict(zip(keys, combo)))


def parse_plan(text, out_dir="runs") -> ExperimentPlan:
    base = Config()
    grid = {}
    for _, key, value in _lines(text):
        if key.startswith("grid."):
            inner = key[len("grid."):]
            _check_key(inner)
            grid[inner] = [_coerce(inner, v) for v in value.split(",") if v.strip()]
        else:
            base.set(key, value)
    return ExperimentPlan(base, grid, out_dir)


def load_plan(path, out_dir="runs") -> ExperimentPlan:
    return parse_plan(Path(path).read_text(), out_dir)


def floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


# Builders from a Config to library objects.

def build_dataset(cfg: Config):
    kind = cfg["data.kind"]
    if kind == "blobs":
        return gen_blobs(cfg["data.n"], cfg["data.classes"], cfg["data.spread"], cfg["data.seed"],
                         n_features=cfg["data.features"])
    if kind == "moons":
        return gen_moons(cfg["data.n"], cfg["data.noise"], cfg["data.seed"])
    if kind == "csv":
        return load_csv(cfg["data.path"], cfg["data.label_column"], cfg["data.seed"])
    if kind == "idx":
        return load_idx(cfg["data.images"], cfg["data.labels"], cfg["data.max_n"] or None, cfg["data.seed"])
    raise ConfigError(f"data.kind must be blobs, moons, csv or idx, not {kind!r}")


def build_model(cfg: Config, dataset):
    hidden = [int(h) for h in str(cfg["model.hidden"]).split(",") if h.strip()]
    return make_mlp([dataset.n_features, *hidden, dataset.n_classes], cfg["model.activation"],
                    seed=cfg["model.seed"])


def build_loss(cfg: Config) -> LossSpec:
    return LossSpec(cfg["train.loss"], cfg["train.gamma"], cfg["train.lam"])


def build_train_config(cfg: Config) -> TrainConfig:
    try:
        return TrainConfig(
            eta=cfg["train.eta"], batch_size=cfg["train.batch_size"],
            pretrain_steps=cfg["train.pretrain_steps"], finetune_steps=cfg["train.finetune_steps"],
            epochs_over_target=cfg["train.epochs_over_target"], loss=build_loss(cfg),
            seed=cfg["train.seed"], sigma_every=cfg["train.sigma_every"],
            log_updates=cfg["train.log_updates"],
            target_batch_index=cfg["unlearn.target_batch_index"],
            hvp=HvpConfig(cfg["instrument.epsilon_scale"], cfg["instrument.power_iters_max"],
                          cfg["instrument.power_tol"], cfg["instrument.probe_seed"]),
            hvp_probe_batch=cfg["instrument.hvp_probe_batch"] or None,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_request(cfg: Config) -> UnlearnRequest:
    try:
        return UnlearnRequest(cfg["unlearn.method"], cfg["unlearn.gradient_point"],
                              cfg["unlearn.target_batch_index"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
