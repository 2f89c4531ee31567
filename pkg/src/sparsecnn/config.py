"""Flat ``key = value`` run configuration."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset, load_csv, load_idx, split, synth_generate
from .errors import ConfigError


class MissingKeyError(ConfigError):
    pass


class UnknownKeyError(ConfigError):
    pass


class ConfigValueError(ConfigError):
    pass


class PathNotFoundError(ConfigError):
    pass


DEFAULT_ARCH = "conv3x3:8,relu,pool2,conv3x3:16,relu,pool2,fc:2"


@dataclass
class RunConfig:
    arch: str = DEFAULT_ARCH
    dataset: str = "synth"
    normalize: str = "none"
    # synthetic data
    synth_seed: int = 1
    synth_train_count: int = 2000
    synth_test_count: int = 500
    synth_h: int = 16
    synth_w: int = 16
    synth_classes: int = 2
    synth_noise_sd: float = 0.8
    # file data
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    train_csv: str = ""
    test_csv: str = ""
    csv_shape: str = ""
    test_fraction: float = 0.2
    class_count: int = 0
    # baseline training
    baseline: str = ""
    baseline_epochs: int = 15
    baseline_lr: float = 0.05
    baseline_batch_size: int = 32
    baseline_momentum: float = 0.0
    # sparsification
    penalty: str = "l0"
    rho: float = 1.0
    mus: str = "auto"
    mu_count: int = 8
    delta: int = 1
    nu: int = 15
    xi: int = 10
    epsilon: str = "auto"
    lr: float = 1e-3
    batch_size: int = 128
    momentum: float = 0.0
    include: str = "all"
    guard: bool = True
    guard_fraction: float = 0.5
    seed: int = 0
    out: str = "out"
    base_dir: str = field(default=".", repr=False)

    def resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.normpath(os.path.join(self.base_dir, path))

    @property
    def include_layers(self) -> Optional[list]:
        if self.include.strip().lower() in ("", "all"):
            return None
        return [int(v) for v in self.include.split(",") if v.strip()]

    @property
    def mu_values(self) -> Optional[tuple]:
        if self.mus.strip().lower() == "auto":
            return None
        return tuple(float(v) for v in self.mus.split(",") if v.strip())

    @property
    def epsilon_value(self) -> Optional[float]:
        return None if self.epsilon.strip().lower() == "auto" else float(self.epsilon)

    def validate(self) -> "RunConfig":
        if self.dataset not in ("synth", "idx", "csv"):
            raise ConfigValueError(f"dataset: expected synth, idx or csv, got {self.dataset!r}")
        if self.normalize not in ("none", "minmax"):
            raise ConfigValueError(f"normalize: expected none or minmax, got {self.normalize!r}")
        if self.penalty not in ("l0", "l1"):
            raise ConfigValueError(f"penalty: expected l0 or l1, got {self.penalty!r}")
        if self.dataset == "idx":
            for key in ("train_images", "train_labels"):
                if not getattr(self, key):
                    raise MissingKeyError(f"{key}: required when dataset = idx")
            if bool(self.test_images) != bool(self.test_labels):
                raise MissingKeyError("test_images/test_labels: give both or neither")
        if self.dataset == "csv":
            for key in ("train_csv", "csv_shape"):
                if not getattr(self, key):
                    raise MissingKeyError(f"{key}: required when dataset = csv")
        for key in ("train_images", "train_labels", "test_images", "test_labels", "train_csv", "test_csv"):
            value = getattr(self, key)
            if value and not os.path.exists(self.resolve(value)):
                raise PathNotFoundError(f"{key}: no such file {self.resolve(value)}")
        checks = {
            "rho": self.rho > 0,
            "synth_classes": self.synth_classes >= 2,
            "synth_noise_sd": self.synth_noise_sd >= 0,
            "synth_train_count": self.synth_train_count >= 1,
            "synth_test_count": self.synth_test_count >= 1,
            "mu_count": self.mu_count >= 1,
            "delta": self.delta >= 1,
            "nu": self.nu >= 1,
            "xi": self.xi >= 1,
            "lr": self.lr > 0,
            "batch_size": self.batch_size >= 1,
            "baseline_lr": self.baseline_lr > 0,
            "baseline_batch_size": self.baseline_batch_size >= 1,
            "baseline_epochs": self.baseline_epochs >= 0,
            "guard_fraction": 0 <= self.guard_fraction < 1,
            "test_fraction": 0 < self.test_fraction < 1,
        }
        for key, ok in checks.items():
            if not ok:
                raise ConfigValueError(f"{key}: value {getattr(self, key)!r} out of range")
        try:
            self.include_layers, self.mu_values
            eps = self.epsilon_value
        except ValueError as exc:
            raise ConfigValueError(f"include/mus/epsilon: {exc}") from None
        if eps is not None and eps <= 0:
            raise ConfigValueError("epsilon: must be > 0")
        return self

    def items(self) -> list:
        return [(f.name, getattr(self, f.name)) for f in dataclasses.fields(self) if f.name != "base_dir"]


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig) if f.name != "base_dir"}


def _convert(key, raw):
    kind = type(getattr(RunConfig(), key))
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return kind(raw)
    except ValueError as exc:
        raise ConfigValueError(f"{key}: {exc}") from None


def parse_config_text(text: str, base_dir: str = ".", overrides: Optional[dict] = None) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise UnknownKeyError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    for key, raw in (overrides or {}).items():
        if raw is not None:
            values[key] = _convert(key, str(raw))
    return RunConfig(base_dir=base_dir, **values).validate()


def load_config(path, overrides: Optional[dict] = None) -> RunConfig:
    if not os.path.exists(path):
        raise PathNotFoundError(f"config: no such file {path}")
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config_text(text, os.path.dirname(os.path.abspath(path)), overrides)


def _minmax(ds: Dataset) -> Dataset:
    imgs = ds.images
    lo = imgs.min(axis=(1, 2, 3), keepdims=True)
    hi = imgs.max(axis=(1, 2, 3), keepdims=True)
    span = np.where(hi > lo, hi - lo, 1).astype(np.float32)
    return Dataset(((imgs - lo) / span).astype(np.float32), ds.labels, ds.class_count, ds.split)


def load_data(cfg: RunConfig) -> tuple:
    """``(train, test)`` datasets described by the config."""
    if cfg.dataset == "synth":
        args = (cfg.synth_train_count, cfg.synth_h, cfg.synth_w, cfg.synth_classes, cfg.synth_noise_sd)
        train = synth_generate(cfg.synth_seed, *args)
        test = synth_generate(cfg.synth_seed + 1, cfg.synth_test_count, *args[1:], split="test")
    else:
        classes = cfg.class_count or None
        if cfg.dataset == "idx":
            train = load_idx(cfg.resolve(cfg.train_images), cfg.resolve(cfg.train_labels), classes)
            test = (load_idx(cfg.resolve(cfg.test_images), cfg.resolve(cfg.test_labels), classes, "test")
                    if cfg.test_images else None)
        else:
            shape = tuple(int(s) for s in cfg.csv_shape.lower().split("x"))
            train = load_csv(cfg.resolve(cfg.train_csv), shape, classes)
            test = load_csv(cfg.resolve(cfg.test_csv), shape, classes, "test") if cfg.test_csv else None
        if test is None:
            train, test = split(train, cfg.test_fraction, cfg.seed)
        classes = max(train.class_count, test.class_count)
        train = Dataset(train.images, train.labels, classes, "train")
        test = Dataset(test.images, test.labels, classes, "test")
    if cfg.normalize == "minmax":
        train, test = _minmax(train), _minmax(test)
    return train, test
