"""Experiment configuration: a pipeline run is a pure function of this file."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .models import TrainConfig
from .synth import SyntheticSpec, default_spec


class ConfigError(ValueError):
    """Invalid experiment configuration (field-level message included)."""


@dataclass
class ExperimentConfig:
    dataset: dict  # {"synthetic": {...}} or {"files": {inputs, annotations, schema, task_kind}}
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
    split_seed: int = 0
    train: dict = field(default_factory=dict)
    lam: float = 0.1
    lambda_grid: list = field(default_factory=list)
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    probes: dict = field(default_factory=lambda: {"sweep": True, "intervention": True,
                                                  "ordering": "random"})
    attribution: dict = field(default_factory=lambda: {
        "method": "integrated_gradients", "steps": 64,
        "baseline": {"kind": "zeros"}})
    alignment: dict = field(default_factory=lambda: {"enabled": True, "n_samples": 40})
    regularizer: dict | None = None
    output_root: str = "runs"

    def validate(self):
        if not isinstance(self.dataset, dict) or not (
                "synthetic" in self.dataset or "files" in self.dataset):
            raise ConfigError("dataset: needs a 'synthetic' spec or 'files' paths")
        if "synthetic" in self.dataset:
            spec = self.dataset["synthetic"]
            try:
                self.synthetic_spec()
            except (ValueError, KeyError, TypeError) as exc:
                raise ConfigError(f"dataset.synthetic: {exc}") from exc
        if self.lam < 0:
            raise ConfigError("lambda: must be >= 0")
        if not self.seeds:
            raise ConfigError("seeds: need at least one seed")
        if len(self.split_fractions) != 3:
            raise ConfigError("split_fractions: need (train, val, test)")
        try:
            self.train_config()
        except ValueError as exc:
            raise ConfigError(f"train: {exc}") from exc
        if self.regularizer is not None:
            from .regularizers import ExtendedBottleneckConfig
            try:
                self.extended_config()
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"regularizer: {exc}") from exc
        ordering = self.probes.get("ordering", "random")
        if ordering not in ("random", "fixed"):
            raise ConfigError(f"probes.ordering: unknown ordering {ordering!r}")
        method = self.attribution.get("method", "integrated_gradients")
        if method not in ("gradient", "integrated_gradients", "smoothgrad"):
            raise ConfigError(f"attribution.method: unknown method {method!r}")
        return self

    def synthetic_spec(self) -> SyntheticSpec:
        spec = dict(self.dataset["synthetic"])
        if "factor_partition" in spec:
            return SyntheticSpec.from_dict(spec)
        return default_spec(**spec)

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict({**TrainConfig().to_dict(), **self.train})

    def extended_config(self):
        from .regularizers import ExtendedBottleneckConfig
        return ExtendedBottleneckConfig(**self.regularizer)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "split_fractions": list(self.split_fractions),
            "split_seed": self.split_seed,
            "train": self.train,
            "lambda": self.lam,
            "lambda_grid": self.lambda_grid,
            "seeds": self.seeds,
            "probes": self.probes,
            "attribution": self.attribution,
            "alignment": self.alignment,
            "regularizer": self.regularizer,
            "output_root": self.output_root,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        if "split_fractions" in d:
            d["split_fractions"] = tuple(d["split_fractions"])
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            raw = yaml.safe_load(fh)
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: not a mapping")
        return cls.from_dict(raw).validate()

    def save(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=True)

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]
