"""Experiment configuration: INI or JSON in, canonical JSON out.

INI layout::

    [experiment]
    seed = 0
    score_fns = baseline, odin, mahalanobis, deconf-h, deconf-g
    preprocessing = true

    [bench]
    num_id_classes = 8

    [model]
    hidden_dims = 64, 64
    variant = C

    [train]
    epochs = 30

Keys left out take their defaults. ``seed`` in ``[experiment]`` also seeds
the benchmark and the training run unless those sections set their own.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .deconf import VARIANTS, HeadSpec
from .netcore import BackboneSpec
from .scorer import KINDS
from .shiftbench import BenchConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    hidden_dims: list[int] = field(default_factory=lambda: [64, 64])
    use_batchnorm: bool = True
    head_dropout_rate: float = 0.0
    variant: str = "C"
    g_batchnorm: bool = True


@dataclass
class ExperimentConfig:
    bench: BenchConfig = field(default_factory=BenchConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    score_fns: list[str] = field(default_factory=lambda: list(KINDS))
    preprocessing: bool = True
    seed: int = 0
    output_dir: str = "runs"

    def validate(self) -> None:
        try:
            self.bench.validate()
            if self.model.variant not in VARIANTS:
                raise ValueError(f"unknown head variant {self.model.variant!r}")
            self.backbone_spec()
            self.head_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        unknown = [k for k in self.score_fns if k not in KINDS]
        if unknown or not self.score_fns:
            raise ConfigError(f"score_fns must be a nonempty subset of {KINDS}, got {self.score_fns}")

    def backbone_spec(self) -> BackboneSpec:
        m = self.model
        return BackboneSpec(self.bench.input_dim, list(m.hidden_dims), m.use_batchnorm,
                            m.head_dropout_rate)

    def head_spec(self) -> HeadSpec:
        return HeadSpec(self.model.variant, self.bench.num_id_classes,
                        self.backbone_spec().feature_dim, self.model.g_batchnorm)

    @property
    def model_seed(self) -> int:
        return self.train.seed

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed, bench=replace(self.bench, seed=seed),
                       train=replace(self.train, seed=seed))

    def to_dict(self) -> dict:
        return {
            "experiment": {
                "seed": self.seed,
                "score_fns": list(self.score_fns),
                "preprocessing": self.preprocessing,
            },
            "bench": dataclasses.asdict(self.bench),
            "model": dataclasses.asdict(self.model),
            "train": dataclasses.asdict(self.train),
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    @classmethod
    def from_dict(cls, doc: dict, output_dir: str | None = None) -> "ExperimentConfig":
        known = {"experiment", "bench", "model", "train"}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config sections: {sorted(extra)}")
        exp = dict(doc.get("experiment", {}))
        seed = int(exp.pop("seed", 0))
        out = exp.pop("output_dir", None)
        score_fns = exp.pop("score_fns", list(KINDS))
        if isinstance(score_fns, str):
            score_fns = _split(score_fns)
        preprocessing = _to_bool(exp.pop("preprocessing", True))
        if exp:
            raise ConfigError(f"unknown [experiment] keys: {sorted(exp)}")
        bench = _build(BenchConfig, doc.get("bench", {}), "bench", seed)
        model = _build(ModelConfig, doc.get("model", {}), "model", None)
        train = _build(TrainConfig, doc.get("train", {}), "train", seed)
        cfg = cls(bench, model, train, list(score_fns), preprocessing, seed,
                  output_dir or out or "runs")
        cfg.validate()
        return cfg


def _split(raw: str) -> list[str]:
    return [p.strip() for p in raw.split(",") if p.strip()]


def _to_bool(raw) -> bool:
    if isinstance(raw, bool):
        return raw
    if isinstance(raw, (int, float)):
        return bool(raw)
    value = str(raw).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {raw!r}")


def _convert(raw, default, key: str):
    if not isinstance(raw, str):
        if isinstance(default, list) and not isinstance(raw, list):
            raise ConfigError(f"{key}: expected a list")
        return raw
    try:
        if isinstance(default, bool):
            return _to_bool(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            elem = type(default[0]) if default else float
            return [elem(v) for v in _split(raw)]
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None
    return raw


def _build(cls, section: dict, name: str, seed: int | None):
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - names
    if unknown:
        raise ConfigError(f"unknown [{name}] keys: {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in section:
            kwargs[f.name] = _convert(section[f.name], getattr(defaults, f.name), f"{name}.{f.name}")
    if seed is not None and "seed" in names and "seed" not in section:
        kwargs["seed"] = seed
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from None


def load_config(path, seed: int | None = None, output_dir: str | None = None) -> ExperimentConfig:
    """Read an INI (``.ini``/``.cfg``) or JSON config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if path.suffix == ".json" or text.lstrip().startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config: {exc}") from None
    else:
        parser = configparser.ConfigParser()
        try:
            parser.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"invalid config file: {exc}") from None
        doc = {s: dict(parser[s]) for s in parser.sections()}
    cfg = ExperimentConfig.from_dict(doc, output_dir)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    return cfg
