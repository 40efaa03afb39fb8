"""Backbone + head composition and JSON checkpoints."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .deconf import DeConfHead, HeadOutput, HeadSpec
from .netcore import Backbone, BackboneSpec, FeatureBundle, dropout
from .numgrad import Tensor

CHECKPOINT_FORMAT = "godin-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class ModelOutput:
    features: FeatureBundle
    h: Tensor
    g: Tensor | None
    logits: Tensor


class Model:
    def __init__(self, backbone: BackboneSpec, head: HeadSpec, seed: int = 0):
        if head.feature_dim != backbone.feature_dim:
            raise ValueError(
                f"head feature_dim {head.feature_dim} != backbone output {backbone.feature_dim}"
            )
        self.seed = int(seed)
        rng = np.random.default_rng([self.seed, 31])
        self.backbone = Backbone(backbone, rng)
        self.head = DeConfHead(head, rng)

    @property
    def backbone_spec(self) -> BackboneSpec:
        return self.backbone.spec

    @property
    def head_spec(self) -> HeadSpec:
        return self.head.spec

    def features(self, x, mode: str = "eval") -> FeatureBundle:
        return self.backbone(x, mode)

    def __call__(self, x, mode: str = "eval", rng: np.random.Generator | None = None) -> ModelOutput:
        feats = self.backbone(x, mode)
        fp = dropout(feats.penultimate, self.backbone_spec.head_dropout_rate, mode, rng)
        out: HeadOutput = self.head(fp, mode)
        return ModelOutput(feats, out.h, out.g, out.logits)

    def named_parameters(self) -> list[tuple[str, Tensor, str]]:
        """``(name, tensor, tag)`` triples; the tag drives weight-decay rules."""
        return self.backbone.named_parameters() + self.head.named_parameters()

    def batchnorms(self):
        return self.backbone.batchnorms() + self.head.batchnorms()

    def predict(self, x) -> np.ndarray:
        return np.argmax(self(x, "eval").logits.data, axis=1)

    # --- persistence -------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "params": {
                name: {"shape": list(t.shape), "data": t.data.ravel().tolist()}
                for name, t, _ in self.named_parameters()
            },
            "batchnorm": {
                name: {
                    "running_mean": bn.running_mean.tolist(),
                    "running_var": bn.running_var.tolist(),
                }
                for name, bn in self.batchnorms()
            },
        }

    def load_state_dict(self, state: dict) -> None:
        params = state["params"]
        for name, t, _ in self.named_parameters():
            if name not in params:
                raise CheckpointError(f"checkpoint lacks parameter {name}")
            entry = params[name]
            data = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            if data.shape != t.shape:
                raise CheckpointError(f"shape mismatch for {name}: {data.shape} vs {t.shape}")
            t.data = data
        for name, bn in self.batchnorms():
            entry = state["batchnorm"][name]
            bn.running_mean = np.asarray(entry["running_mean"], dtype=np.float64)
            bn.running_var = np.asarray(entry["running_var"], dtype=np.float64)


def checkpoint_document(model: Model, extra: dict | None = None) -> dict:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "seed": model.seed,
        "backbone": asdict(model.backbone_spec),
        "head": asdict(model.head_spec),
        **model.state_dict(),
    }
    if extra:
        doc.update(extra)
    return doc


def dumps_checkpoint(model: Model, extra: dict | None = None) -> str:
    return json.dumps(checkpoint_document(model, extra), sort_keys=True, indent=1) + "\n"


def save_checkpoint(model: Model, path, extra: dict | None = None) -> Path:
    path = Path(path)
    path.write_text(dumps_checkpoint(model, extra))
    return path


def model_from_document(doc: dict) -> Model:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError("not a godin checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {doc.get('version')} unsupported (expected {CHECKPOINT_VERSION})"
        )
    model = Model(BackboneSpec(**doc["backbone"]), HeadSpec(**doc["head"]), seed=doc["seed"])
    model.load_state_dict(doc)
    return model


def load_checkpoint(path) -> tuple[Model, dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from None
    return model_from_document(doc), doc
