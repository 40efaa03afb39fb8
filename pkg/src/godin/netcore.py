"""MLP backbone with batch normalisation and per-layer feature taps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numgrad as ng
from .numgrad import Tensor

MODES = ("train", "eval")

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def he_init(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator) -> Tensor:
    """Zero-mean normal draws with variance ``2 / fan_in``."""
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape), requires_grad=True)


def dropout(x: Tensor, p: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: identity in eval mode or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout rate must lie in [0, 1)")
    _check_mode(mode)
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    keep = rng.random(x.shape) >= p
    return x * (keep / (1.0 - p))


@dataclass
class BackboneSpec:
    input_dim: int
    hidden_dims: list[int] = field(default_factory=lambda: [64, 64])
    use_batchnorm: bool | list[bool] = True
    head_dropout_rate: float = 0.0

    def __post_init__(self) -> None:
        self.hidden_dims = [int(d) for d in self.hidden_dims]
        if self.input_dim < 1 or any(d < 1 for d in self.hidden_dims):
            raise ValueError("all backbone dimensions must be >= 1")
        if not 0.0 <= self.head_dropout_rate < 1.0:
            raise ValueError("head_dropout_rate must lie in [0, 1)")
        if isinstance(self.use_batchnorm, (list, tuple)):
            self.use_batchnorm = [bool(b) for b in self.use_batchnorm]
            if len(self.use_batchnorm) != len(self.hidden_dims):
                raise ValueError("use_batchnorm needs one flag per hidden layer")
        else:
            self.use_batchnorm = bool(self.use_batchnorm)

    @property
    def batchnorm_flags(self) -> list[bool]:
        if isinstance(self.use_batchnorm, list):
            return list(self.use_batchnorm)
        return [self.use_batchnorm] * len(self.hidden_dims)

    @property
    def feature_dim(self) -> int:
        return self.hidden_dims[-1] if self.hidden_dims else self.input_dim


class BatchNorm:
    """Per-feature batch normalisation.

    Train mode normalises with the biased batch variance and folds the batch
    statistics into the running estimates; eval mode reads only the running
    estimates.
    """

    def __init__(self, dim: int, momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
        self.dim = dim
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        _check_mode(mode)
        if x.shape[-1] != self.dim:
            raise ng.ShapeError(f"BatchNorm expected {self.dim} features, got {x.shape[-1]}")
        if mode == "train":
            mu = x.mean(axis=0, keepdims=True)
            centered = x - mu
            var = ng.square(centered).mean(axis=0, keepdims=True)
            xhat = centered / ng.sqrt(var + self.eps)
            m = self.momentum
            self.running_mean = (1.0 - m) * self.running_mean + m * mu.data[0]
            self.running_var = (1.0 - m) * self.running_var + m * var.data[0]
        else:
            xhat = (x - self.running_mean) / np.sqrt(self.running_var + self.eps)
        return xhat * self.gamma + self.beta


class Linear:
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator):
        self.weight = he_init((fan_in, fan_out), fan_in, rng)
        self.bias = Tensor(np.zeros(fan_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


@dataclass
class FeatureBundle:
    """Post-activation features of every hidden layer; ``penultimate`` is the last."""

    layers: list[Tensor]

    @property
    def penultimate(self) -> Tensor:
        return self.layers[-1]


class Backbone:
    def __init__(self, spec: BackboneSpec, rng: np.random.Generator):
        self.spec = spec
        self.linears: list[Linear] = []
        self.norms: list[BatchNorm | None] = []
        fan_in = spec.input_dim
        for width, use_bn in zip(spec.hidden_dims, spec.batchnorm_flags):
            self.linears.append(Linear(fan_in, width, rng))
            self.norms.append(BatchNorm(width) if use_bn else None)
            fan_in = width

    def __call__(self, x, mode: str = "eval") -> FeatureBundle:
        _check_mode(mode)
        x = ng.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ng.ShapeError(
                f"backbone expects inputs of shape [B, {self.spec.input_dim}], got {x.shape}"
            )
        if not self.linears:
            return FeatureBundle([x])
        layers = []
        h = x
        for linear, bn in zip(self.linears, self.norms):
            h = linear(h)
            if bn is not None:
                h = bn(h, mode)
            h = ng.relu(h)
            layers.append(h)
        return FeatureBundle(layers)

    def named_parameters(self) -> list[tuple[str, Tensor, str]]:
        out = []
        for i, (linear, bn) in enumerate(zip(self.linears, self.norms)):
            out.append((f"backbone.{i}.weight", linear.weight, "weight"))
            out.append((f"backbone.{i}.bias", linear.bias, "bias"))
            if bn is not None:
                out.append((f"backbone.{i}.bn.gamma", bn.gamma, "bn"))
                out.append((f"backbone.{i}.bn.beta", bn.beta, "bn"))
        return out

    def batchnorms(self) -> list[tuple[str, BatchNorm]]:
        return [(f"backbone.{i}.bn", bn) for i, bn in enumerate(self.norms) if bn is not None]


def forward(model, x, mode: str = "eval") -> FeatureBundle:
    """Backbone features of ``model`` (a :class:`~godin.model.Model` or :class:`Backbone`)."""
    backbone = getattr(model, "backbone", model)
    return backbone(x, mode)
