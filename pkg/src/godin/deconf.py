"""Dividend/divisor classifier head.

Class logits are ``h_i(x) / g(x)`` where ``h`` is a similarity between the
penultimate features and a per-class weight vector, and ``g`` is a sigmoid
gate in (0, 1) shared by all classes. The ``Plain*`` variants fix ``g = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numgrad as ng
from .monitor import emit
from .netcore import BatchNorm, he_init
from .numgrad import Tensor

VARIANTS = ("I", "E", "C", "PlainI", "PlainE", "PlainC")

# floor for ||.|| in the cosine head; keeps zero feature vectors finite
COSINE_NORM_FLOOR = 1e-12


@dataclass
class HeadSpec:
    variant: str
    num_classes: int
    feature_dim: int
    g_batchnorm: bool = True

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown head variant {self.variant!r}; expected one of {VARIANTS}")
        if self.num_classes < 2:
            raise ValueError("a head needs at least 2 classes")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")

    @property
    def similarity(self) -> str:
        return self.variant[-1]

    @property
    def g_enabled(self) -> bool:
        return not self.variant.startswith("Plain")


def h_inner(fp: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """``w_i . fp + b_i`` for every class; ``weights`` is [C, d]."""
    _check_dims(fp, weights)
    return fp @ weights.T + bias


def h_euclid(fp: Tensor, weights: Tensor) -> Tensor:
    """Negative squared distance to each class weight vector."""
    _check_dims(fp, weights)
    b, d = fp.shape
    c = weights.shape[0]
    diff = ng.reshape(fp, (b, 1, d)) - ng.reshape(weights, (1, c, d))
    return -ng.square(diff).sum(axis=2)


def h_cosine(fp: Tensor, weights: Tensor) -> Tensor:
    """Cosine similarity to each class weight vector, in [-1, 1]."""
    _check_dims(fp, weights)
    fp_norm = ng.norm(fp, axis=1, floor=COSINE_NORM_FLOOR)
    w_norm = ng.norm(weights, axis=1, floor=COSINE_NORM_FLOOR)
    cos = (fp @ weights.T) / (fp_norm * w_norm.T)
    # rounding can push |cos| a few ulp past 1
    return ng.clip(cos, -1.0, 1.0)


def g_divisor(fp: Tensor, weight: Tensor, bias: Tensor, bn: BatchNorm | None, mode: str) -> Tensor:
    """Sigmoid gate ``sigma(BN(w_g . fp + b_g))`` of shape [B, 1]."""
    pre = fp @ weight + bias
    if bn is not None:
        pre = bn(pre, mode)
    return ng.sigmoid(pre)


def logits(h: Tensor, g: Tensor | None) -> Tensor:
    if g is None:
        return h
    if np.any(g.data <= 0):
        raise ValueError("divisor must be strictly positive")
    return h / g


def _check_dims(fp: Tensor, weights: Tensor) -> None:
    if fp.ndim != 2 or fp.shape[1] != weights.shape[1]:
        raise ng.ShapeError(f"features {fp.shape} do not match class weights {weights.shape}")


@dataclass
class HeadOutput:
    h: Tensor
    g: Tensor | None
    logits: Tensor


class DeConfHead:
    def __init__(self, spec: HeadSpec, rng: np.random.Generator):
        self.spec = spec
        c, d = spec.num_classes, spec.feature_dim
        self.class_weights = he_init((c, d), d, rng)
        self.class_bias = Tensor(np.zeros(c), requires_grad=True) if spec.similarity == "I" else None
        if spec.g_enabled:
            self.g_weight = he_init((d, 1), d, rng)
            self.g_bias = Tensor(np.zeros(1), requires_grad=True)
            self.g_bn = BatchNorm(1) if spec.g_batchnorm else None
        else:
            self.g_weight = self.g_bias = None
            self.g_bn = None

    def similarity(self, fp: Tensor) -> Tensor:
        kind = self.spec.similarity
        if kind == "I":
            h = h_inner(fp, self.class_weights, self.class_bias)
        elif kind == "E":
            h = h_euclid(fp, self.class_weights)
        else:
            h = h_cosine(fp, self.class_weights)
        emit(f"h_{kind}", h.data)
        return h

    def divisor(self, fp: Tensor, mode: str) -> Tensor | None:
        if not self.spec.g_enabled:
            return None
        g = g_divisor(fp, self.g_weight, self.g_bias, self.g_bn, mode)
        emit("g", g.data)
        return g

    def __call__(self, fp: Tensor, mode: str = "eval") -> HeadOutput:
        h = self.similarity(fp)
        g = self.divisor(fp, mode)
        return HeadOutput(h, g, logits(h, g))

    def named_parameters(self) -> list[tuple[str, Tensor, str]]:
        out = [("head.class_weights", self.class_weights, "class_weight")]
        if self.class_bias is not None:
            out.append(("head.class_bias", self.class_bias, "class_bias"))
        if self.g_weight is not None:
            out.append(("head.g_weight", self.g_weight, "divisor"))
            out.append(("head.g_bias", self.g_bias, "divisor"))
        if self.g_bn is not None:
            out.append(("head.g_bn.gamma", self.g_bn.gamma, "divisor"))
            out.append(("head.g_bn.beta", self.g_bn.beta, "divisor"))
        return out

    def batchnorms(self) -> list[tuple[str, BatchNorm]]:
        return [("head.g_bn", self.g_bn)] if self.g_bn is not None else []
