"""OoD scoring functions. Higher scores mean "more in-distribution".

Every score is built from :mod:`godin.numgrad` ops so that input gradients
are available for preprocessing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from . import numgrad as ng
from .monitor import emit
from .numgrad import Tensor

KINDS = ("baseline", "odin", "mahalanobis", "deconf-h", "deconf-g")
DEFAULT_TEMPERATURE = 1000.0
RIDGE_REL = 1e-6
RIDGE_FLOOR = 1e-12


class SingularCovarianceError(np.linalg.LinAlgError):
    pass


def _max_softmax(logits: Tensor) -> Tensor:
    return ng.max_along_axis(ng.softmax(logits, axis=1), axis=1)


def s_base(model, x) -> Tensor:
    """Maximum softmax probability."""
    return _max_softmax(model(x, "eval").logits)


def s_odin(model, x, temperature: float = DEFAULT_TEMPERATURE) -> Tensor:
    """Maximum softmax probability of temperature-scaled logits."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return _max_softmax(model(x, "eval").logits / temperature)


def s_deconf(model, x, branch: str = "h") -> Tensor:
    """``max_i h_i(x)`` for branch ``h``; the divisor ``g(x)`` for branch ``g``."""
    if branch not in ("h", "g"):
        raise ValueError("branch must be 'h' or 'g'")
    if branch == "g" and not model.head_spec.g_enabled:
        raise ValueError(f"head {model.head_spec.variant} has no divisor branch")
    out = model(x, "eval")
    if branch == "h":
        return ng.max_along_axis(out.h, axis=1)
    return ng.reshape(out.g, (out.g.shape[0],))


# --- Mahalanobis -----------------------------------------------------------


@dataclass
class LayerGaussian:
    means: np.ndarray  # [C, d]
    covariance: np.ndarray  # pooled, before the ridge
    ridge: float
    whitening: np.ndarray  # W with W.T @ W == inv(covariance + ridge*I)

    @property
    def whitened_means(self) -> np.ndarray:
        return self.means @ self.whitening.T

    def precision(self) -> np.ndarray:
        return self.whitening.T @ self.whitening


@dataclass
class MahalanobisParams:
    layers: list[LayerGaussian]
    alphas: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.alphas:
            self.alphas = [1.0] * len(self.layers)


def fit_gaussian(features: np.ndarray, labels: np.ndarray, num_classes: int) -> LayerGaussian:
    """Class means and a tied covariance pooled over classes (normalised by N)."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    n, d = features.shape
    counts = np.bincount(labels, minlength=num_classes)
    if np.any(counts < 2):
        raise ValueError("every class needs at least 2 samples")
    means = np.stack([features[labels == c].mean(axis=0) for c in range(num_classes)])
    centered = features - means[labels]
    cov = centered.T @ centered / n
    ridge = max(RIDGE_REL * float(np.trace(cov)) / d, RIDGE_FLOOR)
    try:
        chol = np.linalg.cholesky(cov + ridge * np.eye(d))
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(f"covariance not positive definite: {exc}") from None
    whitening = solve_triangular(chol, np.eye(d), lower=True)
    return LayerGaussian(means, cov, ridge, whitening)


def fit_mahalanobis(model, train_set) -> MahalanobisParams:
    feats = model.features(train_set.inputs, "eval")
    c = model.head_spec.num_classes
    return MahalanobisParams([fit_gaussian(f.data, train_set.labels, c) for f in feats.layers])


def layer_score(f: Tensor, layer: LayerGaussian) -> Tensor:
    """``max_i -(f - mu_i)^T Sigma^-1 (f - mu_i)`` per row."""
    z = f @ layer.whitening.T
    m = layer.whitened_means
    b, d = z.shape
    diff = ng.reshape(z, (b, 1, d)) - m.reshape(1, *m.shape)
    return ng.max_along_axis(-ng.square(diff).sum(axis=2), axis=1)


def s_maha_layers(model, params: MahalanobisParams, x) -> list[Tensor]:
    feats = model.features(x, "eval")
    if len(feats.layers) != len(params.layers):
        raise ValueError("Mahalanobis params were fitted on a different layer set")
    out = []
    for f, layer in zip(feats.layers, params.layers):
        s = layer_score(f, layer)
        emit("maha_layer", s.data)
        out.append(s)
    return out


def s_maha(model, params: MahalanobisParams, x) -> Tensor:
    total = None
    for alpha, s in zip(params.alphas, s_maha_layers(model, params, x)):
        term = s if alpha == 1.0 else s * alpha
        total = term if total is None else total + term
    return total


# --- uniform interface -----------------------------------------------------


@dataclass
class ScoreFn:
    kind: str
    temperature: float = DEFAULT_TEMPERATURE
    maha: MahalanobisParams | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown score kind {self.kind!r}; expected one of {KINDS}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    @property
    def name(self) -> str:
        return self.kind

    def __call__(self, model, x) -> Tensor:
        if self.kind == "baseline":
            return s_base(model, x)
        if self.kind == "odin":
            return s_odin(model, x, self.temperature)
        if self.kind == "mahalanobis":
            if self.maha is None:
                raise ValueError("Mahalanobis score needs fitted params")
            return s_maha(model, self.maha, x)
        return s_deconf(model, x, self.kind[-1])


def make_score_fn(kind: str, model=None, train_set=None, temperature: float = DEFAULT_TEMPERATURE) -> ScoreFn:
    if kind == "mahalanobis":
        if model is None or train_set is None:
            raise ValueError("Mahalanobis scoring needs a model and its training set")
        return ScoreFn(kind, temperature, fit_mahalanobis(model, train_set))
    return ScoreFn(kind, temperature)


def scores(score_fn, model, x) -> np.ndarray:
    """Score a batch without recording gradients."""
    return np.array(score_fn(model, np.asarray(x, dtype=np.float64)).data)
