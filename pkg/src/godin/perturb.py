"""Gradient-sign input preprocessing and label-free magnitude search."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numgrad as ng
from .numgrad import Tensor

DEFAULT_GRID = (0.0025, 0.005, 0.01, 0.02, 0.04, 0.08)


def input_gradient(model, x: np.ndarray, score_fn) -> np.ndarray:
    """Gradient of the summed scores with respect to each input row."""
    xt = Tensor(x, requires_grad=True)
    with ng.tape():
        total = score_fn(model, xt).sum()
        (g,) = ng.grad(total, [xt])
    return g.data


def perturb(model, x, score_fn, epsilon: float) -> np.ndarray:
    """Move every coordinate by ``epsilon`` in the direction that raises the score.

    Coordinates with a zero gradient stay where they are.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    if epsilon == 0:
        return x.copy()
    return x + epsilon * np.sign(input_gradient(model, x, score_fn))


def perturbed_scores(model, x, score_fn, epsilon: float) -> np.ndarray:
    x_hat = perturb(model, x, score_fn, epsilon)
    return np.array(score_fn(model, x_hat).data)


@dataclass
class EpsilonSearchResult:
    grid: list[float]
    mean_scores: list[float]
    best_epsilon: float
    epsilon: float
    score_name: str = ""

    def to_csv(self, path, header: str | None = None) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epsilon", "mean_score"])
            for eps, m in zip(self.grid, self.mean_scores):
                writer.writerow([repr(eps), repr(m)])
        return path


def select_epsilon(model, val_set, score_fn, grid=DEFAULT_GRID) -> EpsilonSearchResult:
    """Pick the grid magnitude maximising the mean perturbed score, then halve it.

    Only ``val_set.inputs`` is read. Ties go to the smallest magnitude.
    """
    if val_set.tag != "val":
        raise ValueError(f"epsilon search runs on the validation split, got {val_set.tag!r}")
    if len(val_set) == 0:
        raise ValueError("validation set is empty")
    grid = sorted(float(e) for e in grid)
    means = [float(np.mean(perturbed_scores(model, val_set.inputs, score_fn, e))) for e in grid]
    best = 0
    for i, m in enumerate(means):
        if m > means[best]:
            best = i
    return EpsilonSearchResult(
        grid=grid,
        mean_scores=means,
        best_epsilon=grid[best],
        epsilon=grid[best] / 2,
        score_name=getattr(score_fn, "name", ""),
    )
