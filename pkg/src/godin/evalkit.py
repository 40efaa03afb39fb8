"""Detection metrics and report assembly.

In-distribution samples are the positives throughout.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .monitor import emit
from .perturb import perturbed_scores

REPORT_SCHEMA_VERSION = 1
HIST_BINS = 50


def _as_scores(values, name: str) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError(f"{name} is empty")
    return values


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values))
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], len(values)]
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + 1 + e) / 2.0
    return ranks


def auroc(id_scores, ood_scores) -> float:
    """P(s_id > s_ood) + P(s_id == s_ood) / 2 via the Mann-Whitney statistic."""
    pos = _as_scores(id_scores, "id_scores")
    neg = _as_scores(ood_scores, "ood_scores")
    n, m = len(pos), len(neg)
    ranks = _midranks(np.concatenate([pos, neg]))
    u = float(ranks[:n].sum()) - n * (n + 1) / 2.0
    pairs = n * m
    # divide on the smaller side so auroc(a, b) + auroc(b, a) == 1 exactly
    if 2 * u <= pairs:
        value = u / pairs
    else:
        value = 1.0 - (pairs - u) / pairs
    emit("metric", value)
    return value


def tpr_threshold(id_scores, tpr: float = 0.95) -> float:
    """Largest threshold keeping at least ``tpr`` of ID scores at or above it."""
    if not 0.0 < tpr < 1.0:
        raise ValueError("tpr must lie in (0, 1)")
    pos = np.sort(_as_scores(id_scores, "id_scores"))[::-1]
    n = len(pos)
    k = max(1, math.ceil(tpr * n))
    while k > 1 and (k - 1) / n >= tpr:
        k -= 1
    while k / n < tpr:
        k += 1
    return float(pos[k - 1])


def tnr_at_tpr(id_scores, ood_scores, tpr: float = 0.95) -> float:
    """Fraction of OoD scores strictly below the ``tpr`` threshold."""
    neg = _as_scores(ood_scores, "ood_scores")
    tau = tpr_threshold(id_scores, tpr)
    value = float(np.mean(neg < tau))
    emit("metric", value)
    return value


def histogram(id_scores, ood_scores, bins: int = HIST_BINS) -> dict:
    pos = _as_scores(id_scores, "id_scores")
    neg = _as_scores(ood_scores, "ood_scores")
    pooled = np.concatenate([pos, neg])
    lo, hi = float(pooled.min()), float(pooled.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    return {
        "bin_edges": edges.tolist(),
        "id_counts": np.histogram(pos, edges)[0].tolist(),
        "ood_counts": np.histogram(neg, edges)[0].tolist(),
    }


@dataclass
class PairResult:
    score_fn: str
    ood_set: str
    auroc: float
    tnr_at_tpr95: float
    epsilon: float
    plain: bool
    n_id: int
    n_ood: int
    id_score_shift: float
    ood_score_shift: float
    histogram: dict
    id_scores: np.ndarray = field(repr=False, default=None)
    ood_scores: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("id_scores")
        d.pop("ood_scores")
        return d


@dataclass
class DetectionReport:
    config_hash: str
    seed: int
    entries: list[PairResult] = field(default_factory=list)
    epsilon_search: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "config": self.config,
            "epsilon_search": self.epsilon_search,
            "results": [e.to_dict() for e in self.entries],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.dumps())
        return path

    def write_scores_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            fh.write(f"# config_hash={self.config_hash} seed={self.seed}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["score_fn", "sample_id", "tag", "score"])
            written_id = set()
            for e in self.entries:
                if e.score_fn not in written_id:
                    written_id.add(e.score_fn)
                    for i, s in enumerate(e.id_scores):
                        writer.writerow([e.score_fn, i, "val", repr(float(s))])
                for i, s in enumerate(e.ood_scores):
                    writer.writerow([e.score_fn, i, e.ood_set, repr(float(s))])
        return path

    def write_histograms_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            fh.write(f"# config_hash={self.config_hash} seed={self.seed}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["score_fn", "ood_set", "bin_lo", "bin_hi", "id_count", "ood_count"])
            for e in self.entries:
                h = e.histogram
                edges = h["bin_edges"]
                for j, (ci, co) in enumerate(zip(h["id_counts"], h["ood_counts"])):
                    writer.writerow([e.score_fn, e.ood_set, repr(edges[j]), repr(edges[j + 1]),
                                     ci, co])
        return path


def evaluate(model, score_fn, epsilon: float, id_set, ood_sets: dict, plain: bool = False) -> list[PairResult]:
    """Perturb every set with ``epsilon``, score it and compare each OoD set with ``id_set``."""
    if not ood_sets:
        raise ValueError("no OoD sets given")
    name = getattr(score_fn, "name", "score")
    id_clean = perturbed_scores(model, id_set.inputs, score_fn, 0.0)
    id_scores = perturbed_scores(model, id_set.inputs, score_fn, epsilon) if epsilon else id_clean
    results = []
    for tag, ood in ood_sets.items():
        ood_clean = perturbed_scores(model, ood.inputs, score_fn, 0.0)
        ood_scores = perturbed_scores(model, ood.inputs, score_fn, epsilon) if epsilon else ood_clean
        results.append(PairResult(
            score_fn=name,
            ood_set=tag,
            auroc=auroc(id_scores, ood_scores),
            tnr_at_tpr95=tnr_at_tpr(id_scores, ood_scores, 0.95),
            epsilon=float(epsilon),
            plain=plain,
            n_id=len(id_scores),
            n_ood=len(ood_scores),
            id_score_shift=float(np.mean(id_scores - id_clean)),
            ood_score_shift=float(np.mean(ood_scores - ood_clean)),
            histogram=histogram(id_scores, ood_scores),
            id_scores=id_scores,
            ood_scores=ood_scores,
        ))
    return results


def report_schema() -> dict:
    return json.loads(resources.files("godin").joinpath("report.schema.json").read_text())


def validate_report(doc: dict) -> None:
    import jsonschema

    jsonschema.validate(doc, report_schema())
