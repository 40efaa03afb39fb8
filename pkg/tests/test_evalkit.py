import csv
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from godin.deconf import HeadSpec
from godin.evalkit import (
    DetectionReport,
    auroc,
    evaluate,
    histogram,
    tnr_at_tpr,
    tpr_threshold,
    validate_report,
)
from godin.model import Model
from godin.netcore import BackboneSpec
from godin.scorer import make_score_fn
from godin.shiftbench import LabeledSet


def pairwise_auroc(pos, neg):
    total = 0.0
    for a, b in itertools.product(pos, neg):
        total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))


def sweep_tnr(pos, neg, tpr=0.95):
    pos, neg = np.asarray(pos), np.asarray(neg)
    candidates = sorted(set(pos.tolist()) | set(neg.tolist()), reverse=True)
    for tau in candidates:
        if np.mean(pos >= tau) >= tpr:
            return float(np.mean(neg < tau))
    raise AssertionError("no threshold reaches the TPR")


def test_auroc_examples():
    assert auroc([3, 4], [1, 2]) == 1.0
    assert auroc([0.5], [0.5]) == 0.5
    assert auroc([3, 2], [1, 2]) == 0.875
    with pytest.raises(ValueError):
        auroc([], [1.0])


scores_st = st.lists(st.integers(-5, 5).map(float) | st.floats(-3, 3), min_size=1, max_size=60)


@settings(max_examples=200, deadline=None)
@given(scores_st, scores_st)
def test_auroc_matches_pairwise_oracle(a, b):
    assert abs(auroc(a, b) - pairwise_auroc(a, b)) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(scores_st, scores_st)
def test_auroc_is_antisymmetric(a, b):
    assert auroc(a, b) + auroc(b, a) == 1.0


@settings(max_examples=100, deadline=None)
@given(scores_st, scores_st)
def test_auroc_monotone_invariance(a, b):
    # a strictly increasing map that cannot merge distinct floats
    levels = np.unique(np.concatenate([a, b]))

    def f(v):
        return np.exp(np.searchsorted(levels, v) / 3.0) * 2.0 - 7.0

    assert auroc(f(a), f(b)) == auroc(a, b)


def test_tnr_examples():
    ids = np.arange(1, 101, dtype=float)
    assert tnr_at_tpr(ids, [-1.0, 0.0]) == 1.0
    assert tnr_at_tpr(ids, [200.0, 101.0]) == 0.0
    assert tpr_threshold(ids) == 6.0
    assert tnr_at_tpr(ids, [5.5, 50.5, 99.5]) == 1 / 3
    with pytest.raises(ValueError):
        tnr_at_tpr([], [1.0])
    with pytest.raises(ValueError):
        tpr_threshold([1.0], 1.0)


@settings(max_examples=200, deadline=None)
@given(scores_st, scores_st)
def test_tnr_matches_threshold_sweep(a, b):
    assert tnr_at_tpr(a, b) == sweep_tnr(a, b)
    tau = tpr_threshold(a)
    assert np.mean(np.asarray(a) >= tau) >= 0.95


def test_histogram_mass(rng):
    a, b = rng.normal(size=37), rng.normal(size=23)
    h = histogram(a, b)
    assert len(h["bin_edges"]) == 51
    assert sum(h["id_counts"]) == 37 and sum(h["ood_counts"]) == 23
    flat = histogram([1.0], [1.0])
    assert sum(flat["id_counts"]) == 1


def _sets(rng):
    val = LabeledSet(rng.normal(size=(40, 3)), np.zeros(40, dtype=int), "val")
    return val, {"ood-uniform": LabeledSet(rng.uniform(-3, 3, (30, 3)), None, "ood-uniform"),
                 "ood-gaussian": LabeledSet(rng.normal(size=(25, 3)), None, "ood-gaussian")}


def test_constant_logits_give_half(rng):
    m = Model(BackboneSpec(3, []), HeadSpec("PlainI", 3, 3))
    m.head.class_weights.data[:] = 0.0
    val, ood = _sets(rng)
    for r in evaluate(m, make_score_fn("baseline"), 0.0, val, ood, plain=True):
        assert r.auroc == 0.5


def _report(rng, eps=0.01):
    spec = BackboneSpec(3, [5])
    m = Model(spec, HeadSpec("C", 3, 5), seed=2)
    val, ood = _sets(rng)
    rep = DetectionReport("ab" * 32, 7)
    for kind in ("baseline", "deconf-g"):
        rep.entries += evaluate(m, make_score_fn(kind), eps, val, ood)
        rep.epsilon_search[kind] = {"epsilon": eps, "plain": False}
    return rep


def test_report_csv_is_consistent(tmp_path, rng):
    rep = _report(rng)
    path = rep.write_scores_csv(tmp_path / "scores.csv")
    with path.open() as fh:
        assert fh.readline() == f"# config_hash={'ab' * 32} seed=7\n"
        rows = list(csv.DictReader(fh))
    for e in rep.entries:
        pos = [float(r["score"]) for r in rows if r["score_fn"] == e.score_fn and r["tag"] == "val"]
        neg = [float(r["score"]) for r in rows if r["score_fn"] == e.score_fn and r["tag"] == e.ood_set]
        assert auroc(pos, neg) == e.auroc
        assert tnr_at_tpr(pos, neg) == e.tnr_at_tpr95
    hist = rep.write_histograms_csv(tmp_path / "h.csv").read_text().splitlines()
    assert len(hist) == 2 + 50 * len(rep.entries)


def test_report_validates(rng):
    rep = _report(rng)
    doc = rep.to_dict()
    validate_report(doc)
    assert len(doc["results"]) == 4
    for r in doc["results"]:
        assert sum(r["histogram"]["id_counts"]) == r["n_id"]
        assert sum(r["histogram"]["ood_counts"]) == r["n_ood"]
    import jsonschema

    doc["results"][0]["auroc"] = 1.5
    with pytest.raises(jsonschema.ValidationError):
        validate_report(doc)


def test_evaluate_needs_ood_sets(rng):
    val, _ = _sets(rng)
    with pytest.raises(ValueError):
        evaluate(None, make_score_fn("baseline"), 0.0, val, {})


def test_evaluate_records_score_shift(rng):
    rep = _report(rng, eps=0.02)
    for e in rep.entries:
        assert np.isfinite(e.id_score_shift) and np.isfinite(e.ood_score_shift)
        assert e.epsilon == 0.02
