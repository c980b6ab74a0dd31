import json
import math
import warnings
from pathlib import Path

import jsonschema
import numpy as np
import pytest

import oracles
from bioanon.cli import report_schema
from bioanon.data import Dataset, Schema, SynthConfig, generate_synthetic, split
from bioanon.errors import (
    KOutOfRange,
    MisalignedDatasets,
    MissingWeight,
    NotADistribution,
    OutOfRange,
    UntrainedModel,
    ZeroNormVector,
)
from bioanon.forest import ForestConfig, train
from bioanon.metrics import (
    Attack,
    UtilityWeights,
    cosine_distances,
    evaluate,
    kl_from_uniform,
    mean_kl_from_uniform,
    mixture,
    reidentify_cosine,
    topk_curve_from_ranks,
    topk_hit_rate,
    true_match_ranks,
    utility,
)

PAPER = Path(__file__).resolve().parents[1] / "paper.md"


def vectors(rows, ids=None):
    rows = np.asarray(rows, dtype=float)
    s = Schema(tuple(f"f{j}" for j in range(rows.shape[1])), "p", id_column="id")
    ids = ids or tuple(str(i) for i in range(len(rows)))
    return Dataset(s, ids, rows, {"p": ["a"] * len(rows)})


# -- utility and mixture ------------------------------------------------------

def test_utility_examples():
    assert utility(0.8, {}) == 0.8
    assert abs(utility(0.8, {"m": 0.9}, UtilityWeights({"m": 1.0})) - 1.7) < 1e-12
    assert abs(utility(0.788, {"mouth": 0.75}, UtilityWeights({"mouth": 0.5})) - 1.163) < 1e-12


def test_utility_missing_weight_warns():
    with pytest.warns(MissingWeight):
        assert utility(0.5, {"q": 0.9}) == 0.5


def test_utility_weight_validation():
    with pytest.raises(OutOfRange):
        UtilityWeights({"q": -1.0})


@pytest.mark.skipif(not PAPER.exists(), reason="paper text not available")
def test_reported_values_appear_in_source_text():
    text = PAPER.read_text(encoding="utf-8")
    assert "0.99, 0.99, 0.97, 0.70" in text
    assert "78.8\\%" in text


def test_mixture_examples():
    assert mixture(0.0) == 1.0
    assert mixture(1.0) == 0.0
    assert abs(mixture(0.03) - 0.97) < 1e-12
    with pytest.raises(OutOfRange):
        mixture(1.2)


# -- cosine -------------------------------------------------------------------

def test_self_match_rank_one():
    rng = np.random.default_rng(0)
    orig = vectors(rng.normal(size=(10, 4)))
    anon = vectors(orig.features[[7]], ids=("7",))
    ranked = reidentify_cosine(anon, orig)
    assert ranked[0][0] == "7"
    assert cosine_distances(orig.features[7], orig.features)[0, 7] == pytest.approx(0.0, abs=1e-15)


def test_cosine_scale_invariance_example():
    ranked = reidentify_cosine(vectors([[1.0, 0.0]], ids=("q",)), vectors([[0.0, 1.0], [2.0, 0.0]]))
    assert ranked == [["1", "0"]]


def test_cosine_tie_prefers_earlier_original():
    # originals 2 and 5 mirror each other about the query direction
    originals = vectors([[0, 1], [-1, 0], [1, 1], [0, -1], [-1, 1], [1, -1]])
    ranked = reidentify_cosine(vectors([[1.0, 0.0]], ids=("q",)), originals)[0]
    assert ranked[:2] == ["2", "5"]
    assert ranked == [str(i) for i in oracles.cosine_rank([1.0, 0.0], originals.features.tolist())]


def test_cosine_matches_oracle():
    rng = np.random.default_rng(1)
    orig = vectors(rng.normal(size=(30, 3)))
    queries = rng.normal(size=(10, 3))
    ranked = reidentify_cosine(vectors(queries), orig)
    for q, r in zip(queries, ranked):
        assert r == [str(i) for i in oracles.cosine_rank(q.tolist(), orig.features.tolist())]


def test_true_ranks_agree_with_full_lists():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(40, 5))
    orig = vectors(X)
    anon = vectors(X + rng.normal(scale=0.8, size=X.shape))
    ranks = true_match_ranks(anon, orig)
    ranked = reidentify_cosine(anon, orig)
    assert [r.index(i) for r, i in zip(ranked, anon.ids)] == ranks.tolist()


def test_zero_vector_rejected():
    with pytest.raises(ZeroNormVector):
        cosine_distances([[0.0, 0.0]], [[1.0, 0.0]])


# -- top-k --------------------------------------------------------------------

def test_topk_examples():
    ranked = [["a", "b", "c"], ["c", "a", "b"], ["b", "a", "c"]]
    truth = ["a", "b", "c"]
    assert topk_hit_rate(ranked, truth, 3) == 1.0
    assert topk_hit_rate(ranked, ["a", "c", "b"], 1) == 1.0
    with pytest.raises(KOutOfRange):
        topk_hit_rate(ranked, truth, 4)
    with pytest.raises(KOutOfRange):
        topk_hit_rate(ranked, truth, 0)


def test_topk_random_rankings():
    rng = np.random.default_rng(3)
    n, records = 100, 10_000
    ranks = rng.integers(0, n, size=records)  # true id position under a random permutation
    curve = topk_curve_from_ranks(ranks, n)
    assert abs(curve[4]["hit_rate"] - 0.05) <= 0.01
    assert curve[4]["random_baseline"] == 0.05
    assert curve[-1]["hit_rate"] == 1.0


def test_topk_curve_monotone():
    curve = topk_curve_from_ranks(np.array([0, 3, 3, 1, 9]), 10)
    hits = [c["hit_rate"] for c in curve]
    assert hits == sorted(hits) and hits[-1] == 1.0 and hits[0] == 0.2


# -- KL -----------------------------------------------------------------------

def test_kl_examples():
    assert kl_from_uniform([0.25] * 4) == 0.0
    assert abs(kl_from_uniform([1, 0, 0, 0]) - math.log(4)) < 1e-12
    assert abs(kl_from_uniform([1, 0, 0, 0]) - 1.386294) < 1e-6
    v = kl_from_uniform([0.5, 0.25, 0.25, 0.0])
    assert abs(v - 0.5 * math.log(2)) < 1e-12
    assert abs(v - 0.346574) < 1e-6
    assert abs(v - oracles.kl_uniform([0.5, 0.25, 0.25, 0.0])) < 1e-12


def test_kl_reverse_direction():
    p = [0.5, 0.25, 0.25]
    want = sum((1 / 3) * math.log((1 / 3) / q) for q in p)
    assert abs(kl_from_uniform(p, reverse=True) - want) < 1e-12
    # an empty class is floored rather than infinite
    assert math.isfinite(kl_from_uniform([1.0, 0.0], reverse=True))


def test_kl_rejects_non_distribution():
    with pytest.raises(NotADistribution):
        kl_from_uniform([0.5, 0.6])
    with pytest.raises(NotADistribution):
        mean_kl_from_uniform(np.array([[0.5, 0.4]]))


def test_mean_kl():
    P = np.array([[0.25] * 4, [1, 0, 0, 0]])
    assert abs(mean_kl_from_uniform(P) - math.log(4) / 2) < 1e-12


# -- evaluate -----------------------------------------------------------------

@pytest.fixture(scope="module")
def setup():
    ds = generate_synthetic(SynthConfig(n_records=400, seed=4))
    tr, ev = split(ds, 0.5, 0)
    cfg = ForestConfig(n_trees=15, seed=0)
    models = {a: train(tr, a, cfg) for a in ds.schema.attributes}
    return tr, ev, models


def test_evaluate_null_transform(setup):
    tr, ev, models = setup
    r = evaluate(tr, tr, models)
    assert r.accuracy_interest == 1.0
    assert r.mixture["identity"] < 0.05
    for s, acc in r.sensitive_accuracy.items():
        assert r.mixture[s] == 1.0 - acc
    jsonschema.validate(json.loads(r.to_json()), report_schema())


def test_evaluate_cosine(setup):
    _, ev, models = setup
    r = evaluate(ev, ev, models, attack=Attack.COSINE)
    assert r.mean_kl_nats is None and r.sensitive_accuracy == {"id": 1.0}
    assert len(r.topk_curve) == len(ev)
    jsonschema.validate(json.loads(r.to_json()), report_schema())


def test_evaluate_shuffled_sensitive_is_random_guess():
    rng = np.random.default_rng(0)
    big = generate_synthetic(SynthConfig(n_records=2000, seed=9))
    labels = {a: big.labels[a] for a in big.schema.attributes}
    labels["sensitive"] = np.array([str(v) for v in rng.integers(0, 2, size=len(big))])
    shuffled = Dataset(big.schema, big.ids, big.features, labels)
    a, b = split(shuffled, 0.5, 1)
    models = {
        "interest": train(a, "interest", ForestConfig(n_trees=10)),
        "sensitive": train(a, "sensitive", ForestConfig(n_trees=30)),
    }
    schema = Schema(big.schema.feature_names, "interest", (), ("sensitive",), "id")
    ev = Dataset(schema, b.ids, b.features, {k: b.labels[k] for k in ("interest", "sensitive")})
    r = evaluate(ev, ev, models)
    assert abs(r.mixture["sensitive"] - 0.5) < 0.05


def test_evaluate_misaligned(setup):
    tr, ev, models = setup
    with pytest.raises(MisalignedDatasets):
        evaluate(tr, ev, models)


def test_evaluate_needs_models(setup):
    tr, _, models = setup
    with pytest.raises(UntrainedModel):
        evaluate(tr, tr, {"identity": models["identity"]})


def test_report_json_sorted_and_stable(setup, tmp_path):
    tr, _, models = setup
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = evaluate(tr, tr, models, params={"x": 1})
        b = evaluate(tr, tr, models, params={"x": 1})
    a.save(tmp_path / "a.json")
    b.save(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    a.save_topk_csv(tmp_path / "k.csv")
    lines = (tmp_path / "k.csv").read_text().splitlines()
    assert lines[0] == "k,hit_rate,random_baseline" and len(lines) == 1 + len(a.topk_curve)
