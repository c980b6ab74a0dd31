import csv
import warnings
from collections import Counter

import numpy as np
import pytest

from bioanon.data import (
    Dataset,
    Schema,
    SynthConfig,
    generate_synthetic,
    load_csv,
    load_schema,
    save_csv,
    save_schema,
    split,
)
from bioanon.errors import (
    DatasetIOError,
    DegenerateSplit,
    DuplicateId,
    EmptyDataset,
    InvalidConfig,
    MissingColumn,
    NonNumericFeature,
    UnknownAttribute,
)
from bioanon.forest import ForestConfig, accuracy, train


def write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


EMOTION = Schema(("f0", "f1"), "emotion")


def test_load_three_rows(tmp_path):
    p = tmp_path / "d.csv"
    write_rows(p, [["f0", "f1", "emotion"], ["1", "2", "happy"], ["3", "4", "sad"], ["5", "6", "happy"]])
    ds = load_csv(p, EMOTION)
    assert len(ds) == 3 and ds.n_features == 2
    assert ds.ids == ("0", "1", "2")
    assert ds.labels["emotion"].tolist() == ["happy", "sad", "happy"]
    assert ds.features[2].tolist() == [5.0, 6.0]


def test_missing_column(tmp_path):
    p = tmp_path / "d.csv"
    write_rows(p, [["f0", "emotion"], ["1", "happy"]])
    with pytest.raises(MissingColumn) as err:
        load_csv(p, EMOTION)
    assert err.value.column == "f1"


def test_non_numeric_reports_row_and_column(tmp_path):
    p = tmp_path / "d.csv"
    write_rows(p, [["f0", "f1", "emotion"], ["1", "2", "a"], ["abc", "4", "b"]])
    with pytest.raises(NonNumericFeature) as err:
        load_csv(p, EMOTION)
    assert (err.value.row, err.value.col) == (2, "f0")


def test_duplicate_id(tmp_path):
    p = tmp_path / "d.csv"
    write_rows(p, [["id", "f0", "f1", "emotion"], ["x", "1", "2", "a"], ["x", "3", "4", "b"]])
    with pytest.raises(DuplicateId):
        load_csv(p, Schema(("f0", "f1"), "emotion", id_column="id"))


def test_empty_file(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("f0,f1,emotion\n")
    with pytest.raises(EmptyDataset):
        load_csv(p, EMOTION)


def test_prefix_schema(tmp_path):
    p = tmp_path / "d.csv"
    write_rows(p, [["id", "x0", "x1", "x2", "y"], ["a", "1", "2", "3", "u"], ["b", "4", "5", "6", "v"]])
    s = Schema.from_dict({"features": {"prefix": "x"}, "attribute_of_interest": "y", "id_column": "id"})
    ds = load_csv(p, s)
    assert ds.schema.feature_names == ("x0", "x1", "x2")


def test_schema_roles_disjoint():
    with pytest.raises(InvalidConfig):
        Schema(("f0", "emotion"), "emotion")
    with pytest.raises(InvalidConfig):
        Schema(("f0",), "a", sensitive_attributes=("a",))


def test_schema_json_round_trip(tmp_path):
    s = Schema(("f0", "f1"), "p", ("q",), ("s",), "id")
    save_schema(s, tmp_path / "s.json")
    assert load_schema(tmp_path / "s.json") == s


def test_round_trip_two_records(tmp_path):
    s = Schema(("f0", "f1"), "p", ("q",), ("s",), "id")
    ds = Dataset(s, ("r1", "r2"), [[0.1 + 0.2, -1e-300], [1 / 3, 2.5e17]],
                 {"p": ["a", "b"], "q": ["x", "x"], "s": ["m", "f"]})
    save_csv(ds, tmp_path / "d.csv")
    back = load_csv(tmp_path / "d.csv", s)
    assert back.equals(ds)
    assert back.features[0, 0] == 0.1 + 0.2


def test_round_trip_without_id_column(tmp_path):
    ds = Dataset(EMOTION, ("0", "1"), [[1.0, 2.0], [3.0, 4.0]], {"emotion": ["a", "b"]})
    save_csv(ds, tmp_path / "d.csv")
    with open(tmp_path / "d.csv") as fh:
        assert fh.readline().strip() == "id,f0,f1,emotion"
    back = load_csv(tmp_path / "d.csv", EMOTION)
    assert back.ids == ds.ids and np.array_equal(back.features, ds.features)


def test_float_serialisation_is_exact(tmp_path):
    # repr gives the shortest decimal that parses back to the same double
    value = 0.1 + 0.2
    assert repr(value) == "0.30000000000000004"
    ds = Dataset(EMOTION, ("0",), [[value, 0.0]], {"emotion": ["a"]})
    save_csv(ds, tmp_path / "d.csv")
    assert abs(load_csv(tmp_path / "d.csv", EMOTION).features[0, 0] - value) <= 1e-15


def test_unwritable_path(tmp_path):
    ds = Dataset(EMOTION, ("0",), [[1.0, 2.0]], {"emotion": ["a"]})
    with pytest.raises(DatasetIOError):
        save_csv(ds, tmp_path / "missing-dir" / "d.csv")
    with pytest.raises(OSError):  # DatasetIOError is also an OSError
        save_csv(ds, tmp_path / "missing-dir" / "d.csv")


def test_dataset_is_read_only():
    ds = Dataset(EMOTION, ("0",), [[1.0, 2.0]], {"emotion": ["a"]})
    with pytest.raises(ValueError):
        ds.features[0, 0] = 5.0
    with pytest.raises(UnknownAttribute):
        ds.labels_of("nope")


def test_nonfinite_rejected():
    with pytest.raises(NonNumericFeature):
        Dataset(EMOTION, ("0",), [[np.nan, 2.0]], {"emotion": ["a"]})


# -- split --------------------------------------------------------------------

def balanced(n=100, k=4):
    s = Schema(("f0",), "p")
    return Dataset(s, tuple(str(i) for i in range(n)), np.arange(n, dtype=float)[:, None],
                   {"p": [str(i % k) for i in range(n)]})


def test_split_stratified_counts():
    tr, ev = split(balanced(), 0.8, seed=1)
    assert (len(tr), len(ev)) == (80, 20)
    assert Counter(tr.labels["p"]) == {str(c): 20 for c in range(4)}
    assert Counter(ev.labels["p"]) == {str(c): 5 for c in range(4)}


def test_split_partition_and_order():
    ds = balanced()
    tr, ev = split(ds, 0.5, seed=3)
    assert sorted(tr.ids + ev.ids) == sorted(ds.ids)
    assert not set(tr.ids) & set(ev.ids)
    assert list(tr.ids) == sorted(tr.ids, key=int)


def test_split_degenerate_warns():
    s = Schema(("f0",), "p")
    ds = Dataset(s, ("a", "b"), [[0.0], [1.0]], {"p": ["x", "x"]})
    with pytest.warns(DegenerateSplit):
        tr, ev = split(ds, 0.5, seed=0)
    assert (len(tr), len(ev)) == (1, 1)


def test_split_seed_dependence():
    ds = balanced()
    a, _ = split(ds, 0.5, seed=11)
    b, _ = split(ds, 0.5, seed=11)
    c, _ = split(ds, 0.5, seed=12)
    assert a.ids == b.ids
    # two independent stratified halves coincide with probability ~ C(25,12)^-4
    assert set(a.ids) != set(c.ids)


def test_split_different_seeds_rarely_collide():
    ds = balanced()
    firsts = {split(ds, 0.5, seed=s)[0].ids for s in range(100)}
    assert len(firsts) >= 99


# -- synthetic ----------------------------------------------------------------

def test_synth_round_robin_identities():
    ds = generate_synthetic(SynthConfig(n_records=1000, n_identities=50))
    counts = Counter(ds.labels["identity"])
    assert len(counts) == 50 and set(counts.values()) == {20}


def test_synth_interest_balance_per_identity():
    ds = generate_synthetic(SynthConfig())
    pairs = Counter(zip(ds.labels["identity"], ds.labels["interest"]))
    assert set(pairs.values()) == {10}  # 2000 / (50 * 4)


def test_synth_sensitive_is_identity_trait():
    ds = generate_synthetic(SynthConfig())
    by_id = {}
    for i, s in zip(ds.labels["identity"], ds.labels["sensitive"]):
        by_id.setdefault(i, set()).add(s)
    assert all(len(v) == 1 for v in by_id.values())


def test_synth_deterministic():
    a = generate_synthetic(SynthConfig(seed=5))
    b = generate_synthetic(SynthConfig(seed=5))
    c = generate_synthetic(SynthConfig(seed=6))
    assert a.equals(b)
    assert not np.array_equal(a.features, c.features)


def test_synth_means_one_vs_rest():
    cfg = SynthConfig(n_records=400, noise_sigma=1e-3, class_separation=4.0)
    ds = generate_synthetic(cfg)
    X = ds.features
    for k in range(4):
        rows = X[ds.labels["interest"] == str(k)][:, 0:16]
        expected = np.where(np.arange(16) % 4 == k, 2.0, -2.0)
        assert np.allclose(rows.mean(axis=0), expected, atol=1e-2)


def test_synth_separable_interest_is_learnable():
    ds = generate_synthetic(SynthConfig(n_records=400, noise_sigma=0.01, class_separation=10.0))
    tr, ev = split(ds, 0.5, seed=0)
    model = train(tr, "interest", ForestConfig(n_trees=10, seed=0))
    assert accuracy(model, ev) == 1.0


def test_synth_additional_attribute():
    cfg = SynthConfig(n_additional_classes=3, additional_dims=(40, 46))
    ds = generate_synthetic(cfg)
    assert ds.schema.additional_attributes == ("additional",)
    assert set(ds.labels["additional"]) == {"0", "1", "2"}


@pytest.mark.parametrize("bad, field", [
    ({"interest_dims": (0, 100)}, "interest_dims"),
    ({"identity_dims": (10, 20)}, "identity_dims"),
    ({"n_records": 0}, "n_records"),
    ({"noise_sigma": -1.0}, "noise_sigma"),
    ({"n_additional_classes": 1}, "n_additional_classes"),
])
def test_synth_invalid_config_names_field(bad, field):
    with pytest.raises(InvalidConfig) as err:
        SynthConfig(**bad).validate()
    assert err.value.field == field


def test_synth_csv_round_trip(tmp_path):
    ds = generate_synthetic(SynthConfig(n_records=100, seed=2))
    save_csv(ds, tmp_path / "d.csv")
    save_schema(ds.schema, tmp_path / "s.json")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        back = load_csv(tmp_path / "d.csv", load_schema(tmp_path / "s.json"))
    assert back.equals(ds)
