import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from survchallenge import data, metrics
from survchallenge.data import (BadValue, CohortConfig, DegenerateSplit, EmptyDataset, Feature, FeatureSchema,
                                InvalidConfig, MissingColumn, ZeroVariance)

SCHEMA = FeatureSchema((
    Feature("age", "continuous"),
    Feature("stage", "categorical", ("I", "II")),
))


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


GOOD = "id,time,event,age,stage,volume\na,1.5,1,60,I,10\nb,2,0,70,,20\nc,30,1,55,II,0\n"


def test_load_well_formed(tmp_path):
    ds = data.load_dataset(write(tmp_path, GOOD), SCHEMA)
    assert len(ds) == 3
    assert ds.n_censored == 1
    assert ds.column("stage") == ["I", "missing", "II"]
    np.testing.assert_array_equal(ds.time, [1.5, 2.0, 30.0])
    np.testing.assert_array_equal(ds.volume, [10.0, 20.0, 0.0])


@pytest.mark.parametrize("row, col", [
    ("a,0,1,60,I,1", "time"),
    ("a,-2,1,60,I,1", "time"),
    ("a,x,1,60,I,1", "time"),
    ("a,1,2,60,I,1", "event"),
    ("a,1,1,,I,1", "age"),
    ("a,1,1,nan,I,1", "age"),
    ("a,1,1,60,III,1", "stage"),
    ("a,1,1,60,I,-1", "volume"),
])
def test_bad_values_name_row_and_column(tmp_path, row, col):
    p = write(tmp_path, "id,time,event,age,stage,volume\nok,1,1,50,I,1\n" + row + "\n")
    with pytest.raises(BadValue) as info:
        data.load_dataset(p, SCHEMA)
    assert info.value.row == 2
    assert info.value.column == col


def test_missing_column(tmp_path):
    with pytest.raises(MissingColumn):
        data.load_dataset(write(tmp_path, "id,time,event,age\na,1,1,3\n"), SCHEMA)


def test_empty_file(tmp_path):
    with pytest.raises(EmptyDataset):
        data.load_dataset(write(tmp_path, "id,time,event,age,stage\n"), SCHEMA)


def test_schema_always_has_missing_level():
    f = Feature("x", "categorical", ("a", "b"))
    assert f.levels == ("a", "b", "missing")
    with pytest.raises(InvalidConfig):
        Feature("x", "continuous", ("a",))
    with pytest.raises(InvalidConfig):
        FeatureSchema((Feature("x", "continuous"), Feature("x", "continuous")))
    with pytest.raises(InvalidConfig):
        Feature("x", "continuous", norm=(0.0, 0.0))


def test_schema_round_trip(tmp_path):
    schema = CohortConfig(n=1).schema()
    data.write_schema(schema, tmp_path / "s.json")
    back = data.load_schema(tmp_path / "s.json")
    assert back == schema
    assert back.digest() == schema.digest()


def test_dataset_round_trip_byte_identical(tmp_path):
    ds = data.synthesize_cohort(CohortConfig(n=50, seed=1))
    data.write_dataset(ds, tmp_path / "a.csv")
    back = data.load_dataset(tmp_path / "a.csv", ds.schema)
    data.write_dataset(back, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    np.testing.assert_array_equal(back.time, ds.time)
    assert [r.raw_values for r in back.records] == [r.raw_values for r in ds.records]


# --------------------------------------------------------------------------- encoding


def tiny_dataset(ages, stages, volumes=None):
    recs = [data.SurvivalRecord(f"p{i}", {"age": a, "stage": s}, 1.0 + i, True,
                                None if volumes is None else volumes[i])
            for i, (a, s) in enumerate(zip(ages, stages))]
    return data.SurvivalDataset(SCHEMA, recs)


def test_one_hot_and_centering():
    train = tiny_dataset([50.0, 70.0], ["I", "II"])
    test = tiny_dataset([60.0], ["I"])
    enc = data.encode(test, train)
    assert enc.columns == ["age", "stage=I", "stage=II", "stage=missing"]
    np.testing.assert_array_equal(enc.X, [[0.0, 1.0, 0.0, 0.0]])


def test_zero_variance_column():
    with pytest.raises(ZeroVariance):
        data.Encoder.fit(tiny_dataset([5.0, 5.0], ["I", "II"]))


def test_encoding_uses_training_statistics(cohort_split):
    train, test = cohort_split
    with_train = data.encode(test, train).X
    with_self = data.encode(test, test).X
    assert not np.allclose(with_train, with_self)
    enc = data.encode(train, train)
    cont = [k for k, c in enumerate(enc.columns) if "=" not in c]
    np.testing.assert_allclose(enc.X[:, cont].mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(enc.X[:, cont].std(axis=0), 1.0, atol=1e-9)


def test_encoded_shape_and_one_hot_sums(cohort):
    enc = data.Encoder.fit(cohort, volume=True)
    X = enc.transform(cohort).X
    feats = cohort.schema.features
    n_cat = sum(f.kind == "categorical" for f in feats)
    d = sum(1 if f.kind == "continuous" else len(f.levels) for f in feats) + 1
    assert X.shape == (len(cohort), d)
    onehot = [k for k, c in enumerate(enc.columns) if "=" in c]
    np.testing.assert_array_equal(X[:, onehot].sum(axis=1), n_cat)


def test_encoder_group_selection(cohort):
    enc = data.Encoder.fit(cohort, groups=("radiomic",))
    assert enc.columns == [f.name for f in cohort.schema.features if f.group == "radiomic"]
    assert "volume" not in data.Encoder.fit(cohort, groups=("clinical",)).columns


def test_unknown_category_at_transform():
    enc = data.Encoder.fit(tiny_dataset([1.0, 2.0], ["I", "II"]))
    other = FeatureSchema((Feature("age", "continuous"), Feature("stage", "categorical", ("I", "II", "IV"))))
    ds = data.SurvivalDataset(other, [data.SurvivalRecord("x", {"age": 1.0, "stage": "IV"}, 1.0, True)])
    with pytest.raises(BadValue):
        enc.transform(ds)


# --------------------------------------------------------------------------- synthesis


def test_synth_deterministic():
    cfg = CohortConfig(n=200)
    a = data.synthesize_cohort(cfg, seed=5)
    b = data.synthesize_cohort(cfg, seed=5)
    c = data.synthesize_cohort(cfg, seed=6)
    assert a == b
    assert a.metadata["true_risk"] == b.metadata["true_risk"]
    assert a != c


def test_synth_n_zero():
    with pytest.raises(EmptyDataset):
        data.synthesize_cohort(CohortConfig(n=0))


@pytest.mark.parametrize("bad", [{"n": 5, "lambda": 0}, {"n": 5, "censor_rate": -1}, {"n": 5, "beta": {"nope": 1}},
                                 {"n": 5, "unknown": 1}, {"lambda": 1.0}])
def test_synth_invalid_config(bad):
    with pytest.raises(InvalidConfig):
        data.synthesize_cohort(bad, seed=0)


def test_no_censoring_when_rate_zero():
    ds = data.synthesize_cohort(CohortConfig(n=300, censor_rate=0.0), seed=2)
    assert ds.event.all()


def test_null_beta_gives_chance_concordance():
    ds = data.synthesize_cohort(CohortConfig(n=10_000, beta={}, censor_rate=0.0), seed=4)
    rng = np.random.default_rng(0)
    c = metrics.concordance_index(rng.standard_normal(len(ds)), ds.time, ds.event)
    assert abs(c - 0.5) < 0.02


def test_followup_max_caps_times():
    ds = data.synthesize_cohort(CohortConfig(n=500, followup_max=30.0), seed=2)
    assert ds.time.max() <= 30.0


def test_labels_and_known_mask():
    recs = [data.SurvivalRecord(str(i), {"age": 1.0 + i, "stage": "I"}, t, e)
            for i, (t, e) in enumerate([(10, True), (10, False), (30, True), (24, True), (30, False)])]
    ds = data.SurvivalDataset(SCHEMA, recs)
    np.testing.assert_array_equal(ds.label_2yr(), [1, 0, 0, 1, 0])
    np.testing.assert_array_equal(ds.known_2yr(), [True, False, True, True, True])


# --------------------------------------------------------------------------- splits


def test_split_prefix():
    ds = data.synthesize_cohort(CohortConfig(n=10), seed=0)
    tr, te = data.split_train_test(ds, 0.7)
    assert tr.ids == ds.ids[:7] and te.ids == ds.ids[7:]
    assert tr.split_tag == "train" and te.split_tag == "test"
    assert set(tr.metadata["true_risk"]) == set(tr.ids)


def test_challenge_proportions():
    ds = data.synthesize_cohort(CohortConfig(n=2552), seed=0)
    tr, te = data.split_train_test(ds, 1802 / 2552)
    assert (len(tr), len(te)) == (1802, 750)


@pytest.mark.parametrize("fraction", [0.0, 1.0, 0.01])
def test_degenerate_split(fraction):
    ds = data.synthesize_cohort(CohortConfig(n=10), seed=0)
    with pytest.raises(DegenerateSplit):
        data.split_train_test(ds, fraction)


def test_split_by_key():
    ds = data.synthesize_cohort(CohortConfig(n=20), seed=0)
    tr, te = data.split_train_test(ds, 0.5, key=lambda r: r.time)
    assert max(tr.time) <= min(te.time)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 60), fraction=st.floats(0.05, 0.95))
def test_split_partitions(n, fraction):
    ds = data.synthesize_cohort(CohortConfig(n=n), seed=0)
    try:
        tr, te = data.split_train_test(ds, fraction)
    except DegenerateSplit:
        assert round(fraction * n) in (0, n)
        return
    assert tr.ids + te.ids == ds.ids
