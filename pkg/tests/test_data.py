import numpy as np
import pytest

from imbsynth.data import (
    DataError, Feature, FeatureKind, ImbalanceSpec, Row, Schema, Table,
    class_counts, generate_fixture, load_csv, load_schema, make_imbalanced,
    save_csv, save_schema, split_train_test,
)


def test_feature_validation():
    with pytest.raises(DataError):
        Feature("c", FeatureKind.CATEGORICAL)  # missing categories
    with pytest.raises(DataError):
        Feature("x", FeatureKind.CONTINUOUS, ("a", "b"))


def test_schema_validation(schema3):
    with pytest.raises(DataError):
        Schema((), "y", ("a", "b"), "a")
    with pytest.raises(DataError):  # duplicate feature names
        Schema((Feature("x", FeatureKind.CONTINUOUS),
                Feature("x", FeatureKind.CONTINUOUS)), "y", ("a", "b"), "a")
    with pytest.raises(DataError):  # target collides with feature
        Schema((Feature("y", FeatureKind.CONTINUOUS),), "y", ("a", "b"), "a")
    with pytest.raises(DataError):  # minority not a label
        Schema((Feature("x", FeatureKind.CONTINUOUS),), "y", ("a", "b"), "c")
    with pytest.raises(DataError):  # not exactly two labels
        Schema((Feature("x", FeatureKind.CONTINUOUS),), "y", ("a", "a"), "a")
    assert schema3.majority_label == "low"
    assert schema3.continuous_indices == [0, 1]
    assert schema3.categorical_indices == [2]


def test_schema_json_round_trip(schema3, tmp_path):
    path = tmp_path / "schema.json"
    save_schema(schema3, path)
    assert load_schema(path) == schema3


def test_row_validation(schema3):
    with pytest.raises(DataError):
        Table(schema3, (Row((1.0, 2.0), "low"),))  # wrong arity
    with pytest.raises(DataError):
        Table(schema3, (Row((1.0, 2.0, "phd"), "low"),))  # undeclared category
    with pytest.raises(DataError):
        Table(schema3, (Row((1.0, float("nan"), "hs"), "low"),))
    with pytest.raises(DataError):
        Table(schema3, (Row((1.0, 2.0, "hs"), "mid"),))  # undeclared label


def test_csv_round_trip(schema3, rows3, tmp_path):
    path = tmp_path / "data.csv"
    save_csv(rows3, path)
    loaded = load_csv(path, schema3)
    assert loaded == rows3


def test_csv_errors(schema3, tmp_path):
    path = tmp_path / "bad.csv"
    with pytest.raises(DataError, match="no such file"):
        load_csv(tmp_path / "missing.csv", schema3)

    path.write_text("wrong,header\n")
    with pytest.raises(DataError, match="header"):
        load_csv(path, schema3)

    head = "age,hours,edu,income\n"
    path.write_text(head + "1.0,2.0,hs\n")
    with pytest.raises(DataError, match="row 0"):
        load_csv(path, schema3)

    path.write_text(head + "1.0,abc,hs,low\n")
    with pytest.raises(DataError, match="'hours'"):
        load_csv(path, schema3)

    path.write_text(head + "1.0,2.0,phd,low\n")
    with pytest.raises(DataError, match="'edu'"):
        load_csv(path, schema3)

    path.write_text(head + "1.0,2.0,hs,mid\n")
    with pytest.raises(DataError, match="label"):
        load_csv(path, schema3)

    path.write_text(head + "1.0,,hs,low\n")
    with pytest.raises(DataError, match="missing cell"):
        load_csv(path, schema3)


def test_split_sizes_and_stratification():
    table = generate_fixture(200, 100, 2, 1, seed=3)
    train, test = split_train_test(table, 0.25, seed=0)
    assert len(train) == round(300 * 0.75)
    assert len(test) == 300 - len(train)
    tr, te = class_counts(train), class_counts(test)
    assert set(tr) == set(te) == {"neg", "pos"}
    # Proportions within one row of exact stratification.
    assert abs(tr["pos"] - 75) <= 1
    assert abs(tr["neg"] - 150) <= 1


def test_split_deterministic_and_validates():
    table = generate_fixture(40, 20, 1, 1, seed=5)
    a1, b1 = split_train_test(table, 0.2, seed=9)
    a2, b2 = split_train_test(table, 0.2, seed=9)
    assert a1 == a2 and b1 == b2
    with pytest.raises(DataError):
        split_train_test(table, 0.0, seed=0)
    with pytest.raises(DataError):
        split_train_test(table, 1.0, seed=0)


def test_split_keeps_minority_on_both_sides():
    table = generate_fixture(50, 2, 1, 0, seed=1)
    train, test = split_train_test(table, 0.2, seed=0)
    assert class_counts(train).get("pos", 0) >= 1
    assert class_counts(test).get("pos", 0) >= 1


def test_make_imbalanced():
    table = generate_fixture(120, 60, 2, 1, seed=2)
    train, _ = split_train_test(table, 0.2, seed=0)
    spec = ImbalanceSpec(q=0.2, seed=4)
    major, minor, minor_star = make_imbalanced(train, spec)
    assert all(r.label == "neg" for r in major.rows)
    assert all(r.label == "pos" for r in minor_star.rows)
    assert len(minor) == max(1, round(0.2 * len(minor_star)))
    assert set(minor.rows) <= set(minor_star.rows)
    assert len(major) + len(minor_star) == len(train)
    # Deterministic under the imbalance seed.
    again = make_imbalanced(train, spec)
    assert again[1] == minor


def test_imbalance_spec_bounds():
    with pytest.raises(DataError):
        ImbalanceSpec(q=0.0, seed=0)
    with pytest.raises(DataError):
        ImbalanceSpec(q=1.5, seed=0)
    ImbalanceSpec(q=1.0, seed=0)


def test_generate_fixture_shape_and_distribution():
    table = generate_fixture(400, 100, 4, 2, seed=7)
    counts = class_counts(table)
    assert counts == {"neg": 400, "pos": 100}
    assert table.schema.n_features == 6
    neg = np.array([r.values[:4] for r in table.rows if r.label == "neg"], dtype=float)
    pos = np.array([r.values[:4] for r in table.rows if r.label == "pos"], dtype=float)
    assert abs(neg.mean()) < 0.2
    assert abs(pos.mean() - 2.0) < 0.4
    assert table == generate_fixture(400, 100, 4, 2, seed=7)
    assert table != generate_fixture(400, 100, 4, 2, seed=8)


def test_generate_fixture_rejects_bad_counts():
    with pytest.raises(DataError):
        generate_fixture(0, 10, 2, 1, seed=0)
    with pytest.raises(DataError):
        generate_fixture(10, 10, 0, 0, seed=0)
