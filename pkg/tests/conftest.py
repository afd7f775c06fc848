import numpy as np
import pytest

from imbsynth.data import Feature, FeatureKind, Row, Schema, Table


@pytest.fixture
def schema3():
    """Two continuous features and one categorical."""
    return Schema(
        features=(
            Feature("age", FeatureKind.CONTINUOUS),
            Feature("hours", FeatureKind.CONTINUOUS),
            Feature("edu", FeatureKind.CATEGORICAL, ("hs", "bsc", "msc")),
        ),
        target_name="income",
        target_labels=("low", "high"),
        minority_label="high",
    )


@pytest.fixture
def rows3(schema3):
    return Table(schema3, (
        Row((39.0, 40.0, "bsc"), "low"),
        Row((50.0, 13.0, "hs"), "low"),
        Row((38.0, 40.0, "msc"), "high"),
        Row((28.0, 45.0, "bsc"), "high"),
        Row((61.0, 38.0, "hs"), "low"),
        Row((45.0, 50.0, "msc"), "high"),
    ))


def random_row(schema, rng: np.random.Generator, sig_digits: int = 4) -> Row:
    """Random schema-conforming row with continuous values exact at sig_digits."""
    from imbsynth.textcodec import format_number

    values = []
    for f in schema.features:
        if f.kind is FeatureKind.CONTINUOUS:
            x = float(rng.normal(0.0, 10.0))
            values.append(float(format_number(x, sig_digits)))
        else:
            values.append(f.categories[int(rng.integers(len(f.categories)))])
    label = schema.target_labels[int(rng.integers(2))]
    return Row(tuple(values), label)
