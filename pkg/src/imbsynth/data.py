"""Dataset model: schema, CSV ingestion, splitting, imbalance construction, fixtures."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np


class DataError(Exception):
    """Raised for malformed schemas, CSV files, or degenerate datasets."""


class FeatureKind(str, Enum):
    CONTINUOUS = "continuous"
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class Feature:
    name: str
    kind: FeatureKind
    categories: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind is FeatureKind.CATEGORICAL:
            if not self.categories:
                raise DataError(f"categorical feature {self.name!r} needs a category list")
        elif self.categories is not None:
            raise DataError(f"continuous feature {self.name!r} must not declare categories")


@dataclass(frozen=True)
class Schema:
    features: tuple[Feature, ...]
    target_name: str
    target_labels: tuple[str, str]
    minority_label: str

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(names) < 1:
            raise DataError("schema needs at least one feature")
        if len(set(names)) != len(names):
            raise DataError("feature names must be unique")
        if self.target_name in names:
            raise DataError("target name collides with a feature name")
        if len(self.target_labels) != 2 or len(set(self.target_labels)) != 2:
            raise DataError("target must have exactly 2 distinct labels")
        if self.minority_label not in self.target_labels:
            raise DataError("minority label must be one of the target labels")

    @property
    def n_features(self) -> int:
        return len(self.features)

    @property
    def continuous_indices(self) -> list[int]:
        return [i for i, f in enumerate(self.features) if f.kind is FeatureKind.CONTINUOUS]

    @property
    def categorical_indices(self) -> list[int]:
        return [i for i, f in enumerate(self.features) if f.kind is FeatureKind.CATEGORICAL]

    @property
    def majority_label(self) -> str:
        a, b = self.target_labels
        return b if a == self.minority_label else a

    def to_json_dict(self) -> dict:
        feats = []
        for f in self.features:
            d: dict = {"name": f.name, "kind": f.kind.value}
            if f.categories is not None:
                d["categories"] = list(f.categories)
            feats.append(d)
        return {
            "features": feats,
            "target": {
                "name": self.target_name,
                "labels": list(self.target_labels),
                "minority_label": self.minority_label,
            },
        }

    @staticmethod
    def from_json_dict(obj: dict) -> "Schema":
        try:
            feats = tuple(
                Feature(
                    name=f["name"],
                    kind=FeatureKind(f["kind"]),
                    categories=tuple(f["categories"]) if "categories" in f else None,
                )
                for f in obj["features"]
            )
            target = obj["target"]
            return Schema(
                features=feats,
                target_name=target["name"],
                target_labels=tuple(target["labels"]),
                minority_label=target["minority_label"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad schema document: {exc}") from exc


def load_schema(path: str | Path) -> Schema:
    with open(path, encoding="utf-8") as fh:
        return Schema.from_json_dict(json.load(fh))


def save_schema(schema: Schema, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass(frozen=True)
class Row:
    values: tuple
    label: str


@dataclass(frozen=True)
class Table:
    schema: Schema
    rows: tuple[Row, ...]

    def __post_init__(self):
        for r in self.rows:
            validate_row(r, self.schema)

    def __len__(self) -> int:
        return len(self.rows)

    def subset(self, indices) -> "Table":
        return Table(self.schema, tuple(self.rows[i] for i in indices))

    def with_rows(self, rows) -> "Table":
        return Table(self.schema, tuple(rows))


def validate_row(row: Row, schema: Schema) -> None:
    if len(row.values) != schema.n_features:
        raise DataError(
            f"row has {len(row.values)} values, schema has {schema.n_features} features"
        )
    for v, f in zip(row.values, schema.features):
        if f.kind is FeatureKind.CONTINUOUS:
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not np.isfinite(v):
                raise DataError(f"feature {f.name!r} expects a finite number, got {v!r}")
        else:
            if v not in f.categories:
                raise DataError(f"value {v!r} not a declared category of {f.name!r}")
    if row.label not in schema.target_labels:
        raise DataError(f"label {row.label!r} not a declared target label")


@dataclass(frozen=True)
class ImbalanceSpec:
    q: float
    seed: int

    def __post_init__(self):
        if not (0.0 < self.q <= 1.0):
            raise DataError(f"imbalance ratio must be in (0, 1], got {self.q}")


def load_csv(path: str | Path, schema: Schema) -> Table:
    """Read an RFC-4180-style CSV whose header matches the schema column order."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    expected_header = [f.name for f in schema.features] + [schema.target_name]
    rows: list[Row] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        if header != expected_header:
            raise DataError(f"{path}: header {header} does not match schema {expected_header}")
        for idx, record in enumerate(reader):
            if len(record) != len(expected_header):
                raise DataError(f"{path}: row {idx} has {len(record)} cells, expected {len(expected_header)}")
            values = []
            for j, feat in enumerate(schema.features):
                cell = record[j]
                if cell == "":
                    raise DataError(f"{path}: row {idx}, column {feat.name!r}: missing cell")
                if feat.kind is FeatureKind.CONTINUOUS:
                    try:
                        values.append(float(cell))
                    except ValueError:
                        raise DataError(
                            f"{path}: row {idx}, column {feat.name!r}: unparseable number {cell!r}"
                        ) from None
                else:
                    if cell not in feat.categories:
                        raise DataError(
                            f"{path}: row {idx}, column {feat.name!r}: undeclared category {cell!r}"
                        )
                    values.append(cell)
            label = record[-1]
            if label not in schema.target_labels:
                raise DataError(f"{path}: row {idx}: undeclared label {label!r}")
            rows.append(Row(tuple(values), label))
    return Table(schema, tuple(rows))


def save_csv(table: Table, path: str | Path) -> None:
    schema = table.schema
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f.name for f in schema.features] + [schema.target_name])
        for row in table.rows:
            cells = []
            for v, f in zip(row.values, schema.features):
                cells.append(repr(float(v)) if f.kind is FeatureKind.CONTINUOUS else v)
            writer.writerow(cells + [row.label])


def class_counts(table: Table) -> dict[str, int]:
    counts: dict[str, int] = {}
    for row in table.rows:
        counts[row.label] = counts.get(row.label, 0) + 1
    return counts


def split_train_test(table: Table, test_fraction: float, seed: int) -> tuple[Table, Table]:
    """Deterministic stratified split; train gets round(N*(1-f)) rows."""
    if not (0.0 < test_fraction < 1.0):
        raise DataError(f"test fraction must be in (0, 1), got {test_fraction}")
    if len(table) == 0:
        raise DataError("cannot split an empty table")
    counts = class_counts(table)
    for label, n in counts.items():
        if n < 2:
            raise DataError(f"label {label!r} has only {n} row(s); cannot stratify")

    n_total = len(table)
    n_train = int(round(n_total * (1.0 - test_fraction)))
    rng = np.random.default_rng(seed)

    by_label: dict[str, list[int]] = {}
    for i, row in enumerate(table.rows):
        by_label.setdefault(row.label, []).append(i)
    labels = sorted(by_label)

    # Largest-remainder apportionment of the global train size across labels.
    quotas = {lab: len(by_label[lab]) * (1.0 - test_fraction) for lab in labels}
    take = {lab: int(np.floor(quotas[lab])) for lab in labels}
    leftover = n_train - sum(take.values())
    order = sorted(labels, key=lambda lab: (-(quotas[lab] - take[lab]), lab))
    for lab in order[:leftover]:
        take[lab] += 1
    # Keep both labels represented on both sides where the counts permit.
    for lab in labels:
        n_lab = len(by_label[lab])
        if take[lab] == n_lab:
            take[lab] -= 1
            donor = next(l for l in labels if l != lab)
            take[donor] += 1
        elif take[lab] == 0:
            take[lab] += 1
            donor = next(l for l in labels if l != lab)
            take[donor] -= 1

    train_idx: list[int] = []
    test_idx: list[int] = []
    for lab in labels:
        idx = np.array(by_label[lab])
        rng.shuffle(idx)
        train_idx.extend(idx[: take[lab]].tolist())
        test_idx.extend(idx[take[lab]:].tolist())
    train_idx.sort()
    test_idx.sort()
    return table.subset(train_idx), table.subset(test_idx)


def make_imbalanced(train: Table, spec: ImbalanceSpec) -> tuple[Table, Table, Table]:
    """Return (major, minor, minor_star); minor keeps max(1, round(q*|minor_star|)) rows."""
    schema = train.schema
    minor_idx = [i for i, r in enumerate(train.rows) if r.label == schema.minority_label]
    major_idx = [i for i, r in enumerate(train.rows) if r.label != schema.minority_label]
    if not minor_idx:
        raise DataError("training table has no minority rows")
    minor_star = train.subset(minor_idx)
    n_keep = max(1, int(round(spec.q * len(minor_idx))))
    rng = np.random.default_rng(spec.seed)
    keep = sorted(rng.choice(len(minor_idx), size=n_keep, replace=False).tolist())
    minor = minor_star.subset(keep)
    major = train.subset(major_idx)
    return major, minor, minor_star


def generate_fixture(n_major: int, n_minor: int, m_con: int, m_cat: int, seed: int) -> Table:
    """Deterministic synthetic dataset with a known separating rule.

    Continuous features: majority ~ N(0, 1), minority ~ N(2, 1), so the minority
    cluster is shifted by two standard deviations on every continuous feature.
    Categorical features: majority draws (low, mid, high) with probabilities
    (0.6, 0.3, 0.1); the minority uses the reversed probabilities.
    """
    if n_major < 1 or n_minor < 1 or m_con < 0 or m_cat < 0 or m_con + m_cat < 1:
        raise DataError("fixture counts must be positive")
    categories = ("low", "mid", "high")
    features = [Feature(f"con{i + 1}", FeatureKind.CONTINUOUS) for i in range(m_con)]
    features += [Feature(f"cat{i + 1}", FeatureKind.CATEGORICAL, categories) for i in range(m_cat)]
    schema = Schema(
        features=tuple(features),
        target_name="outcome",
        target_labels=("neg", "pos"),
        minority_label="pos",
    )
    rng = np.random.default_rng(seed)
    rows: list[Row] = []
    major_probs = np.array([0.6, 0.3, 0.1])
    for label, count, shift, probs in (
        ("neg", n_major, 0.0, major_probs),
        ("pos", n_minor, 2.0, major_probs[::-1]),
    ):
        con = rng.normal(loc=shift, scale=1.0, size=(count, m_con))
        cat = rng.choice(len(categories), size=(count, m_cat), p=probs)
        for i in range(count):
            values = [round(float(x), 3) for x in con[i]]
            values += [categories[j] for j in cat[i]]
            rows.append(Row(tuple(values), label))
    return Table(schema, tuple(rows))
