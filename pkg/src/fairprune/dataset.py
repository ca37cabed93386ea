"""Datasets with sensitive attributes: CSV ingestion, perturbation, folds.

A :class:`Dataset` keeps the general (non-sensitive) features and the
sensitive attributes in separate matrices. Learners see both, concatenated
by :meth:`Dataset.features`; a :class:`PerturbedView` supplies an alternative
sensitive matrix so that predictions can be compared row by row.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DataError,
    DegenerateAttribute,
    EmptyFile,
    InvalidInput,
    MissingColumn,
    NoSensitiveAttributes,
    TooFewRows,
    UnparseableValue,
)

MISSING_TOKENS = frozenset({"", "?", "na", "n/a", "nan", "null", "none"})


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    general_features: np.ndarray
    sensitive_attrs: np.ndarray
    labels: np.ndarray
    n_classes: int
    sensitive_cardinality: tuple[int, ...]
    privileged_values: tuple[int, ...] = ()
    feature_names: tuple[str, ...] = ()
    sensitive_names: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.asarray(self.general_features, dtype=np.float64)
        X = _frozen(X.reshape(-1, 1) if X.ndim == 1 else X, np.float64)
        y = _frozen(self.labels, np.int64)
        n = y.shape[0]
        A = np.asarray(self.sensitive_attrs, dtype=np.int64)
        if A.size == 0:
            A = A.reshape(n, 0)
        A = _frozen(A, np.int64)
        object.__setattr__(self, "general_features", X)
        object.__setattr__(self, "sensitive_attrs", A)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "sensitive_cardinality", tuple(int(c) for c in self.sensitive_cardinality))
        if not self.privileged_values:
            object.__setattr__(self, "privileged_values", tuple(1 for _ in self.sensitive_cardinality))
        else:
            object.__setattr__(self, "privileged_values", tuple(int(v) for v in self.privileged_values))
        if not self.feature_names:
            object.__setattr__(self, "feature_names", tuple(f"x{j}" for j in range(X.shape[1])))
        if not self.sensitive_names:
            object.__setattr__(self, "sensitive_names", tuple(f"a{j}" for j in range(A.shape[1])))
        self._validate()

    def _validate(self):
        X, A, y = self.general_features, self.sensitive_attrs, self.labels
        if X.ndim != 2 or A.ndim != 2 or y.ndim != 1:
            raise InvalidInput("features and sensitive attributes must be 2-d, labels 1-d")
        n = y.shape[0]
        if X.shape[0] != n or A.shape[0] != n:
            raise InvalidInput(f"row counts differ: {X.shape[0]}, {A.shape[0]}, {n}")
        if self.n_classes < 2:
            raise InvalidInput("n_classes must be >= 2")
        if n and (y.min() < 0 or y.max() >= self.n_classes):
            raise InvalidInput("labels out of range")
        if len(self.sensitive_cardinality) != A.shape[1]:
            raise InvalidInput("one cardinality per sensitive attribute required")
        if len(self.privileged_values) != A.shape[1]:
            raise InvalidInput("one privileged value per sensitive attribute required")
        for j, card in enumerate(self.sensitive_cardinality):
            if card < 1:
                raise InvalidInput(f"cardinality of attribute {j} must be >= 1")
            col = A[:, j]
            if n and (col.min() < 0 or col.max() >= card):
                raise InvalidInput(f"sensitive attribute {j} has values outside [0, {card})")
        if len(self.feature_names) != X.shape[1] or len(self.sensitive_names) != A.shape[1]:
            raise InvalidInput("column name count does not match matrix width")
        if not np.all(np.isfinite(X)):
            raise InvalidInput("general features must be finite")

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_sensitive(self) -> int:
        return int(self.sensitive_attrs.shape[1])

    def features(self, sensitive=None) -> np.ndarray:
        """Full feature matrix ``[general | sensitive]``.

        Pass ``sensitive`` to substitute a perturbed assignment.
        """
        A = self.sensitive_attrs if sensitive is None else np.asarray(sensitive)
        return np.hstack([self.general_features, A.astype(np.float64)])

    def group(self, attr: int = 0) -> np.ndarray:
        """Binary membership: 1 for the privileged value of ``attr``, else 0."""
        return (self.sensitive_attrs[:, attr] == self.privileged_values[attr]).astype(np.int64)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(
            self.general_features[rows],
            self.sensitive_attrs[rows],
            self.labels[rows],
            self.n_classes,
            self.sensitive_cardinality,
            self.privileged_values,
            self.feature_names,
            self.sensitive_names,
        )

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        meta = {
            "shape": [self.n, self.general_features.shape[1], self.n_sensitive],
            "n_classes": self.n_classes,
            "cardinality": list(self.sensitive_cardinality),
        }
        h.update(json.dumps(meta, sort_keys=True).encode())
        h.update(np.ascontiguousarray(self.general_features).tobytes())
        h.update(np.ascontiguousarray(self.sensitive_attrs).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class PerturbedView:
    perturbed_sensitive: np.ndarray
    source_fingerprint: str
    seed: int


@dataclass(frozen=True, eq=False)
class FoldPlan:
    k: int
    assignments: np.ndarray
    seed: int

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def sizes(self) -> list[int]:
        return np.bincount(self.assignments, minlength=self.k).tolist()


@dataclass(frozen=True)
class SensitiveColumn:
    name: str
    cardinality: int
    privileged: int = 1
    values: tuple[str, ...] | None = None


@dataclass(frozen=True)
class DatasetSchema:
    label_column: str
    sensitive_columns: tuple[SensitiveColumn, ...]
    positive_label: str | float | int | None = None
    label_values: tuple[str, ...] | None = None
    categorical_columns: tuple[tuple[str, str], ...] = ()
    drop_columns: tuple[str, ...] = ()
    delimiter: str = ","

    def __post_init__(self):
        for s in self.sensitive_columns:
            if s.cardinality < 1:
                raise InvalidInput(f"sensitive column {s.name!r}: cardinality must be >= 1")
            if not 0 <= s.privileged < s.cardinality:
                raise InvalidInput(f"sensitive column {s.name!r}: privileged value out of range")
            if s.values is not None and len(s.values) != s.cardinality:
                raise InvalidInput(f"sensitive column {s.name!r}: values list must match cardinality")
        for _, policy in self.categorical_columns:
            if policy not in ("onehot", "drop_first"):
                raise InvalidInput(f"unknown binarization policy {policy!r}")

    @classmethod
    def from_dict(cls, doc: dict) -> "DatasetSchema":
        try:
            sens = []
            for s in doc.get("sensitive", []):
                if isinstance(s, str):
                    s = {"name": s}
                values = tuple(str(v) for v in s["values"]) if s.get("values") is not None else None
                card = int(s.get("cardinality", len(values) if values else 2))
                sens.append(SensitiveColumn(s["name"], card, int(s.get("privileged", 1)), values))
            cats = []
            for c in doc.get("categorical", []):
                if isinstance(c, str):
                    cats.append((c, "onehot"))
                else:
                    cats.append((c["name"], c.get("policy", "onehot")))
            lv = doc.get("label_values")
            return cls(
                label_column=doc["label"],
                sensitive_columns=tuple(sens),
                positive_label=doc.get("positive_label"),
                label_values=tuple(str(v) for v in lv) if lv is not None else None,
                categorical_columns=tuple(cats),
                drop_columns=tuple(doc.get("drop", [])),
                delimiter=doc.get("delimiter", ","),
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed schema document: {exc}") from exc

    @classmethod
    def load(cls, path) -> "DatasetSchema":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise DataError(f"schema file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"schema file {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        doc = {
            "label": self.label_column,
            "sensitive": [
                {
                    "name": s.name,
                    "cardinality": s.cardinality,
                    "privileged": s.privileged,
                    **({"values": list(s.values)} if s.values is not None else {}),
                }
                for s in self.sensitive_columns
            ],
            "categorical": [{"name": n, "policy": p} for n, p in self.categorical_columns],
            "delimiter": self.delimiter,
        }
        if self.positive_label is not None:
            doc["positive_label"] = self.positive_label
        if self.label_values is not None:
            doc["label_values"] = list(self.label_values)
        if self.drop_columns:
            doc["drop"] = list(self.drop_columns)
        return doc


def _parse_float(raw, row, column):
    if raw.strip().lower() in MISSING_TOKENS:
        raise UnparseableValue(row, column, raw)
    try:
        v = float(raw)
    except ValueError:
        raise UnparseableValue(row, column, raw) from None
    if not math.isfinite(v):
        raise UnparseableValue(row, column, raw)
    return v


def _parse_label(raw, row, schema):
    col = schema.label_column
    if raw.strip().lower() in MISSING_TOKENS:
        raise UnparseableValue(row, col, raw)
    if schema.label_values is not None:
        try:
            return schema.label_values.index(raw.strip())
        except ValueError:
            raise UnparseableValue(row, col, raw) from None
    pos = schema.positive_label
    if isinstance(pos, str):
        return int(raw.strip() == pos)
    v = _parse_float(raw, row, col)
    if pos is not None:
        return int(v == float(pos))
    if v != int(v):
        raise UnparseableValue(row, col, raw)
    return int(v)


def _parse_sensitive(raw, row, spec: SensitiveColumn):
    token = raw.strip()
    if token.lower() in MISSING_TOKENS:
        raise UnparseableValue(row, spec.name, raw)
    if spec.values is not None:
        try:
            return spec.values.index(token)
        except ValueError:
            raise UnparseableValue(row, spec.name, raw) from None
    try:
        v = int(token)
    except ValueError:
        raise UnparseableValue(row, spec.name, raw) from None
    if not 0 <= v < spec.cardinality:
        raise UnparseableValue(row, spec.name, raw)
    return v


def load_csv(path, schema: DatasetSchema) -> Dataset:
    """Read a delimited file into a :class:`Dataset` according to ``schema``.

    Categorical columns are one-hot encoded (categories in sorted order);
    every remaining non-label, non-sensitive column must be numeric. Rows
    with missing values are rejected.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh, delimiter=schema.delimiter))
    except FileNotFoundError as exc:
        raise DataError(f"data file not found: {path}") from exc
    rows = [r for r in rows if r]
    if not rows:
        raise EmptyFile(f"{path}: no header")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise EmptyFile(f"{path}: header only, no data rows")

    index = {name: j for j, name in enumerate(header)}
    needed = [schema.label_column, *(s.name for s in schema.sensitive_columns)]
    needed += [c for c, _ in schema.categorical_columns] + list(schema.drop_columns)
    for name in needed:
        if name not in index:
            raise MissingColumn(name)

    cats = dict(schema.categorical_columns)
    skip = {schema.label_column, *(s.name for s in schema.sensitive_columns), *schema.drop_columns}
    general = [h for h in header if h not in skip]

    for i, r in enumerate(body, start=1):
        if len(r) != len(header):
            raise UnparseableValue(i, "<row>", schema.delimiter.join(r))

    labels = [_parse_label(r[index[schema.label_column]], i, schema) for i, r in enumerate(body, start=1)]
    if schema.label_values is not None:
        n_classes = len(schema.label_values)
    elif schema.positive_label is not None:
        n_classes = 2
    else:
        classes = sorted(set(labels))
        remap = {c: k for k, c in enumerate(classes)}
        labels = [remap[c] for c in labels]
        n_classes = len(classes)
    if n_classes < 2:
        raise DataError(f"{path}: label column has fewer than two classes")

    sens = [
        [_parse_sensitive(r[index[s.name]], i, s) for s in schema.sensitive_columns]
        for i, r in enumerate(body, start=1)
    ]

    columns, names = [], []
    for h in general:
        j = index[h]
        if h in cats:
            raw = [r[j].strip() for r in body]
            for i, v in enumerate(raw, start=1):
                if v.lower() in MISSING_TOKENS:
                    raise UnparseableValue(i, h, v)
            levels = sorted(set(raw))
            if cats[h] == "drop_first":
                levels = levels[1:]
            for lv in levels:
                columns.append([1.0 if v == lv else 0.0 for v in raw])
                names.append(f"{h}={lv}")
        else:
            columns.append([_parse_float(r[j], i, h) for i, r in enumerate(body, start=1)])
            names.append(h)

    n = len(body)
    X = np.array(columns, dtype=np.float64).T if columns else np.zeros((n, 0))
    return Dataset(
        general_features=X,
        sensitive_attrs=np.array(sens, dtype=np.int64).reshape(n, len(schema.sensitive_columns)),
        labels=np.array(labels, dtype=np.int64),
        n_classes=n_classes,
        sensitive_cardinality=tuple(s.cardinality for s in schema.sensitive_columns),
        privileged_values=tuple(s.privileged for s in schema.sensitive_columns),
        feature_names=tuple(names),
        sensitive_names=tuple(s.name for s in schema.sensitive_columns),
    )


def save_csv(d: Dataset, path) -> DatasetSchema:
    """Write ``d`` as CSV and return the schema that reads it back unchanged."""
    label = "label"
    taken = set(d.feature_names) | set(d.sensitive_names)
    while label in taken:
        label = "_" + label
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*d.feature_names, *d.sensitive_names, label])
        for i in range(d.n):
            w.writerow(
                [repr(float(v)) for v in d.general_features[i]]
                + [int(v) for v in d.sensitive_attrs[i]]
                + [int(d.labels[i])]
            )
    return DatasetSchema(
        label_column=label,
        sensitive_columns=tuple(
            SensitiveColumn(name, card, priv)
            for name, card, priv in zip(d.sensitive_names, d.sensitive_cardinality, d.privileged_values)
        ),
        label_values=tuple(str(c) for c in range(d.n_classes)),
    )


def perturb_sensitive(d: Dataset, seed: int) -> PerturbedView:
    """Resample every sensitive value uniformly among the *other* values.

    All attributes are perturbed jointly; a binary attribute is simply
    flipped.
    """
    if d.n_sensitive == 0:
        raise NoSensitiveAttributes("dataset has no sensitive attributes")
    for name, card in zip(d.sensitive_names, d.sensitive_cardinality):
        if card < 2:
            raise DegenerateAttribute(f"attribute {name!r} has cardinality {card}")
    rng = np.random.default_rng(seed)
    A = d.sensitive_attrs
    out = np.empty_like(A)
    for j, card in enumerate(d.sensitive_cardinality):
        # offset in [1, card-1] never maps a value to itself
        offset = rng.integers(1, card, size=d.n)
        out[:, j] = (A[:, j] + offset) % card
    out.flags.writeable = False
    return PerturbedView(out, d.fingerprint(), int(seed))


def kfold_split(n: int, k: int, seed: int) -> FoldPlan:
    if k < 2:
        raise InvalidInput("k must be >= 2")
    if k > n:
        raise TooFewRows(f"cannot split {n} rows into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    assignments = np.empty(n, dtype=np.int64)
    assignments[perm] = np.arange(n) % k
    assignments.flags.writeable = False
    return FoldPlan(k, assignments, int(seed))


def synth_biased(n: int, bias: float, d_g: int = 5, seed: int = 0) -> Dataset:
    """Binary task whose labels copy a binary sensitive attribute w.p. ``bias``.

    Otherwise the label comes from a random linear rule on the general
    features plus Gaussian noise.
    """
    if n < 10:
        raise InvalidInput("n must be >= 10")
    if d_g < 1:
        raise InvalidInput("d_g must be >= 1")
    if not 0.0 <= bias <= 1.0:
        raise InvalidInput("bias must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d_g))
    a = rng.integers(0, 2, size=n)
    w = rng.standard_normal(d_g)
    noise = 0.5 * rng.standard_normal(n)
    y_rule = (X @ w + noise > 0).astype(np.int64)
    copy = rng.random(n) < bias
    y = np.where(copy, a, y_rule)
    return Dataset(
        general_features=X,
        sensitive_attrs=a.reshape(n, 1),
        labels=y,
        n_classes=2,
        sensitive_cardinality=(2,),
        privileged_values=(1,),
        feature_names=tuple(f"x{j}" for j in range(d_g)),
        sensitive_names=("s",),
    )


def synth_schema() -> DatasetSchema:
    """Schema matching CSV files written by :func:`save_csv` for :func:`synth_biased` data."""
    return DatasetSchema(
        label_column="label",
        sensitive_columns=(SensitiveColumn("s", 2, 1),),
        label_values=("0", "1"),
    )


def check_partition(plan: FoldPlan, n: int) -> bool:
    seen = np.zeros(n, dtype=np.int64)
    for f in range(plan.k):
        seen[plan.test_indices(f)] += 1
    return bool(np.all(seen == 1))


__all__: Sequence[str] = [
    "Dataset",
    "DatasetSchema",
    "FoldPlan",
    "PerturbedView",
    "SensitiveColumn",
    "check_partition",
    "kfold_split",
    "load_csv",
    "perturb_sensitive",
    "save_csv",
    "synth_biased",
    "synth_schema",
]
