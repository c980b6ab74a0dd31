"""Dataset model, CSV/schema I/O, stratified splitting and synthetic data."""

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    DatasetIOError,
    DegenerateSplit,
    DuplicateId,
    EmptyDataset,
    InvalidConfig,
    LengthMismatch,
    MissingColumn,
    NonNumericFeature,
    UnknownAttribute,
    DataError,
)

logger = logging.getLogger(__name__)

DEFAULT_ID_COLUMN = "id"


@dataclass(frozen=True)
class Schema:
    """Column roles of a dataset.

    ``feature_prefix`` is only set on a schema loaded from JSON with
    ``{"prefix": ...}`` features; :meth:`resolve` turns it into concrete
    ``feature_names`` once a CSV header is known.
    """

    feature_names: Tuple[str, ...]
    attribute_of_interest: str
    additional_attributes: Tuple[str, ...] = ()
    sensitive_attributes: Tuple[str, ...] = ()
    id_column: Optional[str] = None
    feature_prefix: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "additional_attributes", tuple(self.additional_attributes))
        object.__setattr__(self, "sensitive_attributes", tuple(self.sensitive_attributes))
        if not self.attribute_of_interest:
            raise InvalidConfig("attribute_of_interest", "must be nonempty")
        if not self.feature_names and self.feature_prefix is None:
            raise InvalidConfig("features", "at least one feature is required")
        groups = [
            ("features", self.feature_names),
            ("attribute_of_interest", (self.attribute_of_interest,)),
            ("additional_attributes", self.additional_attributes),
            ("sensitive_attributes", self.sensitive_attributes),
            ("id_column", (self.id_column,) if self.id_column else ()),
        ]
        seen: Dict[str, str] = {}
        for role, names in groups:
            for name in names:
                if name in seen:
                    raise InvalidConfig(role, f"column {name!r} already used as {seen[name]}")
                seen[name] = role

    @property
    def attributes(self) -> Tuple[str, ...]:
        return (self.attribute_of_interest, *self.additional_attributes, *self.sensitive_attributes)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def resolve(self, header: Sequence[str]) -> "Schema":
        """Expand a prefix feature spec against a CSV header."""
        if self.feature_prefix is None:
            return self
        reserved = set(self.attributes)
        if self.id_column:
            reserved.add(self.id_column)
        names = tuple(h for h in header if h.startswith(self.feature_prefix) and h not in reserved)
        if not names:
            raise MissingColumn(f"{self.feature_prefix}*")
        return replace(self, feature_names=names, feature_prefix=None)

    @classmethod
    def from_dict(cls, obj: Mapping) -> "Schema":
        features = obj.get("features")
        prefix = None
        if isinstance(features, Mapping):
            prefix = features.get("prefix")
            if not prefix:
                raise InvalidConfig("features", "object form needs a nonempty 'prefix'")
            names: Tuple[str, ...] = ()
        elif isinstance(features, list):
            names = tuple(str(f) for f in features)
        else:
            raise InvalidConfig("features", "must be an array of names or {'prefix': ...}")
        if "attribute_of_interest" not in obj:
            raise InvalidConfig("attribute_of_interest", "missing")
        return cls(
            feature_names=names,
            attribute_of_interest=str(obj["attribute_of_interest"]),
            additional_attributes=tuple(obj.get("additional_attributes", ())),
            sensitive_attributes=tuple(obj.get("sensitive_attributes", ())),
            id_column=obj.get("id_column"),
            feature_prefix=prefix,
        )

    def to_dict(self) -> dict:
        return {
            "features": {"prefix": self.feature_prefix} if self.feature_prefix else list(self.feature_names),
            "attribute_of_interest": self.attribute_of_interest,
            "additional_attributes": list(self.additional_attributes),
            "sensitive_attributes": list(self.sensitive_attributes),
            "id_column": self.id_column,
        }


def load_schema(path) -> Schema:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise DatasetIOError(f"cannot read schema {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidConfig("schema", f"invalid JSON in {path}: {exc}") from exc
    return Schema.from_dict(obj)


def save_schema(schema: Schema, path) -> None:
    Path(path).write_text(json.dumps(schema.to_dict(), indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class Record:
    id: str
    features: np.ndarray
    labels: Dict[str, str]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable feature matrix plus per-record ids and categorical labels.

    ``features`` is an ``(n_records, n_features)`` float64 array and
    ``labels`` maps every schema attribute to an array of string labels.
    """

    schema: Schema
    ids: Tuple[str, ...]
    features: np.ndarray
    labels: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.schema.feature_prefix is not None:
            raise InvalidConfig("features", "schema must be resolved before building a dataset")
        X = np.array(self.features, dtype=np.float64, copy=True)
        if X.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        n, d = X.shape
        if d != self.schema.n_features:
            raise LengthMismatch(f"{d} feature columns, schema names {self.schema.n_features}")
        if not np.all(np.isfinite(X)):
            row, col = np.argwhere(~np.isfinite(X))[0]
            raise NonNumericFeature(int(row) + 1, self.schema.feature_names[col], X[row, col])
        ids = tuple(str(i) for i in self.ids)
        if len(ids) != n:
            raise LengthMismatch(f"{len(ids)} ids for {n} records")
        if len(set(ids)) != n:
            seen = set()
            for i in ids:
                if i in seen:
                    raise DuplicateId(i)
                seen.add(i)
        labels = {}
        for attr in self.schema.attributes:
            if attr not in self.labels:
                raise MissingColumn(attr)
            col = np.asarray([str(v) for v in self.labels[attr]], dtype=object)
            if len(col) != n:
                raise LengthMismatch(f"attribute {attr!r} has {len(col)} labels for {n} records")
            col.setflags(write=False)
            labels[attr] = col
        X.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def labels_of(self, attribute: str) -> np.ndarray:
        try:
            return self.labels[attribute]
        except KeyError:
            raise UnknownAttribute(attribute) from None

    def classes(self, attribute: str) -> List[str]:
        """Sorted distinct labels of ``attribute``."""
        return sorted(set(self.labels_of(attribute)))

    def degenerate_attributes(self) -> List[str]:
        return [a for a in self.schema.attributes if len(set(self.labels[a])) < 2]

    def validate(self) -> "Dataset":
        """Raise if any attribute has fewer than two classes."""
        bad = self.degenerate_attributes()
        if bad:
            raise DataError(f"degenerate dataset: attributes with a single class: {bad}")
        return self

    def record(self, i: int) -> Record:
        return Record(self.ids[i], self.features[i], {a: v[i] for a, v in self.labels.items()})

    @property
    def records(self) -> Iterator[Record]:
        return (self.record(i) for i in range(len(self)))

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(
            self.schema,
            tuple(self.ids[i] for i in idx),
            self.features[idx],
            {a: v[idx] for a, v in self.labels.items()},
        )

    def with_features(self, features: np.ndarray) -> "Dataset":
        return Dataset(self.schema, self.ids, features, self.labels)

    def equals(self, other: "Dataset") -> bool:
        return (
            self.schema == other.schema
            and self.ids == other.ids
            and np.array_equal(self.features, other.features)
            and all(np.array_equal(self.labels[a], other.labels[a]) for a in self.schema.attributes)
        )


# -- CSV ----------------------------------------------------------------------

def load_csv(path, schema: Schema) -> Dataset:
    """Read a dataset CSV, validating it against ``schema``.

    Rows are numbered from 1 (first data row after the header) in errors.
    Without an ``id_column`` ids are the 0-based row indices.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise EmptyDataset(f"{path} is empty") from None
            rows = list(reader)
    except OSError as exc:
        raise DatasetIOError(f"cannot read {path}: {exc}") from exc

    schema = schema.resolve(header)
    position = {name: i for i, name in enumerate(header)}
    needed = list(schema.feature_names) + list(schema.attributes)
    if schema.id_column:
        needed.append(schema.id_column)
    for name in needed:
        if name not in position:
            raise MissingColumn(name)
    rows = [r for r in rows if r]
    if not rows:
        raise EmptyDataset(f"{path} has no records")

    feat_cols = [position[f] for f in schema.feature_names]
    X = np.empty((len(rows), len(feat_cols)))
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DataError(f"row {r} has {len(row)} cells, header has {len(header)}")
        for j, c in enumerate(feat_cols):
            try:
                v = float(row[c])
            except ValueError:
                raise NonNumericFeature(r, header[c], row[c]) from None
            if not math.isfinite(v):
                raise NonNumericFeature(r, header[c], row[c])
            X[r - 1, j] = v
    if schema.id_column:
        ids = tuple(row[position[schema.id_column]] for row in rows)
    else:
        ids = tuple(str(i) for i in range(len(rows)))
    labels = {a: [row[position[a]] for row in rows] for a in schema.attributes}
    return Dataset(schema, ids, X, labels)


def save_csv(dataset: Dataset, path) -> None:
    """Write ``dataset`` as CSV with shortest round-trip float formatting.

    An id column is always written (named ``id`` when the schema has none).
    """
    schema = dataset.schema
    id_col = schema.id_column or DEFAULT_ID_COLUMN
    header = [id_col, *schema.feature_names, *schema.attributes]
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for i, rid in enumerate(dataset.ids):
                writer.writerow(
                    [rid, *map(repr, dataset.features[i].tolist()),
                     *(dataset.labels[a][i] for a in schema.attributes)]
                )
    except OSError as exc:
        raise DatasetIOError(f"cannot write {path}: {exc}") from exc


# -- splitting ----------------------------------------------------------------

def split(dataset: Dataset, train_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """Stratified (by attribute of interest) train/eval partition.

    Each class contributes ``round(train_fraction * n_class)`` records to the
    training side.  When some class has a single record, or only one class
    exists, a :class:`DegenerateSplit` warning is issued and the split is
    done over all records at once.  Both sides keep the input record order.
    """
    n = len(dataset)
    if n < 2:
        raise DataError("split needs at least 2 records")
    if not 0.0 < train_fraction < 1.0:
        raise InvalidConfig("train_fraction", "must lie strictly between 0 and 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), 0x5EED]))
    y = dataset.labels_of(dataset.schema.attribute_of_interest)
    groups: Dict[str, List[int]] = {}
    for i, label in enumerate(y):
        groups.setdefault(label, []).append(i)

    train_mask = np.zeros(n, dtype=bool)
    if len(groups) < 2 or min(len(g) for g in groups.values()) < 2:
        warnings.warn(
            "cannot stratify (a class has fewer than 2 records); using an unstratified split",
            DegenerateSplit,
            stacklevel=2,
        )
        n_train = min(max(int(round(train_fraction * n)), 1), n - 1)
        train_mask[rng.permutation(n)[:n_train]] = True
    else:
        for label in sorted(groups):
            members = np.asarray(groups[label])
            k = min(max(int(round(train_fraction * len(members))), 1), len(members) - 1)
            train_mask[members[rng.permutation(len(members))[:k]]] = True
    return dataset.subset(np.flatnonzero(train_mask)), dataset.subset(np.flatnonzero(~train_mask))


# -- synthetic data -----------------------------------------------------------

DimRange = Tuple[int, int]


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the Gaussian class-cluster generator.

    Dim ranges are half-open ``(start, stop)`` index pairs.  The optional
    additional attribute (``n_additional_classes >= 2`` with a nonempty
    ``additional_dims``) extends the basic interest/identity/sensitive
    layout.
    """

    n_records: int = 2000
    n_features: int = 64
    n_identities: int = 50
    n_interest_classes: int = 4
    n_sensitive_classes: int = 2
    interest_dims: DimRange = (0, 16)
    identity_dims: DimRange = (16, 32)
    sensitive_dims: DimRange = (32, 36)
    class_separation: float = 4.0
    noise_sigma: float = 1.0
    seed: int = 0
    n_additional_classes: int = 0
    additional_dims: DimRange = (0, 0)

    def __post_init__(self):
        for name in ("interest_dims", "identity_dims", "sensitive_dims", "additional_dims"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))

    def validate(self) -> "SynthConfig":
        for name in ("n_records", "n_features", "n_identities", "n_interest_classes", "n_sensitive_classes"):
            if int(getattr(self, name)) < 1:
                raise InvalidConfig(name, "must be a positive integer")
        if self.n_identities < 2:
            raise InvalidConfig("n_identities", "must be at least 2")
        if self.n_records < self.n_identities:
            raise InvalidConfig("n_records", "must be >= n_identities")
        if self.n_interest_classes < 2:
            raise InvalidConfig("n_interest_classes", "must be at least 2")
        if self.n_additional_classes == 1 or self.n_additional_classes < 0:
            raise InvalidConfig("n_additional_classes", "must be 0 (disabled) or >= 2")
        for name in ("class_separation", "noise_sigma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidConfig(name, "must be a positive real")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidConfig("seed", "must be a 64-bit unsigned integer")
        used = np.zeros(self.n_features, dtype=bool)
        for name in ("interest_dims", "identity_dims", "sensitive_dims", "additional_dims"):
            rng_ = getattr(self, name)
            if len(rng_) != 2:
                raise InvalidConfig(name, "must be a [start, stop) pair")
            start, stop = rng_
            if not 0 <= start <= stop <= self.n_features:
                raise InvalidConfig(name, f"range [{start}, {stop}) outside [0, {self.n_features})")
            if used[start:stop].any():
                raise InvalidConfig(name, "overlaps another dim range")
            used[start:stop] = True
        return self

    @classmethod
    def from_dict(cls, obj: Mapping) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise InvalidConfig(sorted(unknown)[0], "unknown synth config field")
        try:
            return cls(**obj)
        except (TypeError, ValueError) as exc:
            raise InvalidConfig("synth", str(exc)) from exc


def class_means(n_classes: int, n_dims: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    """Class centres within one dim block, shape ``(n_classes, n_dims)``.

    Every coordinate is ``+separation/2`` or ``-separation/2``.  With at
    least as many dims as classes, dim ``j`` is owned by class
    ``j % n_classes`` (one-vs-rest coding).  Otherwise each class gets a
    distinct random sign code.
    """
    half = separation / 2.0
    if n_dims == 0:
        return np.zeros((n_classes, 0))
    if n_classes <= n_dims:
        owner = np.arange(n_dims) % n_classes
        return np.where(owner[None, :] == np.arange(n_classes)[:, None], half, -half)
    if n_dims < 63 and n_classes > 2**n_dims:
        raise InvalidConfig("dims", f"{n_dims} dims cannot code {n_classes} distinct classes")
    codes: set = set()
    rows = []
    while len(rows) < n_classes:
        row = rng.integers(0, 2, size=n_dims)
        key = row.tobytes()
        if key not in codes:
            codes.add(key)
            rows.append(row)
    return np.where(np.array(rows) == 1, half, -half)


def synthetic_schema(cfg: SynthConfig) -> Schema:
    sensitive = ["identity"]
    if cfg.n_sensitive_classes >= 2:
        sensitive.append("sensitive")
    return Schema(
        feature_names=tuple(f"f{j}" for j in range(cfg.n_features)),
        attribute_of_interest="interest",
        additional_attributes=("additional",) if cfg.n_additional_classes >= 2 else (),
        sensitive_attributes=tuple(sensitive),
        id_column="id",
    )


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    """Gaussian class clusters with controllable attribute structure.

    Labels are assigned round-robin: record ``i`` has identity
    ``i % n_identities``, interest class ``(i // n_identities) %
    n_interest_classes``, sensitive class ``identity % n_sensitive_classes``
    (a trait of the person) and additional class ``(i // (n_identities *
    n_interest_classes)) % n_additional_classes``.
    """
    cfg.validate()
    rng = np.random.default_rng(int(cfg.seed))
    n, d = cfg.n_records, cfg.n_features
    i = np.arange(n)
    identity = i % cfg.n_identities
    interest = (i // cfg.n_identities) % cfg.n_interest_classes
    sensitive = identity % cfg.n_sensitive_classes
    blocks = [
        ("interest", cfg.interest_dims, cfg.n_interest_classes, interest),
        ("identity", cfg.identity_dims, cfg.n_identities, identity),
        ("sensitive", cfg.sensitive_dims, cfg.n_sensitive_classes, sensitive),
    ]
    if cfg.n_additional_classes >= 2:
        additional = (i // (cfg.n_identities * cfg.n_interest_classes)) % cfg.n_additional_classes
        blocks.append(("additional", cfg.additional_dims, cfg.n_additional_classes, additional))

    X = np.zeros((n, d))
    for _, (start, stop), k, assignment in blocks:
        if stop > start and k >= 2:
            means = class_means(k, stop - start, cfg.class_separation, rng)
            X[:, start:stop] = means[assignment]
    X += cfg.noise_sigma * rng.standard_normal((n, d))

    schema = synthetic_schema(cfg)
    labels = {name: assignment.astype(str) for name, _, _, assignment in blocks if name in schema.attributes}
    ids = tuple(str(v) for v in i)
    return Dataset(schema, ids, X, labels)
