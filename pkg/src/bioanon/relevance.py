"""Per-feature relevance scores and the feature selection function."""

import enum
import hashlib
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .data import Dataset
from .errors import EmptySelection, InvalidConfig, LengthMismatch, ModelLacksImportances

DEFAULT_BINS = 16


class Method(str, enum.Enum):
    GINI = "GiniImportance"
    MI = "MutualInformation"


@dataclass(frozen=True, eq=False)
class RelevanceScores:
    attribute: str
    method: Method
    scores: np.ndarray

    def __post_init__(self):
        s = np.array(self.scores, dtype=np.float64, copy=True)
        if s.ndim != 1:
            raise LengthMismatch("scores must be a vector")
        if not np.all(np.isfinite(s)) or np.any(s < 0):
            raise ValueError("relevance scores must be finite and nonnegative")
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "method", Method(self.method))

    def ranking(self) -> np.ndarray:
        """Feature indices by descending score, lower index first on ties."""
        return np.argsort(-self.scores, kind="stable")

    def to_dict(self) -> dict:
        return {"attribute": self.attribute, "method": self.method.value, "scores": self.scores.tolist()}

    @classmethod
    def from_dict(cls, obj) -> "RelevanceScores":
        return cls(obj["attribute"], Method(obj["method"]), obj["scores"])


@dataclass(frozen=True)
class SelectionConfig:
    retention_interest: float = 0.01
    retention_additional: Mapping[str, float] = field(default_factory=dict)
    retention_sensitive: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "retention_additional", dict(self.retention_additional))
        ratios = [("retention_interest", self.retention_interest), ("retention_sensitive", self.retention_sensitive)]
        ratios += [(f"retention_additional.{k}", v) for k, v in self.retention_additional.items()]
        for name, r in ratios:
            if not (isinstance(r, (int, float)) and 0.0 <= r <= 1.0):
                raise InvalidConfig(name, f"ratio {r!r} not in [0, 1]")


@dataclass(frozen=True, eq=False)
class SelectionMask:
    included: np.ndarray
    warnings: tuple = ()

    def __post_init__(self):
        m = np.array(self.included, dtype=bool, copy=True)
        m.setflags(write=False)
        object.__setattr__(self, "included", m)

    @property
    def selected_count(self) -> int:
        return int(self.included.sum())

    @property
    def selected_indices(self) -> List[int]:
        return np.flatnonzero(self.included).tolist()

    def __len__(self) -> int:
        return len(self.included)

    @classmethod
    def all(cls, n_features: int) -> "SelectionMask":
        return cls(np.ones(n_features, dtype=bool))

    @classmethod
    def none(cls, n_features: int) -> "SelectionMask":
        return cls(np.zeros(n_features, dtype=bool))

    def digest(self) -> str:
        return hashlib.sha256(np.packbits(self.included).tobytes() + len(self).to_bytes(8, "little")).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "n_features": len(self),
            "selected_count": self.selected_count,
            "selected_indices": self.selected_indices,
        }


# -- mutual information -------------------------------------------------------

def equal_width_bins(values, n_bins: int) -> np.ndarray:
    """Bin index of each value over ``[min, max]``; a constant input is one bin."""
    x = np.asarray(values, dtype=np.float64)
    lo, hi = x.min(), x.max()
    if not hi > lo:
        return np.zeros(len(x), dtype=np.intp)
    b = np.floor((x - lo) / (hi - lo) * n_bins).astype(np.intp)
    return np.clip(b, 0, n_bins - 1)


def mi_from_table(table) -> float:
    """Plug-in mutual information (nats) of a joint count table."""
    t = np.asarray(table, dtype=np.float64)
    n = t.sum()
    if n <= 0:
        return 0.0
    p = t / n
    pr = p.sum(axis=1, keepdims=True)
    pc = p.sum(axis=0, keepdims=True)
    nz = p > 0
    mi = float(np.sum(p[nz] * np.log(p[nz] / (pr @ pc)[nz])))
    return max(mi, 0.0)


def contingency(bins, labels) -> np.ndarray:
    bins = np.asarray(bins)
    _, y = np.unique(np.asarray(labels), return_inverse=True)
    nb = int(bins.max()) + 1 if len(bins) else 0
    nc = int(y.max()) + 1 if len(y) else 0
    return np.bincount(bins * nc + y, minlength=nb * nc).reshape(nb, nc)


def mutual_information(feature_values, labels, n_bins: int = DEFAULT_BINS) -> float:
    """MI between an equal-width-binned feature and categorical labels."""
    x = np.asarray(feature_values, dtype=np.float64)
    labels = np.asarray(labels)
    if len(x) != len(labels):
        raise LengthMismatch(f"{len(x)} values vs {len(labels)} labels")
    if len(x) < 2:
        raise LengthMismatch("need at least 2 samples")
    if n_bins < 2:
        raise InvalidConfig("n_bins", "must be >= 2")
    return mi_from_table(contingency(equal_width_bins(x, n_bins), labels))


def relevance_mi(dataset: Dataset, attribute: str, n_bins: int = DEFAULT_BINS) -> RelevanceScores:
    labels = dataset.labels_of(attribute)
    X = dataset.features
    scores = [mutual_information(X[:, j], labels, n_bins) for j in range(dataset.n_features)]
    return RelevanceScores(attribute, Method.MI, scores)


def relevance_model(model, attribute: Optional[str] = None) -> RelevanceScores:
    """Gini importances of a trained forest as relevance scores."""
    importances = getattr(model, "importances", None)
    if importances is None:
        raise ModelLacksImportances(f"{type(model).__name__} exposes no importances")
    if attribute is not None and getattr(model, "attribute", attribute) != attribute:
        raise InvalidConfig("attribute", f"model was trained on {model.attribute!r}, not {attribute!r}")
    return RelevanceScores(attribute or model.attribute, Method.GINI, importances)


# -- selection ----------------------------------------------------------------

def retained_count(ratio: float, n_features: int) -> int:
    """``ceil(ratio * n_features)``, ignoring float noise such as 0.07*100."""
    return min(n_features, int(math.ceil(ratio * n_features - 1e-9)))


def top_k(scores: RelevanceScores, k: int) -> np.ndarray:
    return scores.ranking()[:k]


def select_features(
    r_interest: RelevanceScores,
    r_additional: Sequence[RelevanceScores] = (),
    r_sensitive: Optional[RelevanceScores] = None,
    cfg: SelectionConfig = SelectionConfig(),
) -> SelectionMask:
    """Indicator of the features that receive the target weight.

    The union of the top-ranked features for the attribute of interest and
    each additional attribute, minus the top-ranked sensitive features.
    Additional attributes missing from ``cfg.retention_additional`` retain
    nothing.
    """
    d = len(r_interest.scores)
    for r in [*r_additional, *([r_sensitive] if r_sensitive is not None else [])]:
        if len(r.scores) != d:
            raise LengthMismatch(f"relevance for {r.attribute!r} has {len(r.scores)} entries, expected {d}")
    included = np.zeros(d, dtype=bool)
    included[top_k(r_interest, retained_count(cfg.retention_interest, d))] = True
    for r in r_additional:
        ratio = cfg.retention_additional.get(r.attribute, 0.0)
        included[top_k(r, retained_count(ratio, d))] = True
    notes = []
    if r_sensitive is not None and cfg.retention_sensitive > 0:
        before = included.any()
        included[top_k(r_sensitive, retained_count(cfg.retention_sensitive, d))] = False
        if before and not included.any():
            msg = "sensitive rejection removed every selected feature; falling back to the plain mean"
            warnings.warn(msg, EmptySelection, stacklevel=2)
            notes.append(msg)
    return SelectionMask(included, tuple(notes))
