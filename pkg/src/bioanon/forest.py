"""Random-forest classifier with Gini splits and impurity-based importances.

Trees are CART-style: every node looks at a random subset of the features
that are non-constant within the node, thresholds sit at midpoints between
consecutive distinct values, and a sample goes left when ``x <= threshold``.
Each tree draws from its own RNG stream seeded by ``(seed, tree_index)`` so
the forest is identical however the trees are scheduled.
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from .data import Dataset
from .errors import (
    DatasetIOError,
    DimensionMismatch,
    EmptyDataset,
    InvalidConfig,
    SingleClass,
    UnknownAttribute,
)

MODEL_FORMAT = "bioanon-forest"
MODEL_VERSION = 1


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: Optional[int] = None
    min_samples_leaf: int = 1
    # "sqrt", "all" or a fixed positive integer
    features_per_split: Union[str, int] = "sqrt"
    bootstrap: bool = True
    seed: int = 0

    def validate(self, n_features: Optional[int] = None) -> "ForestConfig":
        if int(self.n_trees) < 1:
            raise InvalidConfig("n_trees", "must be >= 1")
        if self.max_depth is not None and int(self.max_depth) < 1:
            raise InvalidConfig("max_depth", "must be a positive integer or null")
        if int(self.min_samples_leaf) < 1:
            raise InvalidConfig("min_samples_leaf", "must be >= 1")
        fps = self.features_per_split
        if isinstance(fps, str):
            if fps.lower() not in ("sqrt", "all"):
                raise InvalidConfig("features_per_split", f"unknown mode {fps!r}")
        elif int(fps) < 1 or (n_features is not None and int(fps) > n_features):
            raise InvalidConfig("features_per_split", f"fixed count {fps} outside [1, {n_features}]")
        return self

    def n_split_features(self, n_features: int) -> int:
        fps = self.features_per_split
        if isinstance(fps, str):
            return max(1, int(math.sqrt(n_features))) if fps.lower() == "sqrt" else n_features
        return int(fps)

    @classmethod
    def from_dict(cls, obj) -> "ForestConfig":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(sorted(unknown)[0], "unknown forest config field")
        return cls(**obj)


@dataclass
class Tree:
    """Flat array representation; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, n_classes) training class counts

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        node = np.zeros(len(X), dtype=np.intp)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while active.any():
            r, nd = rows[active], node[active]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node

    def to_nested(self, i: int = 0) -> dict:
        if self.feature[i] < 0:
            return {"counts": self.counts[i].tolist()}
        return {
            "feature": int(self.feature[i]),
            "threshold": float(self.threshold[i]),
            "left": self.to_nested(int(self.left[i])),
            "right": self.to_nested(int(self.right[i])),
        }

    @classmethod
    def from_nested(cls, root: dict, n_classes: int) -> "Tree":
        feature, threshold, left, right, counts = [], [], [], [], []
        stack = [(root, -1, False)]
        while stack:
            node, parent, is_left = stack.pop()
            i = len(feature)
            if parent >= 0:
                (left if is_left else right)[parent] = i
            if "counts" in node:
                feature.append(-1)
                threshold.append(0.0)
                c = node["counts"]
                if len(c) != n_classes:
                    raise DimensionMismatch("leaf count vector does not match classes")
                counts.append(c)
            else:
                feature.append(int(node["feature"]))
                threshold.append(float(node["threshold"]))
                counts.append([0] * n_classes)
            left.append(-1)
            right.append(-1)
            if "counts" not in node:
                stack.append((node["right"], i, False))
                stack.append((node["left"], i, True))
        cnt = np.asarray(counts, dtype=np.int64).reshape(len(feature), n_classes)
        tree = cls(np.asarray(feature, dtype=np.intp), np.asarray(threshold, dtype=np.float64),
                   np.asarray(left, dtype=np.intp), np.asarray(right, dtype=np.intp), cnt)
        tree._fill_internal_counts()
        return tree

    def _fill_internal_counts(self) -> None:
        # children always have larger indices than their parent
        for i in range(self.n_nodes - 1, -1, -1):
            if self.feature[i] >= 0:
                self.counts[i] = self.counts[self.left[i]] + self.counts[self.right[i]]


def gini_impurity(counts) -> float:
    """``1 - sum p_c^2`` of a class-count vector (0 for an empty node)."""
    c = np.asarray(counts, dtype=np.float64)
    n = c.sum()
    return 0.0 if n == 0 else 1.0 - float(((c / n) ** 2).sum())


def _best_split(Xn, yn, candidates, n_classes, min_leaf):
    """Best (feature, threshold, weighted child gini) among ``candidates``.

    Maximises ``sum(c_l^2)/n_l + sum(c_r^2)/n_r``, which is equivalent to
    minimising the sample-weighted Gini impurity of the children.
    """
    n = len(yn)
    vals = Xn[:, candidates]
    order = np.argsort(vals, axis=0, kind="stable")
    sv = np.take_along_axis(vals, order, axis=0)
    ys = yn[order]
    total = np.bincount(yn, minlength=n_classes).astype(np.int64)
    starts = np.concatenate(([0], np.cumsum(total)[:-1]))
    # occ[i, f]: how many samples of the same class precede row i in column f;
    # adding a sample with occ o raises sum(c_l^2) by 2*o + 1.
    rank = np.arange(n)[:, None]
    by_class = np.argsort(ys * n + rank, axis=0)
    occ = np.empty_like(ys)
    np.put_along_axis(occ, by_class, rank - starts[np.take_along_axis(ys, by_class, axis=0)], axis=0)
    sq_left = np.cumsum(2 * occ + 1, axis=0)[:-1]
    dot_left = np.cumsum(total[ys], axis=0)[:-1]  # sum_c total_c * c_l
    sq_right = int((total**2).sum()) - 2 * dot_left + sq_left
    nl = np.arange(1, n, dtype=np.float64)[:, None]
    nr = n - nl
    score = sq_left / nl + sq_right / nr
    valid = (sv[:-1] < sv[1:]) & (nl >= min_leaf) & (nr >= min_leaf)
    if not valid.any():
        return None
    score = np.where(valid, score, -np.inf)
    pos, col = np.unravel_index(int(np.argmax(score)), score.shape)
    lo, hi = sv[pos, col], sv[pos + 1, col]
    thr = (lo + hi) / 2.0
    if thr >= hi or not math.isfinite(thr):
        thr = lo
    child_gini = 1.0 - score[pos, col] / n
    return int(candidates[col]), float(thr), float(child_gini)


def _grow_tree(X, y, n_classes, cfg: ForestConfig, tree_index: int):
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), tree_index]))
    n, d = X.shape
    if cfg.bootstrap:
        sample = rng.integers(0, n, size=n)
        Xb, yb = X[sample], y[sample]
    else:
        Xb, yb = X, y
    n_root = len(yb)
    mtry = cfg.n_split_features(d)
    min_leaf = int(cfg.min_samples_leaf)
    max_depth = cfg.max_depth

    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    counts: List[np.ndarray] = []
    importance = np.zeros(d)

    def new_node(c):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(c)
        return len(feature) - 1

    root_idx = np.arange(n_root)
    stack = [(new_node(np.bincount(yb, minlength=n_classes)), root_idx, 0)]
    while stack:
        node, idx, depth = stack.pop()
        c = counts[node]
        m = len(idx)
        if (c > 0).sum() <= 1 or m < 2 * min_leaf or (max_depth is not None and depth >= max_depth):
            continue
        Xn = Xb[idx]
        nonconst = np.flatnonzero(Xn.max(axis=0) > Xn.min(axis=0))
        if len(nonconst) == 0:
            continue
        if len(nonconst) > mtry:
            candidates = np.sort(rng.choice(nonconst, size=mtry, replace=False))
        else:
            candidates = nonconst
        found = _best_split(Xn, yb[idx], candidates, n_classes, min_leaf)
        if found is None:
            continue
        f, thr, child_gini = found
        parent_gini = gini_impurity(c)
        importance[f] += (m / n_root) * (parent_gini - child_gini)
        go_left = Xn[:, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node] = f
        threshold[node] = thr
        left[node] = new_node(np.bincount(yb[li], minlength=n_classes))
        right[node] = new_node(np.bincount(yb[ri], minlength=n_classes))
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    tree = Tree(
        np.asarray(feature, dtype=np.intp),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.intp),
        np.asarray(right, dtype=np.intp),
        np.asarray(counts, dtype=np.int64).reshape(len(feature), n_classes),
    )
    return tree, importance


@dataclass
class ClassifierModel:
    attribute: str
    classes: List[str]
    trees: List[Tree]
    importances: np.ndarray
    n_features: int
    config: ForestConfig = field(default_factory=ForestConfig)

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X2 = X[None, :] if single else X
        if X2.ndim != 2 or X2.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} features, got shape {X.shape}")
        return X2

    def leaf_distributions(self, X) -> np.ndarray:
        """Per-tree normalized leaf histograms, shape ``(n_trees, n, n_classes)``."""
        X2 = self._check(X)
        out = np.empty((len(self.trees), len(X2), len(self.classes)))
        for t, tree in enumerate(self.trees):
            c = tree.counts[tree.apply(X2)].astype(np.float64)
            out[t] = c / c.sum(axis=1, keepdims=True)
        return out

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        proba = self.leaf_distributions(X).mean(axis=0)
        return proba[0] if X.ndim == 1 else proba

    def predict_index(self, X) -> np.ndarray:
        """Majority vote of per-tree leaf-majority classes (ties: earlier class)."""
        per_tree = self.leaf_distributions(X).argmax(axis=2)  # (n_trees, n)
        k = len(self.classes)
        votes = np.zeros((per_tree.shape[1], k), dtype=np.int64)
        for t in range(per_tree.shape[0]):
            votes[np.arange(per_tree.shape[1]), per_tree[t]] += 1
        return votes.argmax(axis=1)

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        idx = self.predict_index(X)
        labels = np.asarray(self.classes, dtype=object)[idx]
        return labels[0] if X.ndim == 1 else labels

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "attribute": self.attribute,
            "classes": list(self.classes),
            "n_features": self.n_features,
            "config": asdict(self.config),
            "importances": self.importances.tolist(),
            "trees": [t.to_nested() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, obj) -> "ClassifierModel":
        if obj.get("format") != MODEL_FORMAT or obj.get("version") != MODEL_VERSION:
            raise InvalidConfig("model", f"unsupported model file format/version: {obj.get('format')} v{obj.get('version')}")
        classes = [str(c) for c in obj["classes"]]
        return cls(
            attribute=obj["attribute"],
            classes=classes,
            trees=[Tree.from_nested(t, len(classes)) for t in obj["trees"]],
            importances=np.asarray(obj["importances"], dtype=np.float64),
            n_features=int(obj["n_features"]),
            config=ForestConfig(**obj.get("config", {})),
        )


def train(dataset: Dataset, attribute: str, cfg: ForestConfig = ForestConfig(), workers: int = 1) -> ClassifierModel:
    """Fit a forest predicting ``attribute`` from the dataset's features."""
    if len(dataset) == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    labels = dataset.labels_of(attribute)
    cfg.validate(dataset.n_features)
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise SingleClass(f"attribute {attribute!r} has a single class {classes}")
    lookup = {c: i for i, c in enumerate(classes)}
    y = np.fromiter((lookup[v] for v in labels), dtype=np.intp, count=len(labels))
    X = dataset.features

    def grow(t):
        return _grow_tree(X, y, len(classes), cfg, t)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            grown = list(pool.map(grow, range(cfg.n_trees)))
    else:
        grown = [grow(t) for t in range(cfg.n_trees)]

    per_tree = []
    for _, imp in grown:
        s = imp.sum()
        if s > 0:
            per_tree.append(imp / s)
    importances = np.zeros(dataset.n_features)
    if per_tree:
        importances = np.mean(per_tree, axis=0)
        importances = importances / importances.sum()
    return ClassifierModel(attribute, classes, [t for t, _ in grown], importances, dataset.n_features, cfg)


def predict(model: ClassifierModel, features):
    return model.predict(features)


def predict_proba(model: ClassifierModel, features) -> np.ndarray:
    return model.predict_proba(features)


def accuracy(model: ClassifierModel, dataset: Dataset) -> float:
    if model.attribute not in dataset.labels:
        raise UnknownAttribute(model.attribute)
    if len(dataset) == 0:
        raise EmptyDataset("cannot score an empty dataset")
    truth = dataset.labels[model.attribute]
    return float(np.mean(model.predict(dataset.features) == truth))


def save_model(model: ClassifierModel, path) -> None:
    try:
        Path(path).write_text(json.dumps(model.to_dict(), separators=(",", ":")) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DatasetIOError(f"cannot write model {path}: {exc}") from exc


def load_model(path) -> ClassifierModel:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DatasetIOError(f"cannot read model {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidConfig("model", f"invalid JSON in {path}: {exc}") from exc
    return ClassifierModel.from_dict(obj)
