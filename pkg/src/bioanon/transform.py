"""Random-set assembly and the selective weighted-mean transform.

Every record is transformed independently against the original feature
matrix, with its own RNG stream seeded by ``(seed, record_index)``, so the
output does not depend on chunking or on the number of workers.
"""

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .data import Dataset
from .errors import (
    DimensionMismatch,
    EmptyDataset,
    EmptyMembers,
    InvalidConfig,
    PurityClamped,
    SetTooLarge,
)
from .relevance import SelectionMask

CHUNK = 256


def worker_count(workers: Optional[int] = None) -> int:
    if workers is None:
        try:
            workers = int(os.environ.get("ANON_WORKERS", "1"))
        except ValueError:
            raise InvalidConfig("ANON_WORKERS", "must be an integer") from None
    return max(1, int(workers))


@dataclass(frozen=True)
class AnonymizationParams:
    """Set size ``g``, purity ``t``, target weight ``w`` and the RNG seed.

    Purities below ``1/g`` are accepted and behave like ``1/g`` (the target
    always matches itself); such sets are reported as clamped.
    """

    set_size: int = 32
    purity: float = 0.8
    weight: float = 10.0
    seed: int = 0

    def validate(self) -> "AnonymizationParams":
        if int(self.set_size) != self.set_size or self.set_size < 1:
            raise InvalidConfig("set_size", "must be an integer >= 1")
        if not (0.0 <= self.purity <= 1.0):
            raise InvalidConfig("purity", f"{self.purity} not in [0, 1]")
        if not (math.isfinite(self.weight) and self.weight >= 1.0):
            raise InvalidConfig("weight", "must be a finite real >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidConfig("seed", "must be a 64-bit unsigned integer")
        return self

    @property
    def requested_matching(self) -> int:
        return int(math.floor(self.purity * self.set_size + 0.5))

    @classmethod
    def from_dict(cls, obj) -> "AnonymizationParams":
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig(sorted(unknown)[0], "unknown anonymization parameter")
        return cls(**obj)


@dataclass(frozen=True)
class RandomSet:
    member_indices: tuple  # target first, then matching members, then the rest
    matching_count: int
    clamped: bool = False

    @property
    def size(self) -> int:
        return len(self.member_indices)


def record_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


class _Pools:
    """Per-class record index pools of the dataset being anonymized."""

    def __init__(self, labels: np.ndarray):
        self.labels = labels
        classes, inverse = np.unique(labels, return_inverse=True)
        self.class_of = inverse
        idx = np.arange(len(labels))
        self.same = [idx[inverse == c] for c in range(len(classes))]
        self.other = [idx[inverse != c] for c in range(len(classes))]
        self.position = np.empty(len(labels), dtype=np.intp)
        for members in self.same:
            self.position[members] = np.arange(len(members))

    def draw(self, target: int, params: AnonymizationParams, rng: np.random.Generator) -> RandomSet:
        g = int(params.set_size)
        c = self.class_of[target]
        same, other = self.same[c], self.other[c]
        want = params.requested_matching
        m = min(max(want, 1, g - len(other)), len(same), g)
        # sample matching members among the class pool with the target removed
        pos = rng.choice(len(same) - 1, size=m - 1, replace=False) if m > 1 else np.empty(0, dtype=np.intp)
        pos = pos + (pos >= self.position[target])
        picked_other = rng.choice(len(other), size=g - m, replace=False) if g > m else np.empty(0, dtype=np.intp)
        members = (target, *same[np.sort(pos)].tolist(), *other[np.sort(picked_other)].tolist())
        return RandomSet(members, m, clamped=(m != want))


def assemble_random_set(
    dataset: Dataset,
    target_index: int,
    params: AnonymizationParams,
    rng: Optional[np.random.Generator] = None,
) -> RandomSet:
    """Draw the random set ``G`` around one target record.

    ``round(t*g)`` members (the target included) share the target's
    attribute-of-interest value and the other ``g - round(t*g)`` do not; all
    are drawn without replacement.  If a pool is too small the matching count
    is clamped to the feasible range and the set is flagged.
    """
    params.validate()
    n = len(dataset)
    if n == 0:
        raise EmptyDataset("cannot assemble a random set from an empty dataset")
    if params.set_size > n:
        raise SetTooLarge(f"set size {params.set_size} exceeds dataset size {n}")
    if not 0 <= target_index < n:
        raise IndexError(f"target index {target_index} out of range")
    if rng is None:
        rng = record_rng(params.seed, target_index)
    pools = _Pools(dataset.labels_of(dataset.schema.attribute_of_interest))
    rs = pools.draw(target_index, params, rng)
    if rs.clamped:
        warnings.warn(f"purity clamped for record {target_index}: {rs.matching_count} matching of {rs.size}",
                      PurityClamped, stacklevel=2)
    return rs


def _sum_rows(X: np.ndarray, members: np.ndarray) -> np.ndarray:
    """Sum ``X[members[:, j]]`` over ``j`` in a fixed left-to-right order."""
    total = X[members[:, 0]].copy()
    for j in range(1, members.shape[1]):
        total += X[members[:, j]]
    return total


def _weighted_mean(targets: np.ndarray, sums: np.ndarray, size: int, w: float, mask: np.ndarray) -> np.ndarray:
    if size == 1:
        return targets.copy()
    anchored = ((w - 1.0) * targets + sums) / ((w - 1.0) + size)
    plain = sums / size
    return np.where(mask, anchored, plain)


def weighted_mean_transform(target, members, w: float, mask) -> np.ndarray:
    """Blend ``target`` with its set: weight ``w`` on masked features, plain mean elsewhere.

    ``members`` must contain the target itself.  A singleton set returns the
    target unchanged.
    """
    d = np.asarray(target, dtype=np.float64)
    G = np.asarray(members, dtype=np.float64)
    if G.size == 0 or len(G) == 0:
        raise EmptyMembers("random set is empty")
    if G.ndim != 2 or d.ndim != 1 or G.shape[1] != d.shape[0]:
        raise DimensionMismatch(f"target shape {d.shape} vs members shape {G.shape}")
    m = mask.included if isinstance(mask, SelectionMask) else np.asarray(mask, dtype=bool)
    if m.shape != d.shape:
        raise DimensionMismatch(f"mask length {m.shape} vs {d.shape[0]} features")
    sums = _sum_rows(G, np.arange(len(G))[None, :])[0]
    return _weighted_mean(d[None, :], sums[None, :], len(G), float(w), m)[0]


@dataclass
class AnonymizationResult:
    dataset: Dataset
    matching_counts: np.ndarray
    clamped: List[str] = field(default_factory=list)  # ids of records whose purity was clamped


def run_anonymization(
    dataset: Dataset,
    params: AnonymizationParams,
    mask: SelectionMask,
    workers: Optional[int] = None,
) -> AnonymizationResult:
    params.validate()
    n = len(dataset)
    if n == 0:
        raise EmptyDataset("cannot anonymize an empty dataset")
    if params.set_size > n:
        raise SetTooLarge(f"set size {params.set_size} exceeds dataset size {n}")
    if len(mask) != dataset.n_features:
        raise DimensionMismatch(f"mask length {len(mask)} vs {dataset.n_features} features")
    X = dataset.features
    g = int(params.set_size)
    pools = _Pools(dataset.labels_of(dataset.schema.attribute_of_interest))

    def work(start: int):
        stop = min(start + CHUNK, n)
        members = np.empty((stop - start, g), dtype=np.intp)
        matching = np.empty(stop - start, dtype=np.intp)
        clamped = []
        for k, i in enumerate(range(start, stop)):
            rs = pools.draw(i, params, record_rng(params.seed, i))
            members[k] = rs.member_indices
            matching[k] = rs.matching_count
            if rs.clamped:
                clamped.append(i)
        out = _weighted_mean(X[start:stop], _sum_rows(X, members), g, float(params.weight), mask.included)
        return out, matching, clamped

    starts = range(0, n, CHUNK)
    nworkers = worker_count(workers)
    if nworkers > 1:
        with ThreadPoolExecutor(max_workers=nworkers) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]

    features = np.concatenate([p[0] for p in parts])
    matching = np.concatenate([p[1] for p in parts])
    clamped_ids = [dataset.ids[i] for p in parts for i in p[2]]
    if clamped_ids:
        warnings.warn(f"purity clamped for {len(clamped_ids)} of {n} records", PurityClamped, stacklevel=2)
    return AnonymizationResult(dataset.with_features(features), matching, clamped_ids)


def anonymize(dataset: Dataset, params: AnonymizationParams, mask: SelectionMask,
              workers: Optional[int] = None) -> Dataset:
    """Transform every record; ids, labels and schema are carried over."""
    return run_anonymization(dataset, params, mask, workers).dataset
