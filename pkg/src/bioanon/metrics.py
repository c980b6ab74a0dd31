"""Utility, mixture, re-identification and random-guess metrics."""

import csv
import enum
import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .data import Dataset
from .errors import (
    DatasetIOError,
    DimensionMismatch,
    KOutOfRange,
    MisalignedDatasets,
    MissingWeight,
    NotADistribution,
    OutOfRange,
    UntrainedModel,
    ZeroNormVector,
)
from .forest import ClassifierModel, accuracy

PROB_FLOOR = 1e-12


class Attack(str, enum.Enum):
    COSINE = "cosine"
    CLASSIFIER = "classifier"


@dataclass(frozen=True)
class UtilityWeights:
    alphas: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        alphas = {str(k): float(v) for k, v in dict(self.alphas).items()}
        for k, v in alphas.items():
            if not (math.isfinite(v) and v >= 0):
                raise OutOfRange(f"utility weight for {k!r} must be finite and >= 0")
        object.__setattr__(self, "alphas", alphas)


def utility(acc_p: float, acc_q: Mapping[str, float], weights: UtilityWeights = UtilityWeights()) -> float:
    """Interest accuracy plus alpha-weighted additional-attribute accuracies."""
    total = float(acc_p)
    for attr, acc in acc_q.items():
        if attr not in weights.alphas:
            warnings.warn(f"no utility weight for {attr!r}; using 0", MissingWeight, stacklevel=2)
            continue
        total += weights.alphas[attr] * float(acc)
    return total


def mixture(sensitive_accuracy: float) -> float:
    if not 0.0 <= sensitive_accuracy <= 1.0:
        raise OutOfRange(f"accuracy {sensitive_accuracy} not in [0, 1]")
    return 1.0 - sensitive_accuracy


# -- cosine re-identification -------------------------------------------------

def cosine_distances(queries: np.ndarray, references: np.ndarray) -> np.ndarray:
    Q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    R = np.atleast_2d(np.asarray(references, dtype=np.float64))
    if Q.shape[1] != R.shape[1]:
        raise DimensionMismatch(f"{Q.shape[1]} vs {R.shape[1]} features")
    qn = np.linalg.norm(Q, axis=1)
    rn = np.linalg.norm(R, axis=1)
    if np.any(qn == 0) or np.any(rn == 0):
        raise ZeroNormVector("cosine distance undefined for zero vectors")
    return 1.0 - (Q / qn[:, None]) @ (R / rn[:, None]).T


def reidentify_cosine(anonymized: Dataset, originals: Dataset) -> List[List[str]]:
    """For each anonymized record, original ids from nearest to farthest.

    Ties keep the originals' record order.
    """
    if len(originals) == 0:
        raise MisalignedDatasets("no original records to match against")
    dist = cosine_distances(anonymized.features, originals.features)
    order = np.argsort(dist, axis=1, kind="stable")
    ids = np.asarray(originals.ids, dtype=object)
    return [ids[row].tolist() for row in order]


def true_match_ranks(anonymized: Dataset, originals: Dataset) -> np.ndarray:
    """0-based rank of each record's own original under the cosine attack.

    Same ordering as :func:`reidentify_cosine` without materialising the
    full candidate lists.
    """
    position = {rid: i for i, rid in enumerate(originals.ids)}
    try:
        truth = np.array([position[rid] for rid in anonymized.ids])
    except KeyError as exc:
        raise MisalignedDatasets(f"record {exc.args[0]!r} missing from originals") from None
    dist = cosine_distances(anonymized.features, originals.features)
    own = dist[np.arange(len(truth)), truth][:, None]
    cols = np.arange(dist.shape[1])[None, :]
    ahead = (dist < own) | ((dist == own) & (cols < truth[:, None]))
    return ahead.sum(axis=1)


def topk_hit_rate(ranked: Sequence[Sequence[str]], truth: Sequence[str], k: int) -> float:
    if not ranked:
        raise KOutOfRange("no ranked lists")
    n = len(ranked[0])
    if not 1 <= k <= n:
        raise KOutOfRange(f"k={k} outside [1, {n}]")
    hits = sum(1 for cands, t in zip(ranked, truth) if t in cands[:k])
    return hits / len(ranked)


def topk_curve_from_ranks(ranks: np.ndarray, n_candidates: int) -> List[dict]:
    """Hit rate for every k in 1..n_candidates from 0-based true ranks."""
    hist = np.bincount(np.asarray(ranks, dtype=np.intp), minlength=n_candidates)[:n_candidates]
    hits = np.cumsum(hist) / len(ranks)
    return [
        {"k": k, "hit_rate": float(hits[k - 1]), "random_baseline": k / n_candidates}
        for k in range(1, n_candidates + 1)
    ]


# -- KL from random guess -----------------------------------------------------

def kl_from_uniform(proba, reverse: bool = False) -> float:
    """KL divergence between a predicted distribution and the uniform one.

    Forward (default) is ``sum p_i ln(p_i N)``; ``reverse=True`` gives
    ``sum (1/N) ln(1 / (N p_i))`` with probabilities floored at 1e-12.
    """
    p = np.asarray(proba, dtype=np.float64)
    if p.ndim != 1 or len(p) == 0 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
        raise NotADistribution(f"not a probability vector: {p!r}")
    return float(_kl_rows(p[None, :], reverse)[0])


def _kl_rows(P: np.ndarray, reverse: bool = False) -> np.ndarray:
    n = P.shape[1]
    if reverse:
        return np.mean(-np.log(np.maximum(P, PROB_FLOOR) * n), axis=1)
    safe = np.maximum(P, PROB_FLOOR)
    return np.maximum(np.sum(np.where(P > 0, P * np.log(safe * n), 0.0), axis=1), 0.0)


def mean_kl_from_uniform(P: np.ndarray, reverse: bool = False) -> float:
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-6):
        raise NotADistribution("rows must be probability vectors")
    return float(np.mean(_kl_rows(P, reverse)))


# -- report ---------------------------------------------------------------------

@dataclass
class EvaluationReport:
    attack: str
    n_records: int
    accuracy_interest: float
    accuracy_additional: Dict[str, float]
    utility: float
    utility_weights: Dict[str, float]
    sensitive_accuracy: Dict[str, float]
    mixture: Dict[str, float]
    topk_curve: List[dict]
    topk_attribute: str
    mean_kl_nats: Optional[float]
    kl_direction: str
    params_digest: str
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def hit_rate(self, k: int) -> float:
        return self.topk_curve[k - 1]["hit_rate"]

    def save(self, path) -> None:
        try:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(self.to_json())
        except OSError as exc:
            raise DatasetIOError(f"cannot write report {path}: {exc}") from exc

    def save_topk_csv(self, path) -> None:
        try:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["k", "hit_rate", "random_baseline"])
                for row in self.topk_curve:
                    w.writerow([row["k"], repr(row["hit_rate"]), repr(row["random_baseline"])])
        except OSError as exc:
            raise DatasetIOError(f"cannot write {path}: {exc}") from exc


def params_digest(params: Mapping) -> str:
    blob = json.dumps(params, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def align(original: Dataset, anonymized: Dataset) -> Dataset:
    """Reorder ``original`` to match ``anonymized`` record ids."""
    if original.n_features != anonymized.n_features:
        raise MisalignedDatasets(f"{original.n_features} vs {anonymized.n_features} features")
    if set(original.ids) != set(anonymized.ids) or len(original) != len(anonymized):
        raise MisalignedDatasets("original and anonymized datasets hold different record ids")
    if original.ids == anonymized.ids:
        return original
    position = {rid: i for i, rid in enumerate(original.ids)}
    return original.subset([position[rid] for rid in anonymized.ids])


def _model(models: Mapping[str, ClassifierModel], attribute: str) -> ClassifierModel:
    model = models.get(attribute)
    if model is None or not getattr(model, "trees", None):
        raise UntrainedModel(f"no trained model for {attribute!r}")
    return model


def evaluate(
    original: Dataset,
    anonymized: Dataset,
    models: Mapping[str, ClassifierModel],
    weights: UtilityWeights = UtilityWeights(),
    attack: Attack = Attack.CLASSIFIER,
    params: Optional[Mapping] = None,
    reverse_kl: bool = False,
) -> EvaluationReport:
    """Score an anonymized dataset with models trained on original data.

    With the classifier attack every sensitive attribute that has a model is
    attacked by it; the top-k curve and mean KL use the first such
    attribute.  With the cosine attack each record is its own identity: the
    sensitive accuracy is the rank-1 match rate against the originals, keyed
    by the id column, and no KL is computed.
    """
    attack = Attack(attack)
    original = align(original, anonymized)
    schema = anonymized.schema
    acc_p = accuracy(_model(models, schema.attribute_of_interest), anonymized)
    acc_q = {q: accuracy(_model(models, q), anonymized) for q in schema.additional_attributes if q in models}
    u = utility(acc_p, acc_q, weights)

    sensitive_acc: Dict[str, float] = {}
    mean_kl = None
    if attack is Attack.COSINE:
        ranks = true_match_ranks(anonymized, original)
        curve = topk_curve_from_ranks(ranks, len(original))
        key = schema.id_column or "id"
        sensitive_acc[key] = curve[0]["hit_rate"]
        topk_attr = key
    else:
        attacked = [s for s in schema.sensitive_attributes if s in models]
        if not attacked:
            raise UntrainedModel("classifier attack needs a model for a sensitive attribute")
        for s in attacked:
            sensitive_acc[s] = accuracy(models[s], anonymized)
        attacker = models[attacked[0]]
        proba = attacker.predict_proba(anonymized.features)
        truth = np.array([attacker.classes.index(v) if v in attacker.classes else -1
                          for v in anonymized.labels[attacked[0]]])
        own = proba[np.arange(len(truth)), np.maximum(truth, 0)][:, None]
        cols = np.arange(proba.shape[1])[None, :]
        ranks = ((proba > own) | ((proba == own) & (cols < truth[:, None]))).sum(axis=1)
        ranks[truth < 0] = proba.shape[1] - 1
        curve = topk_curve_from_ranks(ranks, proba.shape[1])
        mean_kl = mean_kl_from_uniform(proba, reverse=reverse_kl)
        topk_attr = attacked[0]

    params = dict(params or {})
    return EvaluationReport(
        attack=attack.value,
        n_records=len(anonymized),
        accuracy_interest=acc_p,
        accuracy_additional=acc_q,
        utility=u,
        utility_weights=dict(weights.alphas),
        sensitive_accuracy=sensitive_acc,
        mixture={s: mixture(a) for s, a in sensitive_acc.items()},
        topk_curve=curve,
        topk_attribute=topk_attr,
        mean_kl_nats=mean_kl,
        kl_direction="reverse" if reverse_kl else "forward",
        params_digest=params_digest(params),
        params=params,
    )
