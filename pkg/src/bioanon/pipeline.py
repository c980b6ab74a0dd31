"""End-to-end runs: configuration, model preparation, anonymization, sweeps."""

import csv
import hashlib
import io
import itertools
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .data import Dataset, split
from .errors import DatasetIOError, GridTooLarge, InvalidConfig, UnknownAttribute
from .forest import ClassifierModel, ForestConfig, train
from .metrics import Attack, EvaluationReport, UtilityWeights, evaluate
from .relevance import (
    DEFAULT_BINS,
    RelevanceScores,
    SelectionConfig,
    SelectionMask,
    relevance_mi,
    relevance_model,
    select_features,
)
from .transform import AnonymizationParams, AnonymizationResult, run_anonymization, worker_count

logger = logging.getLogger(__name__)

RELEVANCE_METHODS = ("model", "mutual_info")

# short axis names accepted in sweep grids
AXIS_ALIASES = {
    "t": "purity",
    "g": "set_size",
    "w": "weight",
    "r_p": "retention_interest",
    "r_q": "retention_additional",
    "r_s": "retention_sensitive",
}
AXES = ("purity", "set_size", "weight", "retention_interest", "retention_additional", "retention_sensitive")


def derive_seed(base: int, *keys: int) -> int:
    state = np.random.SeedSequence([int(base), *map(int, keys)]).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


@dataclass(frozen=True)
class RunConfig:
    params: AnonymizationParams = field(default_factory=AnonymizationParams)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    relevance_method: str = "model"
    n_bins: int = DEFAULT_BINS
    sensitive_attribute: Optional[str] = None  # drives rejection; default: first sensitive attribute
    forest: ForestConfig = field(default_factory=ForestConfig)
    weights: UtilityWeights = field(default_factory=UtilityWeights)
    attack: Attack = Attack.CLASSIFIER
    reverse_kl: bool = False
    train_fraction: float = 0.5
    split_seed: int = 0
    # file paths, all optional at the library level
    input: Optional[str] = None
    schema: Optional[str] = None
    output: Optional[str] = None
    sidecar: Optional[str] = None
    report: Optional[str] = None
    topk_csv: Optional[str] = None
    models: Mapping[str, str] = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        self.params.validate()
        self.forest.validate()
        if self.relevance_method not in RELEVANCE_METHODS:
            raise InvalidConfig("relevance_method", f"must be one of {RELEVANCE_METHODS}")
        if self.n_bins < 2:
            raise InvalidConfig("n_bins", "must be >= 2")
        if not 0.0 < self.train_fraction < 1.0:
            raise InvalidConfig("train_fraction", "must lie strictly between 0 and 1")
        return self

    @classmethod
    def from_dict(cls, obj: Mapping) -> "RunConfig":
        obj = dict(obj)
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise InvalidConfig(sorted(unknown)[0], "unknown run config field")
        try:
            if "params" in obj:
                obj["params"] = AnonymizationParams.from_dict(obj["params"])
            if "selection" in obj:
                obj["selection"] = SelectionConfig(**obj["selection"])
            if "forest" in obj:
                obj["forest"] = ForestConfig.from_dict(obj["forest"])
            if "weights" in obj:
                obj["weights"] = UtilityWeights(obj["weights"])
            if "attack" in obj:
                obj["attack"] = Attack(obj["attack"])
            return cls(**obj).validate()
        except InvalidConfig:
            raise
        except (TypeError, ValueError) as exc:
            raise InvalidConfig("config", str(exc)) from exc

    def to_dict(self) -> dict:
        out = asdict(self)
        out["weights"] = dict(self.weights.alphas)
        out["attack"] = self.attack.value
        return out


def apply_overrides(obj: dict, assignments: Sequence[str]) -> dict:
    """Apply ``key.sub=value`` overrides; values parse as JSON, else as text."""
    obj = json.loads(json.dumps(obj))
    for item in assignments:
        if "=" not in item:
            raise InvalidConfig(item, "override must look like key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = obj
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise InvalidConfig(key, f"{p!r} is not an object")
        node[parts[-1]] = value
    return obj


# -- relevance + selection ----------------------------------------------------

def compute_relevance(
    dataset: Dataset,
    cfg: RunConfig,
    models: Optional[Mapping[str, ClassifierModel]] = None,
) -> Dict[str, RelevanceScores]:
    """Relevance scores for every schema attribute.

    Model relevance reads the importances of ``models`` (training a forest
    on ``dataset`` for any attribute without one); mutual information is
    computed on ``dataset`` directly.
    """
    out = {}
    for attr in dataset.schema.attributes:
        if cfg.relevance_method == "mutual_info":
            out[attr] = relevance_mi(dataset, attr, cfg.n_bins)
        else:
            model = (models or {}).get(attr)
            if model is None:
                model = train(dataset, attr, cfg.forest)
            out[attr] = relevance_model(model, attr)
    return out


def sensitive_for_rejection(schema, cfg: RunConfig) -> Optional[str]:
    if cfg.sensitive_attribute is not None:
        if cfg.sensitive_attribute not in schema.sensitive_attributes:
            raise UnknownAttribute(cfg.sensitive_attribute)
        return cfg.sensitive_attribute
    return schema.sensitive_attributes[0] if schema.sensitive_attributes else None


def build_mask(schema, relevance: Mapping[str, RelevanceScores], selection: SelectionConfig,
               cfg: RunConfig) -> SelectionMask:
    for attr in selection.retention_additional:
        if attr not in schema.additional_attributes:
            raise UnknownAttribute(attr)
    s = sensitive_for_rejection(schema, cfg)
    return select_features(
        relevance[schema.attribute_of_interest],
        [relevance[q] for q in schema.additional_attributes],
        relevance[s] if s is not None and selection.retention_sensitive > 0 else None,
        selection,
    )


# -- experiments --------------------------------------------------------------

@dataclass
class Prepared:
    """Train/eval split with models trained on the training side."""

    train: Dataset
    eval: Dataset
    models: Dict[str, ClassifierModel]
    relevance: Dict[str, RelevanceScores]


def prepare(dataset: Dataset, cfg: RunConfig, workers: Optional[int] = None) -> Prepared:
    train_set, eval_set = split(dataset, cfg.train_fraction, cfg.split_seed)
    nworkers = worker_count(workers)
    models = {
        attr: train(train_set, attr, cfg.forest, workers=nworkers)
        for attr in dataset.schema.attributes
    }
    relevance = compute_relevance(eval_set, cfg, models)
    return Prepared(train_set, eval_set, models, relevance)


@dataclass
class CellResult:
    report: EvaluationReport
    mask: SelectionMask
    anonymization: AnonymizationResult


def run_cell(prep: Prepared, cfg: RunConfig, workers: Optional[int] = None) -> CellResult:
    """Anonymize the evaluation split under ``cfg`` and evaluate it."""
    schema = prep.eval.schema
    mask = build_mask(schema, prep.relevance, cfg.selection, cfg)
    result = run_anonymization(prep.eval, cfg.params, mask, workers)
    report = evaluate(
        prep.eval,
        result.dataset,
        prep.models,
        cfg.weights,
        cfg.attack,
        params=cell_params(cfg),
        reverse_kl=cfg.reverse_kl,
    )
    return CellResult(report, mask, result)


def cell_params(cfg: RunConfig) -> dict:
    return {
        "params": asdict(cfg.params),
        "selection": asdict(cfg.selection),
        "relevance_method": cfg.relevance_method,
        "n_bins": cfg.n_bins,
        "sensitive_attribute": cfg.sensitive_attribute,
        "forest": asdict(cfg.forest),
        "attack": cfg.attack.value,
        "train_fraction": cfg.train_fraction,
        "split_seed": cfg.split_seed,
    }


def anonymize_dataset(dataset: Dataset, cfg: RunConfig,
                      models: Optional[Mapping[str, ClassifierModel]] = None,
                      workers: Optional[int] = None) -> Tuple[AnonymizationResult, SelectionMask, dict]:
    """Relevance, selection and transform over a whole dataset.

    Returns the transform result, the mask and the sidecar metadata.
    """
    t0 = time.perf_counter()
    relevance = compute_relevance(dataset, cfg, models)
    t1 = time.perf_counter()
    mask = build_mask(dataset.schema, relevance, cfg.selection, cfg)
    result = run_anonymization(dataset, cfg.params, mask, workers)
    t2 = time.perf_counter()
    sidecar = {
        "params": asdict(cfg.params),
        "selection": asdict(cfg.selection),
        "relevance_method": cfg.relevance_method,
        "relevance": {a: r.to_dict() for a, r in relevance.items()},
        "mask": {**mask.to_dict(), "digest": mask.digest(), "warnings": list(mask.warnings)},
        "clamped_records": result.clamped,
        "n_clamped": len(result.clamped),
        "n_records": len(dataset),
        # wall-clock timings vary run to run; kept out of determinism checks
        "timings_s": {"relevance": round(t1 - t0, 6), "transform": round(t2 - t1, 6)},
    }
    return result, mask, sidecar


# -- sweeps -------------------------------------------------------------------

@dataclass(frozen=True)
class SweepGrid:
    axes: Mapping[str, Sequence[Any]]
    repetitions: int = 1
    base: RunConfig = field(default_factory=RunConfig)
    cap: int = 10_000

    def __post_init__(self):
        axes = {}
        for name, values in dict(self.axes).items():
            canonical = AXIS_ALIASES.get(name, name)
            if canonical not in AXES:
                raise InvalidConfig(f"axes.{name}", "not a sweepable parameter")
            if canonical in axes:
                raise InvalidConfig(f"axes.{name}", "axis given twice")
            if not isinstance(values, (list, tuple)) or not values:
                raise InvalidConfig(f"axes.{name}", "must be a nonempty list")
            axes[canonical] = list(values)
        object.__setattr__(self, "axes", dict(sorted(axes.items())))
        if int(self.repetitions) < 1:
            raise InvalidConfig("repetitions", "must be >= 1")

    @property
    def size(self) -> int:
        n = 1
        for v in self.axes.values():
            n *= len(v)
        return n

    def check_cap(self) -> None:
        if self.size * self.repetitions > self.cap:
            raise GridTooLarge(f"{self.size} cells x {self.repetitions} repetitions exceeds cap {self.cap}")

    def cells(self) -> List[Dict[str, Any]]:
        names = list(self.axes)
        return [dict(zip(names, combo)) for combo in itertools.product(*self.axes.values())]

    @classmethod
    def from_dict(cls, obj: Mapping) -> "SweepGrid":
        obj = dict(obj)
        base = RunConfig.from_dict(obj.pop("base", {}))
        axes = obj.pop("axes", None)
        if not axes:
            raise InvalidConfig("axes", "a sweep needs at least one axis")
        reps = obj.pop("repetitions", 1)
        cap = obj.pop("cap", 10_000)
        if obj:
            raise InvalidConfig(sorted(obj)[0], "unknown sweep field")
        return cls(axes, int(reps), base, int(cap))


def cell_config(base: RunConfig, cell: Mapping[str, Any], schema, cell_index: int, rep: int) -> RunConfig:
    params = base.params
    selection = base.selection
    pvals = {k: cell[k] for k in ("purity", "set_size", "weight") if k in cell}
    params = replace(params, **pvals, seed=derive_seed(base.params.seed, cell_index, rep))
    svals = {}
    if "retention_interest" in cell:
        svals["retention_interest"] = float(cell["retention_interest"])
    if "retention_sensitive" in cell:
        svals["retention_sensitive"] = float(cell["retention_sensitive"])
    if "retention_additional" in cell:
        v = cell["retention_additional"]
        svals["retention_additional"] = (
            dict(v) if isinstance(v, Mapping) else {q: float(v) for q in schema.additional_attributes}
        )
    selection = replace(selection, **svals)
    return replace(base, params=params, selection=selection)


def rep_config(base: RunConfig, rep: int) -> RunConfig:
    """Split and forest seeds of one repetition."""
    return replace(
        base,
        split_seed=derive_seed(base.split_seed, rep),
        forest=replace(base.forest, seed=derive_seed(base.forest.seed, rep)),
    )


def _flatten(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, Mapping):
        return json.dumps(value, sort_keys=True)
    return str(value)


def report_row(report: EvaluationReport) -> Dict[str, Any]:
    row: Dict[str, Any] = {"accuracy_interest": report.accuracy_interest}
    for q, a in sorted(report.accuracy_additional.items()):
        row[f"accuracy_{q}"] = a
    row["utility"] = report.utility
    for s, m in sorted(report.mixture.items()):
        row[f"mixture_{s}"] = m
    row["mean_kl"] = "" if report.mean_kl_nats is None else report.mean_kl_nats
    return row


def run_sweep(
    dataset: Dataset,
    grid: SweepGrid,
    cache_dir=None,
    workers: Optional[int] = None,
    data_digest: str = "",
) -> List[Dict[str, Any]]:
    """Evaluate every grid cell for every repetition.

    Rows come back ordered by cell (axes in name order, values in the order
    given), then repetition.  With ``cache_dir`` each finished cell is stored
    under its config digest and reused on the next run.
    """
    grid.check_cap()
    if not grid.base.weights.alphas and dataset.schema.additional_attributes:
        # unstated utility weights default to 1 per additional attribute
        alphas = {q: 1.0 for q in dataset.schema.additional_attributes}
        grid = replace(grid, base=replace(grid.base, weights=UtilityWeights(alphas)))
    nworkers = worker_count(workers)
    cells = grid.cells()
    cache = Path(cache_dir) if cache_dir else None
    if cache:
        cache.mkdir(parents=True, exist_ok=True)

    results: Dict[Tuple[int, int], Dict[str, Any]] = {}
    for rep in range(grid.repetitions):
        base = rep_config(grid.base, rep)
        todo = []
        for ci, cell in enumerate(cells):
            cfg = cell_config(base, cell, dataset.schema, ci, rep)
            key = hashlib.sha256(
                json.dumps({"data": data_digest, "cfg": cell_params(cfg), "weights": cfg.weights.alphas},
                           sort_keys=True).encode()
            ).hexdigest()[:24]
            path = cache / f"{key}.json" if cache else None
            if path is not None and path.exists():
                results[ci, rep] = json.loads(path.read_text())
            else:
                todo.append((ci, cell, cfg, path))
        if not todo:
            continue
        logger.info("repetition %d: preparing models, %d cells to run", rep, len(todo))
        prep = prepare(dataset, base, workers=nworkers)

        def work(item):
            ci, cell, cfg, path = item
            cr = run_cell(prep, cfg, workers=1)
            row = {"cell": ci, "repetition": rep}
            row.update({k: _flatten(v) for k, v in cell.items()})
            row.update({
                "set_size": cfg.params.set_size,
                "purity": cfg.params.purity,
                "weight": cfg.params.weight,
                "retention_interest": cfg.selection.retention_interest,
                "retention_sensitive": cfg.selection.retention_sensitive,
                "selected_features": cr.mask.selected_count,
            })
            row.update(report_row(cr.report))
            if path is not None:
                tmp = path.with_suffix(".tmp")
                tmp.write_text(json.dumps(row))
                tmp.replace(path)
            return ci, row

        if nworkers > 1:
            with ThreadPoolExecutor(max_workers=nworkers) as pool:
                done = list(pool.map(work, todo))
        else:
            done = [work(item) for item in todo]
        for ci, row in done:
            results[ci, rep] = row

    return [results[ci, rep] for ci in range(len(cells)) for rep in range(grid.repetitions)]


def rows_to_csv(rows: List[Dict[str, Any]]) -> str:
    columns: List[str] = []
    for row in rows:
        for k in row:
            if k not in columns:
                columns.append(k)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_flatten(row.get(c, "")) for c in columns])
    return buf.getvalue()


def write_sweep_csv(rows, path) -> None:
    try:
        Path(path).write_text(rows_to_csv(rows), encoding="utf-8")
    except OSError as exc:
        raise DatasetIOError(f"cannot write {path}: {exc}") from exc
