"""Command-line entry point.

Every command reads an optional JSON config, applies ``--set key=value``
overrides (values parse as JSON) and maps package errors onto exit codes:
2 for configuration errors, 3 for data errors, 4 for anything else.
"""

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .data import SynthConfig, generate_synthetic, load_csv, load_schema, save_csv, save_schema, split
from .errors import AnonError, DatasetIOError, InvalidConfig, UnknownAttribute
from .forest import ForestConfig, accuracy, load_model, save_model, train
from .metrics import Attack, evaluate
from .pipeline import RunConfig, SweepGrid, anonymize_dataset, apply_overrides, compute_relevance, run_sweep, write_sweep_csv
from .transform import worker_count

logger = logging.getLogger("bioanon")

REPORT_SCHEMA = "report.schema.json"


def report_schema() -> dict:
    """The published JSON schema of evaluation reports."""
    return json.loads(resources.files("bioanon").joinpath("schemas", REPORT_SCHEMA).read_text(encoding="utf-8"))


def _read_json(path: Optional[str], what: str) -> dict:
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InvalidConfig(what, f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidConfig(what, f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise InvalidConfig(what, f"{path} must hold a JSON object")
    return obj


def _write_json(obj, path) -> None:
    try:
        Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DatasetIOError(f"cannot write {path}: {exc}") from exc


def _config(args, what: str) -> dict:
    return apply_overrides(_read_json(args.config, what), args.set or [])


def _model_paths(items: Sequence[str]) -> Dict[str, str]:
    out = {}
    for item in items or []:
        attr, sep, path = item.partition("=")
        if not sep or not attr or not path:
            raise InvalidConfig("--model", f"expected attribute=path, got {item!r}")
        out[attr] = path
    return out


def _required(value, name: str):
    if value is None:
        raise InvalidConfig(name, "is required")
    return value


# -- commands -------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = SynthConfig.from_dict(_config(args, "synth")).validate()
    ds = generate_synthetic(cfg)
    schema_out = args.schema_out or str(Path(args.out).with_suffix(".schema.json"))
    save_csv(ds, args.out)
    save_schema(ds.schema, schema_out)
    print(f"wrote {len(ds)} records x {ds.n_features} features to {args.out} (schema {schema_out})")
    return 0


def cmd_train(args) -> int:
    cfg = ForestConfig.from_dict(_config(args, "forest"))
    ds = load_csv(args.data, load_schema(args.schema))
    if args.attribute not in ds.schema.attributes:
        raise UnknownAttribute(args.attribute)
    if args.train_fraction >= 1.0:
        model = train(ds, args.attribute, cfg, workers=worker_count())
        print(f"trained {args.attribute!r} forest on all {len(ds)} records")
    else:
        tr, ev = split(ds, args.train_fraction, args.split_seed)
        model = train(tr, args.attribute, cfg, workers=worker_count())
        print(f"held-out accuracy ({args.attribute}): {accuracy(model, ev):.4f} on {len(ev)} records")
    save_model(model, args.out)
    return 0


def cmd_relevance(args) -> int:
    obj = _config(args, "run")
    if args.method:
        obj["relevance_method"] = args.method
    if args.bins is not None:
        obj["n_bins"] = args.bins
    cfg = RunConfig.from_dict(obj)
    ds = load_csv(args.data, load_schema(args.schema))
    models = {a: load_model(p) for a, p in _model_paths(args.model).items()}
    scores = compute_relevance(ds, cfg, models)
    wanted = args.attribute or list(ds.schema.attributes)
    for a in wanted:
        if a not in scores:
            raise UnknownAttribute(a)
    out = {a: scores[a].to_dict() for a in wanted}
    _write_json(out, args.out)
    for a in wanted:
        top = scores[a].ranking()[:5].tolist()
        print(f"{a}: top features {top}")
    return 0


def _run_config(args) -> RunConfig:
    obj = _config(args, "run")
    for key in ("input", "schema", "output", "sidecar", "report", "topk_csv"):
        value = getattr(args, key, None)
        if value is not None:
            obj[key] = value
    models = _model_paths(getattr(args, "model", None))
    if models:
        obj["models"] = {**obj.get("models", {}), **models}
    if getattr(args, "attack", None):
        obj["attack"] = args.attack
    if getattr(args, "reverse_kl", False):
        obj["reverse_kl"] = True
    return RunConfig.from_dict(obj)


def cmd_anonymize(args) -> int:
    cfg = _run_config(args)
    ds = load_csv(_required(cfg.input, "input"), load_schema(_required(cfg.schema, "schema")))
    output = _required(cfg.output, "output")
    models = {a: load_model(p) for a, p in cfg.models.items()}
    result, mask, sidecar = anonymize_dataset(ds, cfg, models, workers=worker_count())
    save_csv(result.dataset, output)
    sidecar_path = cfg.sidecar or output + ".sidecar.json"
    _write_json(sidecar, sidecar_path)
    print(f"anonymized {len(ds)} records ({mask.selected_count} weighted features, "
          f"{len(result.clamped)} clamped sets) -> {output}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _run_config(args)
    schema = load_schema(_required(cfg.schema, "schema"))
    original = load_csv(_required(args.original or cfg.input, "original"), schema)
    anonymized = load_csv(_required(args.anonymized or cfg.output, "anonymized"), schema)
    models = {a: load_model(p) for a, p in cfg.models.items()}
    params = {"anonymization": asdict(cfg.params), "selection": asdict(cfg.selection)}
    report = evaluate(original, anonymized, models, cfg.weights, cfg.attack, params, cfg.reverse_kl)
    report.save(_required(cfg.report, "report"))
    if cfg.topk_csv:
        report.save_topk_csv(cfg.topk_csv)
    mix = ", ".join(f"{k}={v:.4f}" for k, v in report.mixture.items())
    print(f"accuracy_interest={report.accuracy_interest:.4f} utility={report.utility:.4f} mixture: {mix}")
    return 0


def cmd_sweep(args) -> int:
    obj = _config(args, "sweep")
    grid = SweepGrid.from_dict(obj)
    data = _required(args.data or grid.base.input, "data")
    schema_path = _required(args.schema or grid.base.schema, "schema")
    ds = load_csv(data, load_schema(schema_path))
    h = hashlib.sha256()
    for path in (data, schema_path):
        h.update(Path(path).read_bytes())
    rows = run_sweep(ds, grid, cache_dir=args.cache_dir, workers=worker_count(), data_digest=h.hexdigest())
    write_sweep_csv(rows, args.out)
    print(f"wrote {len(rows)} rows ({grid.size} cells x {grid.repetitions} repetitions) to {args.out}")
    return 0


# -- parser ---------------------------------------------------------------------

def _add_config(p, required=False):
    p.add_argument("--config", required=required, help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config entry (dotted key, JSON value); repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bioanon", description="Biometric feature-vector anonymization.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic benchmark dataset")
    _add_config(p)
    p.add_argument("--out", required=True, help="dataset CSV to write")
    p.add_argument("--schema-out", help="schema JSON to write (default: <out>.schema.json)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a random-forest classifier for one attribute")
    _add_config(p)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--attribute", required=True)
    p.add_argument("--out", required=True, help="model JSON to write")
    p.add_argument("--train-fraction", type=float, default=0.5,
                   help="fraction used for training; 1.0 trains on everything (default 0.5)")
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("relevance", help="per-feature relevance scores")
    _add_config(p)
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--attribute", action="append", help="attribute to score; repeatable (default: all)")
    p.add_argument("--method", choices=["model", "mutual_info"])
    p.add_argument("--bins", type=int)
    p.add_argument("--model", action="append", metavar="ATTR=PATH", help="trained model to read importances from")
    p.add_argument("--out", required=True, help="relevance JSON to write")
    p.set_defaults(func=cmd_relevance)

    p = sub.add_parser("anonymize", help="anonymize a dataset")
    _add_config(p)
    p.add_argument("--input")
    p.add_argument("--schema")
    p.add_argument("--output")
    p.add_argument("--sidecar")
    p.add_argument("--model", action="append", metavar="ATTR=PATH")
    p.set_defaults(func=cmd_anonymize)

    p = sub.add_parser("evaluate", help="score an anonymized dataset")
    _add_config(p)
    p.add_argument("--original")
    p.add_argument("--anonymized")
    p.add_argument("--schema")
    p.add_argument("--model", action="append", metavar="ATTR=PATH")
    p.add_argument("--attack", choices=[a.value for a in Attack])
    p.add_argument("--reverse-kl", action="store_true", help="report KL(uniform || predicted)")
    p.add_argument("--report")
    p.add_argument("--topk-csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="run a parameter grid")
    _add_config(p, required=True)
    p.add_argument("--data")
    p.add_argument("--schema")
    p.add_argument("--out", required=True, help="long-form CSV to write")
    p.add_argument("--cache-dir", help="per-cell result cache; reruns resume from it")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except AnonError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001 - last-resort mapping onto the runtime exit code
        logger.debug("unexpected failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
