"""Command-line front end.

Every option can come from a flat ``key = value`` config file (``--config``
or the ``HYBRID_IDS_CONFIG`` environment variable); flags override file
values.  Exit codes: 0 success, 1 usage or config error, 2 data error,
3 artifact mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import render
from .detectors import DetectorSet
from .errors import ArtifactMismatchError, EmptyDataError, MalformedRecordError
from .negsel import GaConfig, generate_detectors
from .pipeline import analyze, evaluate
from .schema import (
    ATTACK_CLASSES,
    NORMAL,
    FeatureSchema,
    parse_kdd_record,
    read_kdd,
)
from .som import LvqConfig, SomConfig, SomModel, init_weights, label_map, lvq_train, train

log = logging.getLogger("hybrid_ids")

CONFIG_ENV = "HYBRID_IDS_CONFIG"

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MISMATCH = 0, 1, 2, 3


def _floats(text):
    return tuple(float(x) for x in str(text).split(","))


def _bool(text):
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (type, default, help)
OPTIONS = {
    "train": (str, None, "KDD training file (.gz accepted)"),
    "test": (str, None, "KDD test file (.gz accepted)"),
    "schema": (str, None, "schema JSON path"),
    "base_schema": (str, None, "unfitted schema JSON (defaults to the packaged one)"),
    "detectors": (str, None, "detector-set JSON path"),
    "run_log": (str, None, "convergence CSV path (default: <detectors>.log.csv)"),
    "model": (str, None, "SOM model JSON path"),
    "out_dir": (str, ".", "directory for report files"),
    "out": (str, None, "output path"),
    "format": (str, "text", "grid rendering format: text or svg"),
    "seed": (int, 0, "random seed"),
    "threads": (int, 1, "thread-count hint (recorded in provenance)"),
    "skip_malformed": (_bool, False, "skip malformed records instead of aborting"),
    "population": (int, 1600, "GA population size"),
    "iterations": (int, 50000, "GA iterations"),
    "crossover_rate": (float, 1.0, "crossover rate"),
    "mutation_rate": (float, None, "per-gene mutation rate (default 1/L)"),
    "w1": (float, 0.5, "generality weight"),
    "w2": (float, 0.5, "self-match weight"),
    "self_sample": (int, None, "subsample N normal records for the GA objective"),
    "log_every": (int, 1000, "GA log interval in iterations"),
    "children_per_step": (int, 1, "children produced per crowding step (1 or 2)"),
    "grid": (int, 10, "SOM grid side"),
    "epochs": (int, 2000, "SOM training epochs"),
    "eta0": (float, 0.1, "initial SOM learning rate"),
    "sigma0": (float, None, "initial neighbourhood width (default: grid side)"),
    "init_range": (_floats, (-0.1, 0.1), "weight init interval as low,high"),
    "log_base": (str, "e", "logarithm base for the width time constant: e or 10"),
    "lvq_alpha0": (float, 0.0, "initial LVQ learning rate; 0 disables LVQ"),
    "lvq_epochs": (int, 10, "LVQ epochs"),
    "lvq_seed": (int, None, "LVQ shuffle seed (default: seed)"),
}

COMMANDS = {
    "fit-schema": ("fit equal-frequency bins on training data",
                   ["train", "schema", "base_schema", "skip_malformed"]),
    "train-detectors": ("evolve and purge the detector set",
                        ["train", "schema", "detectors", "run_log", "seed", "threads",
                         "skip_malformed", "population", "iterations", "crossover_rate",
                         "mutation_rate", "w1", "w2", "self_sample", "log_every",
                         "children_per_step"]),
    "train-som": ("train, label and optionally LVQ-refine the SOM",
                  ["train", "schema", "model", "seed", "threads", "skip_malformed", "grid",
                   "epochs", "eta0", "sigma0", "init_range", "log_base", "lvq_alpha0",
                   "lvq_epochs", "lvq_seed"]),
    "evaluate": ("score detectors and SOM on a labelled test file",
                 ["test", "schema", "detectors", "model", "out_dir", "threads",
                  "skip_malformed"]),
    "detect": ("stream verdicts for KDD lines on standard input",
               ["schema", "detectors", "model"]),
    "render-grid": ("draw a labelled SOM grid", ["model", "out", "format"]),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def read_config_file(path: str | Path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in OPTIONS:
                raise UsageError(f"{path}:{n}: unknown key {key!r}")
            out[key] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hybrid-ids", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (help_text, keys) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help=f"key = value config file (env: {CONFIG_ENV})")
        for key in keys:
            _, default, h = OPTIONS[key]
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None,
                           help=f"{h} (default: {default})")
    return parser


def effective_config(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then command-line flags."""
    keys = COMMANDS[args.command][1]
    path = args.config or os.environ.get(CONFIG_ENV)
    from_file = read_config_file(path) if path else {}
    cfg = {}
    for key in keys:
        typ, default, _ = OPTIONS[key]
        raw = getattr(args, key)
        if raw is None:
            raw = from_file.get(key)
        try:
            cfg[key] = default if raw is None else typ(raw)
        except ValueError as exc:
            raise UsageError(f"bad value for {key}: {exc}") from None
    return cfg


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if not cfg.get(k)]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join(
            "--" + k.replace("_", "-") for k in missing))


def _provenance(cfg: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(cfg.items())}


def _write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def _load_encoded(path, schema: FeatureSchema, skip_malformed: bool):
    records, _ = read_kdd(path, skip_malformed=skip_malformed)
    if skip_malformed:
        kept = []
        for r in records:
            try:
                schema.encode_connection(r)
            except MalformedRecordError:
                continue
            kept.append(r)
        records = kept
    data = schema.encode_many(records)
    if data.unknown_attacks:
        log.info("unknown attack names: %s", dict(data.unknown_attacks))
    return data


def _check_digest(schema: FeatureSchema, digest: str, what: str) -> None:
    if digest != schema.digest:
        raise ArtifactMismatchError(schema.digest, digest, what)


# -- commands ----------------------------------------------------------------


def cmd_fit_schema(cfg: dict) -> None:
    _require(cfg, "train", "schema")
    base = FeatureSchema.load(cfg["base_schema"]) if cfg["base_schema"] else FeatureSchema.default()
    records, _ = read_kdd(cfg["train"], skip_malformed=cfg["skip_malformed"])
    if not records:
        raise EmptyDataError(f"{cfg['train']}: no records")
    schema = base.fit(records)
    doc = schema.to_json()
    doc["schema_digest"] = schema.digest
    doc["provenance"] = {"config": _provenance(cfg), "records": len(records)}
    _write_atomic(cfg["schema"], json.dumps(doc, indent=2) + "\n")
    log.info("schema %s written to %s", schema.digest, cfg["schema"])


def cmd_train_detectors(cfg: dict) -> None:
    _require(cfg, "train", "schema", "detectors")
    ga = GaConfig(
        population_size=cfg["population"],
        iterations=cfg["iterations"],
        crossover_rate=cfg["crossover_rate"],
        mutation_rate=cfg["mutation_rate"],
        w1=cfg["w1"],
        w2=cfg["w2"],
        seed=cfg["seed"],
        children_per_step=cfg["children_per_step"],
    )
    schema = FeatureSchema.load(cfg["schema"])
    data = _load_encoded(cfg["train"], schema, cfg["skip_malformed"])
    normal = data.values[data.label_mask(NORMAL)]
    if normal.shape[0] == 0:
        raise EmptyDataError("empty-self-set: no normal records in the training data")
    self_values = normal
    n = cfg["self_sample"]
    if n is not None and n < normal.shape[0]:
        rng = np.random.default_rng([cfg["seed"], 7])
        self_values = normal[np.sort(rng.choice(normal.shape[0], size=n, replace=False))]
    dset, run_log = generate_detectors(
        self_values, schema, ga, purge_values=normal, log_every=cfg["log_every"]
    )
    dset.meta["config"] = _provenance(cfg)
    _write_atomic(cfg["detectors"], dset.dumps())
    log_path = cfg["run_log"] or str(cfg["detectors"]) + ".log.csv"
    lines = ["iteration,best_fitness,mean_generality,mean_self_matches"]
    lines += [f"{it},{best!r},{gen!r},{sm!r}" for it, best, gen, sm in run_log]
    _write_atomic(log_path, "\n".join(lines) + "\n")
    log.info("%d detectors written to %s", len(dset), cfg["detectors"])


def cmd_train_som(cfg: dict) -> None:
    _require(cfg, "train", "schema", "model")
    if cfg["grid"] < 2:
        raise UsageError("grid side must be at least 2")
    som_cfg = SomConfig(
        grid_side=cfg["grid"],
        epochs=cfg["epochs"],
        eta0=cfg["eta0"],
        sigma0=cfg["sigma0"],
        seed=cfg["seed"],
        init_range=cfg["init_range"],
        log_base=cfg["log_base"],
    )
    lvq_cfg = None
    if cfg["lvq_alpha0"] > 0:
        lvq_seed = cfg["seed"] if cfg["lvq_seed"] is None else cfg["lvq_seed"]
        lvq_cfg = LvqConfig(alpha0=cfg["lvq_alpha0"], epochs=cfg["lvq_epochs"], seed=lvq_seed)
    schema = FeatureSchema.load(cfg["schema"])
    data = _load_encoded(cfg["train"], schema, cfg["skip_malformed"])
    attacks = data.subset(data.label_mask(*ATTACK_CLASSES))
    if len(attacks) == 0:
        raise EmptyDataError("no attack records with a known class in the training data")
    x = schema.som_matrix(attacks.values)
    som = init_weights(som_cfg, schema.som_dim, schema.digest)
    som = train(som, x, som_cfg)
    som = label_map(som, x, attacks.labels)
    if lvq_cfg is not None:
        som = lvq_train(som, x, attacks.labels, lvq_cfg)
    som.training["config"] = _provenance(cfg)
    _write_atomic(cfg["model"], som.dumps())
    log.info("model written to %s", cfg["model"])


def _load_artifacts(cfg: dict):
    _require(cfg, "schema", "detectors", "model")
    schema = FeatureSchema.load(cfg["schema"])
    detectors = DetectorSet.load(cfg["detectors"])
    som = SomModel.load(cfg["model"])
    _check_digest(schema, detectors.schema_digest, "detector set")
    _check_digest(schema, som.schema_digest, "SOM model")
    if not som.labelled:
        raise UsageError("the SOM model is not labelled")
    if som.input_dim != schema.som_dim:
        raise ArtifactMismatchError(schema.som_dim, som.input_dim, "SOM input dimension")
    return schema, detectors, som


def cmd_evaluate(cfg: dict) -> None:
    _require(cfg, "test")
    schema, detectors, som = _load_artifacts(cfg)
    data = _load_encoded(cfg["test"], schema, cfg["skip_malformed"])
    if len(data) == 0:
        raise EmptyDataError(f"{cfg['test']}: no records")
    report = evaluate(detectors, som, data, schema)
    lvq = som.training.get("lvq")
    report.provenance = {
        "config": _provenance(cfg),
        "schema_digest": schema.digest,
        "detectors": detectors.meta.get("config", {}),
        "model": som.training.get("config", {}),
        "labels": {
            "detection": "w=({}, {})".format(*detectors.meta.get("weights", ["?", "?"])),
            "classification": "{0}-by-{0}{1}".format(
                som.grid_side, f" + LVQ {lvq['alpha0']}" if lvq else ""),
        },
    }
    out = Path(cfg["out_dir"])
    text = report.render()
    _write_atomic(out / "report.json", report.dumps())
    _write_atomic(out / "report.txt", text)
    sys.stdout.write(text)


def cmd_detect(cfg: dict, stdin=None, stdout=None) -> None:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    schema, detectors, som = _load_artifacts(cfg)
    for line_no, line in enumerate(stdin, start=1):
        try:
            cv = schema.encode_connection(parse_kdd_record(line, line_no))
        except MalformedRecordError:
            stdout.write(f"{line_no},error,malformed-record\n")
        else:
            stdout.write(analyze(detectors, som, cv, schema).line(line_no) + "\n")
        stdout.flush()


def cmd_render_grid(cfg: dict) -> None:
    _require(cfg, "model")
    som = SomModel.load(cfg["model"])
    if not som.labelled:
        raise UsageError("cannot render an unlabeled model")
    fmt = cfg["format"]
    if fmt == "text":
        text = render.render_text(som)
    elif fmt == "svg":
        text = render.render_svg(som)
    else:
        raise UsageError(f"unknown format {fmt!r}")
    if cfg["out"]:
        _write_atomic(cfg["out"], text)
    else:
        sys.stdout.write(text)


HANDLERS = {
    "fit-schema": cmd_fit_schema,
    "train-detectors": cmd_train_detectors,
    "train-som": cmd_train_som,
    "evaluate": cmd_evaluate,
    "detect": cmd_detect,
    "render-grid": cmd_render_grid,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = effective_config(args)
        HANDLERS[args.command](cfg)
    except (UsageError, ValueError) as exc:
        if isinstance(exc, (MalformedRecordError, EmptyDataError)):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ArtifactMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
