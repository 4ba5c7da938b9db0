"""Command-line front end.

    privcdr gen-data  --out data/raw
    privcdr prepare   --config exp.ini
    privcdr train     --config exp.ini [--ablate obf] [--transport socket]
    privcdr evaluate  --config exp.ini
    privcdr sweep     --config exp.ini --param lambda
    privcdr ablate    --config exp.ini
    privcdr export-embeddings --config exp.ini

Without ``--config`` the default synthetic benchmark is used. Outputs land
under ``--out`` (or the config's ``[experiment] out``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import DEFAULT_GRIDS, SWEEP_FIELDS, ConfigError, ExperimentConfig, load_config
from .datasets import (
    DOMAINS,
    MODALITIES,
    DatasetError,
    PreparedData,
    SyntheticSpec,
    generate_synthetic_cdr,
    load_interactions,
    load_prepared,
    prepare_dataset,
    read_feature_table,
    save_prepared,
    write_raw_dataset,
)
from .evaluation import (
    EvaluationError,
    MetricsDocument,
    config_hash,
    export_embeddings,
    metrics_document,
    read_metrics_document,
)
from .exchange import ExchangeError
from .model import ABLATIONS, TrainConfig
from .numeric import CheckpointError, load_checkpoint
from .training import TrainingError, fit, load_runtime, run_hash

log = logging.getLogger("privcdr")

ABLATION_ROWS = [("full", None)] + [(f"w/o {a}", a) for a in ABLATIONS]


class AggregationError(RuntimeError):
    pass


# -- data ---------------------------------------------------------------------------

def load_raw(exp: ExperimentConfig):
    """Interaction tables and modality features from the [synthetic] config or a raw directory."""
    if exp.synthetic is not None:
        syn = generate_synthetic_cdr(exp.synthetic)
        return syn.tables, syn.features, {"source": "synthetic",
                                          "synthetic_hash": config_hash(exp.synthetic.as_dict())}
    root = exp.dataset
    if not root.is_dir():
        raise DatasetError(f"dataset directory not found: {root}")
    tables, features = {}, {}
    for d in DOMAINS:
        path = root / f"{d}.tsv"
        if not path.exists():
            raise DatasetError(f"missing interaction file {path}")
        tables[d] = load_interactions(path, d)
        for m in MODALITIES:
            fpath = root / f"{d}.{m}.p2ft"
            if fpath.exists():
                features[(d, m)] = read_feature_table(fpath)
    return tables, features, {"source": str(root)}


def prepared_data(exp: ExperimentConfig) -> PreparedData:
    directory = exp.prepared_dir
    if not (directory / "manifest.ini").exists():
        raise DatasetError(f"no prepared dataset at {directory}; run `privcdr prepare` first")
    return load_prepared(directory)


def _users(data: PreparedData) -> dict:
    return {d: data[d].table.users for d in DOMAINS}


# -- single runs ----------------------------------------------------------------------

def _base_hash(cfg: TrainConfig, data: PreparedData, varied: str | None) -> str:
    d = cfg.as_dict()
    if varied is not None:
        d.pop(varied)
    return config_hash({"train": d, "data": data.manifest_hash()})


def run_point(data: PreparedData, cfg: TrainConfig, directory: Path, transport: str,
              doc_extra: dict | None = None, reuse: bool = True) -> MetricsDocument:
    """Train one configuration into ``directory``; reuse a finished run with the same hash."""
    doc_path = directory / "metrics.ini"
    want = run_hash(cfg, data)
    if reuse and doc_path.exists():
        doc = read_metrics_document(doc_path)
        if doc.config_hash == want:
            log.info("reusing %s", directory)
            return doc
    log.info("training into %s", directory)
    report = fit(data, cfg, transport=transport, log=log.debug)
    report.save(directory)
    doc_path.write_text(metrics_document(report.best_metrics, cfg.seed, report.config_hash, cfg.lambda_used,
                                         doc_extra), encoding="utf-8")
    return read_metrics_document(doc_path)


def _check_comparable(docs: list[MetricsDocument]) -> None:
    """Refuse to tabulate documents that do not come from one base configuration."""
    keys = {(d.seed, d.extra.get("base_hash")) for d in docs}
    if len(keys) != 1 or None in {k[1] for k in keys}:
        raise AggregationError(f"refusing to aggregate runs from mixed configurations: {sorted(map(str, keys))}")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def format_table(header: list[str], rows: list[list]) -> str:
    cells = [header] + [[_fmt(v) for v in r] for r in rows]
    widths = [max(len(r[c]) for r in cells) for c in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _metric_cols(doc: MetricsDocument) -> list[float]:
    out = []
    for d in DOMAINS:
        s = doc.summaries[d]
        out += [s.hr, s.ndcg]
    return out


def _metric_header(k: int) -> list[str]:
    return [f"{m}@{k}_{d}" for d in DOMAINS for m in ("HR", "NDCG")]


def _lam(doc: MetricsDocument) -> str:
    return "none" if doc.lambda_used is None else repr(doc.lambda_used)


# -- commands ---------------------------------------------------------------------

def cmd_gen_data(exp: ExperimentConfig, args) -> int:
    spec = exp.synthetic if exp.synthetic is not None else SyntheticSpec(seed=exp.seed)
    out = Path(args.out) if args.out else exp.out / "raw"
    paths = write_raw_dataset(out, generate_synthetic_cdr(spec))
    print(f"wrote {len(paths)} files to {out}")
    return 0


def cmd_prepare(exp: ExperimentConfig, args) -> int:
    tables, features, source = load_raw(exp)
    data = prepare_dataset(tables, features, k=exp.k_core, seed=exp.seed)
    data.extra.update(source)
    directory = save_prepared(exp.prepared_dir, data)
    sys.stdout.write(data.manifest_text())
    print(f"manifest_sha256 = {data.manifest_hash()}")
    print(f"prepared dataset written to {directory}")
    return 0


def cmd_train(exp: ExperimentConfig, args) -> int:
    data = prepared_data(exp)
    directory = exp.out / "train"
    report = fit(data, exp.train, transport=args.transport, log=log.info)
    report.save(directory)
    sys.stdout.write(report.metrics_document())
    print(f"best epoch {report.best_epoch}; run written to {directory} ({report.wall_clock:.1f}s)")
    return 0


def _load_trained(exp: ExperimentConfig, data: PreparedData) -> dict:
    directory = exp.out / "train"
    run_path = directory / "run.json"
    if not run_path.exists():
        raise FileNotFoundError(f"no trained run at {directory}; run `privcdr train` first")
    trained = json.loads(run_path.read_text(encoding="utf-8"))["config_hash"]
    want = run_hash(exp.train, data)
    if trained != want:
        raise AggregationError(f"checkpoints in {directory} were trained with config {trained}, "
                               f"current config is {want}; refusing to mix them")
    return {d: load_runtime(data[d], exp.train, load_checkpoint(directory / f"model_{d}.p2ck"), data.seed)
            for d in DOMAINS}


def cmd_evaluate(exp: ExperimentConfig, args) -> int:
    data = prepared_data(exp)
    runtimes = _load_trained(exp, data)
    summaries = {d: rt.evaluate() for d, rt in runtimes.items()}
    doc = metrics_document(summaries, exp.train.seed, run_hash(exp.train, data), exp.train.lambda_used)
    directory = exp.out / "eval"
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "metrics.ini").write_text(doc, encoding="utf-8")
    sys.stdout.write(doc)
    return 0


def cmd_export(exp: ExperimentConfig, args) -> int:
    data = prepared_data(exp)
    runtimes = _load_trained(exp, data)
    bundles = {d: rt.eval_bundle() for d, rt in runtimes.items()}
    paths = export_embeddings(exp.out / "embeddings", bundles, _users(data))
    for p in paths:
        print(p)
    return 0


def cmd_sweep(exp: ExperimentConfig, args) -> int:
    data = prepared_data(exp)
    param = args.param
    field = SWEEP_FIELDS[param]
    grid = sorted(set(exp.grids[param]))
    root = exp.out / f"sweep-{param}"
    base = _base_hash(exp.train, data, field)
    docs = []
    for value in grid:
        cfg = replace(exp.train, **{field: value})
        docs.append(run_point(data, cfg, root / f"{param}={value}", args.transport, {"base_hash": base}))
    _check_comparable(docs)
    k = exp.train.eval_k
    rows = [[v] + _metric_cols(doc) + [doc.mean_hr] for v, doc in zip(grid, docs)]
    header = [param] + _metric_header(k) + [f"mean_HR@{k}"]
    _write_outputs(root, header, rows)
    return 0


def cmd_ablate(exp: ExperimentConfig, args) -> int:
    data = prepared_data(exp)
    root = exp.out / "ablate"
    base = _base_hash(exp.train, data, "ablate")
    docs = []
    for label, flag in ABLATION_ROWS:
        flags = exp.train.ablate | ({flag} if flag else set())
        cfg = replace(exp.train, ablate=frozenset(flags))
        name = "full" if flag is None else f"wo-{flag}"
        docs.append(run_point(data, cfg, root / name, args.transport, {"base_hash": base}))
    _check_comparable(docs)
    k = exp.train.eval_k
    rows = [[label, _lam(doc)] + _metric_cols(doc) for (label, _), doc in zip(ABLATION_ROWS, docs)]
    _write_outputs(root, ["variant", "lambda"] + _metric_header(k), rows)
    return 0


def _write_outputs(root: Path, header: list[str], rows: list[list]) -> None:
    table = format_table(header, rows)
    (root / "table.txt").write_text(table, encoding="utf-8")
    series = "\t".join(header) + "\n" + "".join("\t".join(repr(v) if isinstance(v, float) else str(v)
                                                          for v in r) + "\n" for r in rows)
    (root / "series.tsv").write_text(series, encoding="utf-8")
    sys.stdout.write(table)
    print(f"table and series written to {root}")


COMMANDS = {
    "gen-data": (cmd_gen_data, "write a synthetic raw dataset"),
    "prepare": (cmd_prepare, "filter, split and align a dataset"),
    "train": (cmd_train, "train both domains and save checkpoints"),
    "evaluate": (cmd_evaluate, "re-evaluate saved checkpoints"),
    "sweep": (cmd_sweep, "train over a hyperparameter grid"),
    "ablate": (cmd_ablate, "train the full model and its eight ablations"),
    "export-embeddings": (cmd_export, "export obfuscated user embeddings and a 2-D projection"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config file (INI)")
    common.add_argument("--seed", type=int, help="override the experiment seed")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--transport", choices=("inproc", "socket"), default="inproc",
                        help="run the domains as threads or as two processes over a socket")
    common.add_argument("--ablate", action="append", default=[], choices=ABLATIONS, metavar="NAME",
                        help=f"drop a component (repeatable): {', '.join(ABLATIONS)}")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="privcdr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (fn, help_) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_)
        if name == "sweep":
            p.add_argument("--param", required=True, choices=sorted(DEFAULT_GRIDS))
        p.set_defaults(func=fn)
    return parser


def resolve_config(args) -> ExperimentConfig:
    exp = load_config(args.config) if args.config else ExperimentConfig(synthetic=SyntheticSpec())
    if args.seed is not None:
        exp = exp.with_seed(args.seed)
    if args.out is not None:
        exp = replace(exp, out=args.out)
    if args.ablate:
        exp = replace(exp, train=replace(exp.train, ablate=exp.train.ablate | set(args.ablate)))
    return exp


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        exp = resolve_config(args)
        return args.func(exp, args)
    except (FileNotFoundError, ConfigError, DatasetError, EvaluationError, ExchangeError, CheckpointError,
            TrainingError, AggregationError, ValueError) as exc:
        print(f"privcdr {args.command}: error: {exc}", file=sys.stderr)
        if isinstance(exc, TrainingError) and exc.dump:
            dump = exp.out / "failure.json"
            dump.parent.mkdir(parents=True, exist_ok=True)
            dump.write_text(json.dumps(exc.dump, indent=2, sort_keys=True), encoding="utf-8")
            print(f"diagnostic dump written to {dump}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
