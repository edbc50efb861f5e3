"""Command line entry point: ``loadcast {gen,train,predict,eval,saa,bench}``.

Exit codes: 0 success, 1 usage, 2 data error, 3 node budget exceeded.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import yaml

from . import baseline, checkpoint, evaluation, language, nmt, saa
from .catalog import CatalogError, load_catalog
from .instances import DATA_CLASSES, DatasetSpec, build_dataset
from .oracle import SolverTimeout

log = logging.getLogger("loadcast")

EXIT_USAGE, EXIT_DATA, EXIT_BUDGET = 1, 2, 3


class UsageError(Exception):
    pass


class BudgetError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _jobs(value) -> int:
    if value is not None:
        return max(1, int(value))
    env = os.environ.get("LOADCAST_THREADS")
    return max(1, int(env)) if env else 1


def _counts(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(x) for x in text)
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="loadcast", description="Learned tactical load planning.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--catalog", default="default10", help="catalog file or bundled name")
        sp.add_argument("--config", help="YAML file of option defaults; flags override it")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--jobs", type=int, default=None, help="worker processes (default $LOADCAST_THREADS or 1)")
        return sp

    g = common(sub.add_parser("gen", help="sample and label a dataset"))
    g.add_argument("--class", dest="data_class", default="A", choices=sorted(DATA_CLASSES))
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--name", help="file stem (default: class name)")
    g.add_argument("--node-budget", type=int, default=10**7)
    g.add_argument("--strict", action="store_true", help="fail when any label hits the node budget")
    g.add_argument("--out", required=True)

    t = common(sub.add_parser("train", help="train an approximator"))
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--name", help="dataset stem (default: the only manifest in --data)")
    t.add_argument("--model", choices=("nmt", "baseline"), default="nmt")
    t.add_argument("--optimizer", choices=("adam", "adadelta"), default="adam")
    t.add_argument("--batch", type=int, default=64)
    t.add_argument("--dropout", type=float, default=0.2)
    t.add_argument("--patience", type=int, default=1)
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--embed", type=int, default=64)
    t.add_argument("--hidden", type=int, default=128)
    t.add_argument("--layers", type=_counts, default=(256, 256), help="baseline hidden sizes, comma separated")
    t.add_argument("--no-mask", action="store_true", help="train without the output mask")
    t.add_argument("--resume", action="store_true", help="continue from the training state in --out")
    t.add_argument("--out", required=True)

    pr = common(sub.add_parser("predict", help="decode a source file"))
    pr.add_argument("--model", required=True, help="checkpoint file")
    pr.add_argument("--src", required=True)
    pr.add_argument("--width", type=int, default=5)
    pr.add_argument("--out", required=True)

    e = common(sub.add_parser("eval", help="score predictions against gold targets"))
    e.add_argument("--pred", required=True)
    e.add_argument("--gold", required=True)
    e.add_argument("--out", help="write <out>.txt and <out>.csv")

    s = common(sub.add_parser("saa", help="sample average approximation bound"))
    s.add_argument("--src", required=True)
    s.add_argument("--gold", required=True)
    s.add_argument("--scenarios", type=_counts, default=saa.DEFAULT_SCENARIOS)
    s.add_argument("--limit", type=int, default=None, help="use only the first N instances")
    s.add_argument("--out", help="CSV report path")

    b = common(sub.add_parser("bench", help="per-instance prediction latency"))
    b.add_argument("--model", required=True)
    b.add_argument("--src", required=True)
    b.add_argument("--width", type=int, default=5)
    b.add_argument("--limit", type=int, default=None)
    b.add_argument("--out", help="CSV report path")
    return p


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = yaml.safe_load(Path(args.config).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a mapping")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(k.replace("-", "_") for k in cfg) - known
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
        args = parser.parse_args(argv)
    return args


# ---------------------------------------------------------------------------
# helpers


def read_lines(path) -> list[str]:
    try:
        return Path(path).read_text().splitlines()
    except FileNotFoundError:
        raise FileNotFoundError(f"no such file: {path}") from None


def read_sources(path, catalog):
    vocab = language.source_vocab(catalog)
    return [language.decode_input(vocab.from_line(line), catalog) for line in read_lines(path)]


def read_targets(path, catalog):
    vocab = language.target_vocab(catalog)
    return [language.decode_output(vocab.from_line(line), catalog) for line in read_lines(path)]


def read_pairs(data: Path, stem: str, split: str, catalog):
    sv, tv = language.source_vocab(catalog), language.target_vocab(catalog)
    src = read_lines(data / f"{stem}.{split}.src")
    tgt = read_lines(data / f"{stem}.{split}.tgt")
    if len(src) != len(tgt):
        raise ValueError(f"{split}: {len(src)} sources but {len(tgt)} targets")
    return [(sv.from_line(s), tv.from_line(t)) for s, t in zip(src, tgt)]


def find_stem(data: Path, name: str | None) -> str:
    if name:
        return name
    found = sorted(data.glob("*.manifest"))
    if len(found) != 1:
        raise UsageError(f"{data} holds {len(found)} manifests; pick one with --name")
    return found[0].stem


def load_predictor(path, catalog, width):
    params = checkpoint.load_model(path, catalog)
    if isinstance(params, nmt.NmtParams):
        return nmt.NmtPredictor(params, catalog, width)
    return baseline.BaselinePredictor(params, catalog, width)


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args, catalog) -> None:
    spec = DatasetSpec(DATA_CLASSES[args.data_class], args.n, args.seed, name=args.name, node_budget=args.node_budget)
    paths = build_dataset(spec, catalog, args.out, jobs=_jobs(args.jobs))
    manifest = json.loads(paths["manifest"].read_text())
    for split, n in manifest["split_counts"].items():
        print(f"{spec.stem}.{split}: {n}")
    if manifest["timed_out"]:
        msg = f"{len(manifest['timed_out'])} labels hit the node budget"
        if args.strict:
            raise BudgetError(msg)
        print(f"warning: {msg}", file=sys.stderr)


def cmd_train(args, catalog) -> None:
    data = Path(args.data)
    stem = find_stem(data, args.name)
    mpath = data / f"{stem}.manifest"
    if mpath.exists():
        manifest = json.loads(mpath.read_text())
        if manifest.get("catalog_hash") != catalog.hash:
            raise ValueError(f"dataset {stem} was generated with a different catalog")
    train_pairs = read_pairs(data, stem, "train", catalog)
    valid_pairs = read_pairs(data, stem, "valid", catalog)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    state_path = out / "train_state.npz"
    state = checkpoint.load_state(state_path) if args.resume and state_path.exists() else None

    if args.model == "nmt":
        cfg = nmt.TrainConfig(
            optimizer=args.optimizer, batch_size=args.batch, dropout=args.dropout, patience=args.patience,
            max_epochs=args.epochs, seed=args.seed, embed=args.embed, hidden=args.hidden, lr=args.lr,
            mask=not args.no_mask,
        )
        fit = nmt.train
    else:
        cfg = baseline.BaselineConfig(
            hidden=tuple(args.layers), optimizer=args.optimizer, batch_size=args.batch, dropout=args.dropout,
            patience=args.patience, max_epochs=args.epochs, seed=args.seed, lr=args.lr, mask=not args.no_mask,
        )
        fit = baseline.train_baseline
    (out / "config.json").write_text(json.dumps({"model": args.model, **asdict(cfg)}, indent=1, sort_keys=True) + "\n")

    def on_epoch(st, rec):
        with open(out / "history.log", "a") as fh:
            fh.write(rec.line() + "\n")
        checkpoint.save_state(state_path, st)
        checkpoint.save_model(out / "model.ckpt", st.best if st.best is not None else st.params, catalog)
        print(rec.line())

    if state is None:
        (out / "history.log").write_text("")
    params, history = fit(train_pairs, valid_pairs, catalog, cfg, state=state, on_epoch=on_epoch)
    checkpoint.save_model(out / "model.ckpt", params, catalog)


def cmd_predict(args, catalog) -> None:
    predictor = load_predictor(args.model, catalog, args.width)
    vocab = language.target_vocab(catalog)
    with open(args.out, "w", newline="\n") as fh:
        for x in read_sources(args.src, catalog):
            fh.write(vocab.to_line(language.encode_output(predictor(x), catalog)) + "\n")


def cmd_eval(args, catalog) -> None:
    pred = read_targets(args.pred, catalog)
    gold = read_targets(args.gold, catalog)
    report = evaluation.evaluate(gold, pred, catalog)
    print(report.to_text(timing=False), end="")
    if args.out:
        Path(f"{args.out}.txt").write_text(report.to_text(timing=False))
        Path(f"{args.out}.csv").write_text(report.to_csv(timing=False))


def cmd_saa(args, catalog) -> None:
    xs = read_sources(args.src, catalog)
    gold = read_targets(args.gold, catalog)
    if len(xs) != len(gold):
        raise ValueError(f"{len(xs)} sources but {len(gold)} gold targets")
    if args.limit is not None:
        xs, gold = xs[: args.limit], gold[: args.limit]
    rows = saa.saa_bound(xs, gold, catalog, _counts(args.scenarios), seed=args.seed, jobs=_jobs(args.jobs))
    text = saa.format_rows(rows)
    print(text, end="")
    if args.out:
        Path(args.out).write_text(text)


def cmd_bench(args, catalog) -> None:
    predictor = load_predictor(args.model, catalog, args.width)
    xs = read_sources(args.src, catalog)
    if args.limit is not None:
        xs = xs[: args.limit]
    if not xs:
        raise ValueError("no instances to time")
    _, t = evaluation.time_predictions(predictor, xs)
    text = f"n,time_mean,time_std,time_stderr\n{t.n},{t.mean:.6g},{t.std:.6g},{t.stderr:.6g}\n"
    print(text, end="")
    if args.out:
        Path(args.out).write_text(text)


COMMANDS = {
    "gen": cmd_gen, "train": cmd_train, "predict": cmd_predict,
    "eval": cmd_eval, "saa": cmd_saa, "bench": cmd_bench,
}


def main(argv=None) -> int:
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"loadcast: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        catalog = load_catalog(args.catalog)
        COMMANDS[args.command](args, catalog)
    except UsageError as exc:
        print(f"loadcast: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BudgetError, SolverTimeout) as exc:
        print(f"loadcast: node budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (CatalogError, checkpoint.CheckpointError, ValueError, FileNotFoundError) as exc:
        print(f"loadcast: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
