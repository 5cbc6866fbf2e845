"""Command-line interface.

Subcommands: synth, prepare, build-graphs, train, evaluate, predict,
baseline.  Exit codes: 0 success, 1 usage or config error, 2 data error,
3 numeric failure.  Set MOBGT_LOG=INFO (or DEBUG) for progress logging.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .data import (
    CheckIn,
    SynthConfig,
    generate_synthetic,
    load_corpus,
    parse_timestamp,
    prepare_corpus,
    save_corpus,
    write_checkins_tsv,
)
from .errors import ConfigError, DataError, MobgtError, NumericError
from .eval import evaluate, mc_rank_fn, mc_train
from .global_graphs import build_global_graphs, write_edge_list
from .model import Checkpoint, predict_topk, rank_pois, train_model


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    """One flag per config key; unset flags leave file/default values alone."""
    group = parser.add_argument_group("config overrides")
    defaults = RunConfig()
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        default = getattr(defaults, f.name)
        if f.type == "bool":
            group.add_argument(
                flag,
                dest=f.name,
                action=argparse.BooleanOptionalAction,
                default=None,
                help=f"(default: {default})",
            )
        else:
            kind = {"int": int, "float": float, "str": str}[f.type]
            group.add_argument(
                flag, dest=f.name, type=kind, default=None, help=f"(default: {default})"
            )


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {
        f.name: getattr(args, f.name)
        for f in dataclasses.fields(RunConfig)
        if getattr(args, f.name, None) is not None
    }
    return load_config(getattr(args, "config", None), overrides)


def _cmd_synth(args) -> int:
    scfg = SynthConfig(
        users=args.users,
        pois=args.pois,
        categories=args.categories,
        bbox=tuple(args.bbox),
        days=args.days,
        loop_len=args.loop_len,
        regularity=args.regularity,
        clusters=args.clusters,
        seed=args.seed,
    )
    checkins, labels = generate_synthetic(scfg)
    write_checkins_tsv(checkins, labels, args.out)
    print(f"wrote {len(checkins)} check-ins for {scfg.users} users to {args.out}")
    return 0


def _cmd_prepare(args) -> int:
    cfg = _config_from_args(args)
    with open(args.input, "r", encoding="utf-8") as f:
        corpus, vocab = prepare_corpus(f, min_len=cfg.min_session_len, ratio=cfg.split_ratio)
    save_corpus(corpus, vocab, args.out)
    print(
        f"train sessions: {len(corpus.train)}  test sessions: {len(corpus.test)}  "
        f"discarded short sessions: {corpus.discarded_sessions}"
    )
    print(
        f"catalog: {vocab.poi_count} POIs, {vocab.category_count} categories, "
        f"{vocab.user_count} users"
    )
    return 0


def _cmd_build_graphs(args) -> int:
    cfg = _config_from_args(args)
    corpus, vocab = load_corpus(args.corpus)
    graphs = build_global_graphs(corpus.train, vocab, cfg.spatial_threshold_km)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, g in graphs.items():
        write_edge_list(g, out / f"{name}.tsv")
        print(f"{name}: {g.node_count} nodes, {g.edge_count} edges -> {out / (name + '.tsv')}")
    return 0


def _cmd_train(args) -> int:
    cfg = _config_from_args(args)
    corpus, vocab = load_corpus(args.corpus)
    ckpt = train_model(corpus, vocab, cfg)
    ckpt.save(args.out)
    last = ckpt.history[-1] if ckpt.history else {}
    print(
        f"trained {len(ckpt.history)} epochs; last loss "
        f"{last.get('train_loss', float('nan')):.4f}, monitor acc@1 "
        f"{last.get('monitor_acc1', float('nan')):.4f}"
    )
    if args.log:
        Path(args.log).write_text(
            "\n".join(json.dumps(rec, sort_keys=True) for rec in ckpt.history) + "\n",
            encoding="utf-8",
        )
    print(f"checkpoint written to {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    corpus, _ = load_corpus(args.corpus)
    model = ckpt.build_model()
    mode = args.eval_mode or ckpt.config.eval_mode
    report = evaluate(
        lambda prefix: rank_pois(model, prefix),
        corpus.test,
        ckpt.vocab,
        eval_mode=mode,
        config_digest=ckpt.config.digest(),
    )
    print(report.to_table())
    print(report.to_json())
    if args.json_out:
        Path(args.json_out).write_text(report.to_json() + "\n", encoding="utf-8")
    return 0


def _parse_prefix_lines(lines, vocab) -> list[CheckIn]:
    if vocab.labels is None:
        raise DataError("checkpoint carries no raw-id tables; cannot map the prefix")
    users = {raw: i for i, raw in enumerate(vocab.labels.users)}
    pois = {raw: i for i, raw in enumerate(vocab.labels.pois)}
    cats = {raw: i for i, raw in enumerate(vocab.labels.categories)}
    out: list[CheckIn] = []
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = [p.strip() for p in line.split("\t")]
        if len(parts) != 6:
            raise DataError(f"prefix line {lineno}: expected 6 tab-separated fields")
        user_raw, poi_raw, cat_raw, lat_s, lon_s, ts_s = parts
        if poi_raw not in pois:
            raise DataError(f"prefix line {lineno}: unknown POI {poi_raw!r}")
        poi = pois[poi_raw]
        if poi >= vocab.poi_count:
            raise DataError(f"prefix line {lineno}: POI {poi_raw!r} is not in the trained catalog")
        out.append(
            CheckIn(
                user=users.get(user_raw, vocab.user_count),  # unknown user -> cold row
                poi=poi,
                category=cats.get(cat_raw, 0),
                lat=float(lat_s),
                lon=float(lon_s),
                timestamp=parse_timestamp(ts_s, lineno),
            )
        )
    return out


def _cmd_predict(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    model = ckpt.build_model()
    if args.prefix == "-":
        lines = sys.stdin.readlines()
    else:
        lines = Path(args.prefix).read_text(encoding="utf-8").splitlines()
    prefix = _parse_prefix_lines(lines, ckpt.vocab)
    if len(prefix) < 2:
        raise DataError(f"prefix needs at least 2 check-ins, got {len(prefix)}")
    k = args.topk if args.topk is not None else ckpt.config.topk
    for poi, score in predict_topk(model, prefix, k):
        print(f"{ckpt.vocab.poi_label(poi)}\t{score:.6f}")
    return 0


def _cmd_baseline(args) -> int:
    cfg = _config_from_args(args)
    corpus, vocab = load_corpus(args.corpus)
    model = mc_train(corpus.train, vocab)
    mode = args.eval_mode or cfg.eval_mode
    report = evaluate(
        mc_rank_fn(model), corpus.test, vocab, eval_mode=mode, config_digest=cfg.digest()
    )
    print(report.to_table())
    print(report.to_json())
    if args.json_out:
        Path(args.json_out).write_text(report.to_json() + "\n", encoding="utf-8")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="mobgt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a synthetic check-in TSV")
    p.add_argument("--out", required=True)
    p.add_argument("--users", type=int, default=10)
    p.add_argument("--pois", type=int, default=50)
    p.add_argument("--categories", type=int, default=8)
    p.add_argument("--days", type=int, default=7)
    p.add_argument("--loop-len", type=int, default=4)
    p.add_argument("--regularity", type=float, default=0.7)
    p.add_argument("--clusters", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--bbox", type=float, nargs=4, default=[35.5, 35.9, 139.4, 139.9],
        metavar=("LAT_MIN", "LAT_MAX", "LON_MIN", "LON_MAX"),
    )
    p.set_defaults(func=_cmd_synth)

    def with_config(name: str, help_text: str):
        q = sub.add_parser(name, help=help_text)
        q.add_argument("--config", default=None, help="key = value config file")
        _add_config_flags(q)
        return q

    p = with_config("prepare", "parse, segment, split, and cache a corpus")
    p.add_argument("--input", required=True, help="check-in TSV")
    p.add_argument("--out", required=True, help="corpus cache directory")
    p.set_defaults(func=_cmd_prepare)

    p = with_config("build-graphs", "write global graph edge lists from a corpus cache")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_graphs)

    p = with_config("train", "train a model on a prepared corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", default=None, help="write per-epoch JSON lines here")
    p.set_defaults(func=_cmd_train)

    p = with_config("evaluate", "score a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--json-out", default=None)
    p.set_defaults(func=_cmd_evaluate)

    p = with_config("predict", "rank next POIs for a prefix ('-' reads stdin)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--prefix", required=True, help="TSV check-in lines or -")
    p.set_defaults(func=_cmd_predict)

    p = with_config("baseline", "first-order Markov baseline on a prepared corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--json-out", default=None)
    p.set_defaults(func=_cmd_baseline)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("MOBGT_LOG", "WARNING").upper())
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except MobgtError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
