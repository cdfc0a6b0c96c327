"""Command-line entry point: synthesize data, train the attention classifier
and the hash head, verify gradients, encode splits, search, and evaluate.

Output on stdout is line-oriented ``key=value`` (gradcheck additionally
prints its per-block CSV). Exit codes: 0 success, 2 validation error,
3 numerical failure (divergence or gradient check), 4 I/O or file-format
error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import attention, binio, dataio, hashhead, index, lossgrad, metrics, trainer

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

GRADCHECK_TOL = 1e-4


class GradCheckFailed(Exception):
    """The analytic/finite-difference comparison exceeded tolerance."""


def _int_list(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated int list, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ordhash",
        description="Ranking-based K-ary hashing with spatial attention",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic feature dataset")
    p.add_argument("--out", required=True, help="dataset path prefix")
    p.add_argument("--per-class", type=int, default=100, help="records per category")
    p.add_argument("--classes", type=int, default=3, help="number of categories")
    p.add_argument("--m", type=int, default=16, help="feature channels")
    p.add_argument("--x", type=int, default=4, help="feature map width")
    p.add_argument("--y", type=int, default=4, help="feature map height")
    p.add_argument("--noise", type=float, default=0.1, help="feature noise sigma")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--split", choices=dataio.SPLITS, default="train")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-attention", help="fit the attention classifier")
    p.add_argument("--data", required=True, help="dataset path prefix")
    p.add_argument("--out", required=True, help="attention checkpoint path")
    p.add_argument("--epochs", type=int, default=80)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--dump-attention", default=None, metavar="DIR",
                   help="also write each record's attention map as a CSV grid")
    p.set_defaults(func=cmd_train_attention)

    p = sub.add_parser("train", help="train the hash head")
    p.add_argument("--data", required=True, help="training dataset path prefix")
    p.add_argument("--attention", required=True, help="attention checkpoint path")
    p.add_argument("--out", required=True, help="head checkpoint path")
    p.add_argument("--k", type=int, default=4, help="symbols per code position")
    p.add_argument("--bits", type=int, default=16,
                   help="binary bit budget; code length is bits / log2(k)")
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--batch", type=int, default=64, help="pairs per iteration")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--balance", type=float, default=0.5,
                   help="fraction of similar pairs per batch")
    p.add_argument("--log", default=None, help="training log CSV (default <out>.log.csv)")
    p.add_argument("--log-every", type=int, default=10)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gradcheck",
                       help="compare analytic gradients to finite differences")
    p.add_argument("--m", type=int, default=3)
    p.add_argument("--x", type=int, default=2)
    p.add_argument("--y", type=int, default=2)
    p.add_argument("--classes", type=int, default=2,
                   help="categories behind the random attention maps")
    p.add_argument("--k-values", type=_int_list, default=[2, 3, 4])
    p.add_argument("--r-values", type=_int_list, default=[1, 2, 3])
    p.add_argument("--draws", type=int, default=20, help="random draws per (K, R)")
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=20240901)
    p.add_argument("--out", default=None, help="also write the CSV here")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("encode", help="encode a split into a code database")
    p.add_argument("--data", required=True, help="dataset path prefix")
    p.add_argument("--attention", required=True)
    p.add_argument("--head", required=True)
    p.add_argument("--out", required=True, help="code database path")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("search", help="rank a database for each query code")
    p.add_argument("--db", required=True, help="database code file")
    p.add_argument("--queries", required=True, help="query code file")
    p.add_argument("--top", type=int, default=20)
    p.add_argument("--distance", choices=index.DISTANCE_KINDS, default="symbol")
    p.add_argument("--out", required=True, help="ranked results CSV")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="retrieval metrics for a query split")
    p.add_argument("--db", required=True, help="database code file")
    p.add_argument("--queries", required=True, help="query code file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--distance", choices=index.DISTANCE_KINDS, default="symbol")
    p.add_argument("--map-depth", type=int, default=None,
                   help="truncate the mAP numerator at this rank")
    p.add_argument("--p-at", type=_int_list, default=[1, 5, 10],
                   help="precision cutoffs, comma separated")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline",
                       help="synth + train-attention + train + gradcheck + "
                            "encode + search + eval with one seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--train-per-class", type=int, default=100)
    p.add_argument("--db-per-class", type=int, default=50)
    p.add_argument("--query-per-class", type=int, default=10)
    p.add_argument("--m", type=int, default=16)
    p.add_argument("--x", type=int, default=4)
    p.add_argument("--y", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--attention-epochs", type=int, default=80)
    p.add_argument("--attention-lr", type=float, default=0.5)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--bits", type=int, default=16)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--balance", type=float, default=0.5)
    p.add_argument("--top", type=int, default=20)
    p.add_argument("--distance", choices=index.DISTANCE_KINDS, default="symbol")
    p.add_argument("--map-depth", type=int, default=None)
    p.add_argument("--p-at", type=_int_list, default=[1, 5, 10])
    p.set_defaults(func=cmd_pipeline)
    return parser


def cmd_synth(args) -> int:
    manifest, _ = dataio.synth_generate(
        args.out, n_per_class=args.per_class, c=args.classes, m=args.m,
        x=args.x, y=args.y, noise_sigma=args.noise, seed=args.seed,
        split=args.split,
    )
    print(f"dataset={args.out}")
    print(f"records={manifest.record_count}")
    print(f"checksum={manifest.checksum}")
    return EXIT_OK


def cmd_train_attention(args) -> int:
    manifest, records = dataio.load_dataset(args.data)
    model = attention.train_classifier(
        records, manifest.c, epochs=args.epochs, lr=args.lr, seed=args.seed,
        batch_size=args.batch,
    )
    attention.save_attention(model, args.out)
    print(f"attention={args.out}")
    print(f"train_accuracy={attention.classifier_accuracy(model, records)!r}")
    print(f"train_loss={attention.classifier_loss(model, records)!r}")
    if args.dump_attention:
        attention.dump_attention_maps(model, records, args.dump_attention)
        print(f"attention_dump={args.dump_attention}")
    return EXIT_OK


def cmd_train(args) -> int:
    manifest, records = dataio.load_dataset(args.data)
    model = attention.load_attention(args.attention)
    if model.n_channels != manifest.m:
        raise ValueError(
            f"attention model has {model.n_channels} channels, dataset has {manifest.m}"
        )
    r = index.bit_budget(args.bits, args.k)
    config = trainer.TrainConfig(
        k=args.k, r=r, n_iter=args.iters, n_batch=args.batch, lr=args.lr,
        seed=args.seed, balance=args.balance, log_every=args.log_every,
    )
    params, log = trainer.train(records, model, config)
    trainer.checkpoint_save(params, args.out, config)
    log_path = args.log if args.log else str(args.out) + ".log.csv"
    trainer.write_log(log, log_path)
    from . import plots  # deferred: matplotlib is slow to import

    fig_path = str(Path(log_path).with_suffix("")) + ".png"
    plots.save_loss_curve([e.iter for e in log], [e.loss for e in log], fig_path)
    print(f"head={args.out}")
    print(f"code_length={r}")
    print(f"log={log_path}")
    print(f"loss_figure={fig_path}")
    if log:
        print(f"loss_first={log[0].loss!r}")
        print(f"loss_last={log[-1].loss!r}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rows = lossgrad.run_gradient_check(
        m=args.m, x=args.x, y=args.y, c=args.classes, k_values=args.k_values,
        r_values=args.r_values, draws=args.draws, step=args.step, seed=args.seed,
    )
    lines = ["k,r,block,max_rel_err"]
    lines += [f"{row.k},{row.r},{row.block},{row.max_rel_err!r}" for row in rows]
    for line in lines:
        print(line)
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n")
    worst = max(row.max_rel_err for row in rows)
    print(f"gradcheck_worst={worst!r}")
    print(f"gradcheck_tolerance={GRADCHECK_TOL!r}")
    if worst > GRADCHECK_TOL:
        raise GradCheckFailed(
            f"worst relative error {worst:.3e} exceeds {GRADCHECK_TOL:.0e}"
        )
    return EXIT_OK


def cmd_encode(args) -> int:
    manifest, records = dataio.load_dataset(args.data)
    model = attention.load_attention(args.attention)
    params = trainer.checkpoint_load(args.head)
    if model.n_channels != manifest.m or params.m != manifest.m:
        raise ValueError(
            f"channel mismatch: dataset M={manifest.m}, attention "
            f"M={model.n_channels}, head M={params.m}"
        )
    fmaps = np.stack([rec.fmap for rec in records])
    gvecs = np.stack([rec.gvec for rec in records])
    attns = trainer.precompute_attention(model, records)
    codes = hashhead.encode_batch(params, fmaps, gvecs, attns)
    db = index.CodeDatabase.build(
        ids=[rec.id for rec in records], labels=[rec.labels for rec in records],
        codes=codes, k=params.k, r=params.r,
    )
    index.save_codes(db, args.out)
    print(f"codes={args.out}")
    print(f"count={len(db)}")
    print(f"k={db.k}")
    print(f"code_length={db.r}")
    return EXIT_OK


def _load_db_pair(db_path, query_path):
    db = index.load_codes(db_path)
    queries = index.load_codes(query_path)
    if db.k != queries.k or db.r != queries.r:
        raise ValueError(
            f"code dims disagree: database (K={db.k}, R={db.r}) vs "
            f"queries (K={queries.k}, R={queries.r})"
        )
    return db, queries


def cmd_search(args) -> int:
    db, queries = _load_db_pair(args.db, args.queries)
    qcodes = queries.codes()
    lines = ["query_id,rank,db_id,distance"]
    for qi in range(len(queries)):
        ranked = index.search(db, qcodes[qi], args.top, kind=args.distance)
        for rank, (rid, dist) in enumerate(zip(ranked.ids, ranked.distances), 1):
            lines.append(f"{queries.ids[qi]},{rank},{rid},{int(dist)}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"results={args.out}")
    print(f"queries={len(queries)}")
    print(f"top={min(args.top, len(db))}")
    return EXIT_OK


def cmd_eval(args) -> int:
    db, queries = _load_db_pair(args.db, args.queries)
    qcodes = queries.codes()
    rels = []
    for qi in range(len(queries)):
        ranked = index.search(db, qcodes[qi], len(db), kind=args.distance)
        rels.append([dataio.labels_similar(queries.labels[qi], db.labels[di])
                     for di in ranked.indices])
    p_at_values = [n for n in args.p_at if n <= len(db)]
    if not p_at_values:
        raise ValueError(f"no precision cutoff <= database size {len(db)}")
    report = metrics.build_report(rels, p_at_values, depth=args.map_depth)
    paths = metrics.write_report(report, args.out)
    from . import plots  # deferred: matplotlib is slow to import

    out = Path(args.out)
    pr_fig = plots.save_pr_curve(report.pr, out / "pr.png")
    p_at_fig = plots.save_precision_at(report.p_at, out / "p_at.png")
    print(f"map={report.map!r}")
    for n, v in report.p_at.items():
        print(f"p_at_{n}={v!r}")
    print(f"report_dir={out}")
    print(f"pr_csv={paths['pr']}")
    print(f"pr_figure={pr_fig}")
    print(f"p_at_figure={p_at_fig}")
    return EXIT_OK


def _stage(name: str, fn, *fn_args) -> int:
    print(f"stage={name}")
    try:
        return fn(*fn_args)
    except Exception:
        print(f"stage_failed={name}", file=sys.stderr)
        raise


def cmd_pipeline(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    parser = build_parser()

    def run(argv):
        sub_args = parser.parse_args(argv)
        return sub_args.func(sub_args)

    data = {split: str(out / f"data.{split}") for split in dataio.SPLITS}
    per_split = {
        "train": args.train_per_class,
        "database": args.db_per_class,
        "query": args.query_per_class,
    }
    common = ["--classes", str(args.classes), "--m", str(args.m),
              "--x", str(args.x), "--y", str(args.y),
              "--noise", repr(args.noise), "--seed", str(args.seed)]
    for split in dataio.SPLITS:
        _stage(f"synth-{split}", run,
               ["synth", "--out", data[split], "--per-class",
                str(per_split[split]), "--split", split] + common)

    attn_path = str(out / "attention.doha")
    _stage("train-attention", run,
           ["train-attention", "--data", data["train"], "--out", attn_path,
            "--epochs", str(args.attention_epochs),
            "--lr", repr(args.attention_lr), "--seed", str(args.seed)])

    head_path = str(out / "head.dohh")
    log_path = str(out / "train_log.csv")
    _stage("train", run,
           ["train", "--data", data["train"], "--attention", attn_path,
            "--out", head_path, "--k", str(args.k), "--bits", str(args.bits),
            "--lr", repr(args.lr), "--iters", str(args.iters),
            "--batch", str(args.batch), "--seed", str(args.seed),
            "--balance", repr(args.balance), "--log", log_path,
            "--log-every", "1"])

    _stage("gradcheck", run,
           ["gradcheck", "--out", str(out / "gradcheck.csv"),
            "--seed", str(args.seed)])

    codes = {}
    for split in ("database", "query"):
        codes[split] = str(out / f"codes.{split}.dohc")
        _stage(f"encode-{split}", run,
               ["encode", "--data", data[split], "--attention", attn_path,
                "--head", head_path, "--out", codes[split]])

    _stage("search", run,
           ["search", "--db", codes["database"], "--queries", codes["query"],
            "--top", str(args.top), "--distance", args.distance,
            "--out", str(out / "search.csv")])

    eval_argv = ["eval", "--db", codes["database"], "--queries", codes["query"],
                 "--out", str(out / "metrics"), "--distance", args.distance,
                 "--p-at", ",".join(str(n) for n in args.p_at)]
    if args.map_depth is not None:
        eval_argv += ["--map-depth", str(args.map_depth)]
    _stage("eval", run, eval_argv)

    log = trainer.read_log(log_path)
    tail = max(1, len(log) // 10)
    first = float(np.mean([e.loss for e in log[:tail]]))
    last = float(np.mean([e.loss for e in log[-tail:]]))
    print(f"loss_initial_smoothed={first!r}")
    print(f"loss_final_smoothed={last!r}")
    map_line = (out / "metrics" / "map.csv").read_text().splitlines()[1]
    print(f"final_map={map_line}")
    print(f"pipeline_dir={out}")
    return EXIT_OK


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (trainer.TrainingDivergedError, GradCheckFailed) as exc:
        print(f"error={args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (binio.FileFormatError, dataio.DatasetError, OSError) as exc:
        print(f"error={args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, dataio.SamplingError, attention.TrainingDataError) as exc:
        print(f"error={args.command}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
