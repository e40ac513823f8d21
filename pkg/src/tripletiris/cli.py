"""Command-line pipeline: ``synth``, ``train``, ``embed`` and ``eval``.

Exit codes: 0 success, 2 usage or config error, 3 data or file-format
error, 4 numerical divergence.  Every command checks all of its inputs
before it creates or overwrites any output path.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .backbone import init_model, load_checkpoint, save_checkpoint
from .config import add_config_flags, resolve
from .dataset import generate_synthetic, load_dataset, write_dataset
from .errors import ConfigError, ConfigMismatchError, DatasetError, DivergenceError, FormatError
from .evaluation import all_to_all, build_report, plain_embed, tta_embed_all
from .store import EmbeddingStore, export_scores, read_store, write_store
from .trainer import run_training

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

TRAIN_SECTIONS = ("model", "train", "augment", "data")
EMBED_SECTIONS = ("augment",)
EVAL_SECTIONS = ("eval",)


class UsageError(Exception):
    pass


def _require_output_dir(path: Path) -> None:
    parent = path.parent if str(path.parent) else Path(".")
    if parent.exists() and not parent.is_dir():
        raise UsageError(f"output location {parent} is not a directory")


def _echo(lines) -> str:
    return "".join(f"# {line}\n" for line in lines.splitlines())


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    if args.classes < 2:
        raise UsageError("--classes must be at least 2")
    if args.per_class < 2:
        raise UsageError("--per-class must be at least 2")
    out = Path(args.out)
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        raise UsageError(f"output directory {out} exists and is not empty")
    ds = generate_synthetic(args.classes, args.per_class, args.resolution, args.seed,
                            outer_radius=args.outer_radius)
    write_dataset(ds, out)
    print(f"wrote {len(ds)} images in {len(ds.classes)} classes to {out} "
          f"(resolution {args.resolution}, seed {args.seed})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    cfg = resolve(args, TRAIN_SECTIONS)
    if cfg.data_train is None:
        raise UsageError("a training dataset is required (--data or data.train)")
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_suffix(out.suffix + ".log")
    _require_output_dir(out)
    _require_output_dir(log_path)
    train = load_dataset(cfg.data_train, cfg.model.input_resolution)
    val = load_dataset(cfg.data_val, cfg.model.input_resolution) if cfg.data_val else None
    if len(train.classes) < cfg.train.P:
        raise DatasetError(f"training set has {len(train.classes)} classes, train.P = {cfg.train.P}")

    effective = cfg.to_text(TRAIN_SECTIONS)
    print(effective, end="")
    model_cfg = type(cfg.model)(**{**cfg.model.to_dict(), "num_classes": len(train.classes)})
    model = init_model(model_cfg, cfg.train.seed, head_classes=train.class_ids)
    model, train_log = run_training(model, train, cfg.train, cfg.augment, args.skip_pretrain, val)

    out.parent.mkdir(parents=True, exist_ok=True)
    log_path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out)
    header = {line.split(" = ")[0]: line.split(" = ", 1)[1] for line in effective.splitlines()}
    header["skip_pretrain"] = args.skip_pretrain
    train_log.write(log_path, header)
    pre = train_log.stage("pretrain")
    trip = train_log.stage("triplet")
    accs = [r.train_acc for r in pre if r.train_acc is not None]
    if accs:
        print(f"pretrain: {len(pre)} steps, final train accuracy {accs[-1]:.4f}")
    if trip:
        print(f"triplet: {len(trip)} steps, loss {trip[0].loss:.4f} -> {trip[-1].loss:.4f}")
    for flag in train_log.flags:
        print(f"warning: {flag}")
    print(f"checkpoint: {out}\nlog: {log_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# embed


def cmd_embed(args) -> int:
    cfg = resolve(args, EMBED_SECTIONS)
    out = Path(args.out)
    _require_output_dir(out)
    model = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data, None)
    res = model.config.input_resolution
    if ds.resolution != res:
        raise DatasetError(f"image resolution {ds.resolution}x{ds.resolution} does not match "
                           f"checkpoint resolution {res}x{res}")
    print(cfg.to_text(EMBED_SECTIONS), end="")
    print(f"tta = {not args.no_tta}")
    images = list(ds.images)
    embs = plain_embed(model, images) if args.no_tta else tta_embed_all(model, images, cfg.augment)
    store = EmbeddingStore.from_embeddings(embs)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_store(store, out)
    print(f"wrote {len(store)} embeddings of dim {store.dim} to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    cfg = resolve(args, EVAL_SECTIONS)
    store_path = Path(args.store)
    stem = store_path.with_suffix("")
    roc = Path(args.roc) if args.roc else Path(f"{stem}.roc.csv")
    scores_path = Path(args.scores) if args.scores else Path(f"{stem}.scores.csv")
    report_path = Path(args.report) if args.report else None
    for p in (roc, scores_path, report_path):
        if p is not None:
            _require_output_dir(p)
    store = read_store(store_path)
    if len(store) < 2:
        raise DatasetError("embedding store needs at least 2 entries")
    scores = all_to_all(store.entries, cfg.metric)
    scores.require_both()
    report = build_report(store.entries, cfg.metric, cfg.far_target)
    text = _echo(cfg.to_text(EVAL_SECTIONS) + f"store = {store_path}") + report.to_text()
    for p in (roc, scores_path, report_path):
        if p is not None:
            p.parent.mkdir(parents=True, exist_ok=True)
    report.write_roc(roc)
    export_scores(scores, scores_path)
    if report_path is not None:
        report_path.write_text(text, encoding="utf-8")
    print(text, end="")
    print(f"roc: {roc}\nscores: {scores_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tripletiris", description="Iris recognition pipeline: synth, train, embed, eval.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="write a synthetic iris-like dataset",
                       description="Generate a synthetic dataset of ring-shaped textures, one directory per class.")
    p.add_argument("--classes", type=int, default=8, help="number of classes (>= 2; default: 8)")
    p.add_argument("--per-class", type=int, default=12, help="images per class (>= 2; default: 12)")
    p.add_argument("--resolution", type=int, default=64, help="image side length (default: 64)")
    p.add_argument("--seed", type=int, default=0, help="generator seed (default: 0)")
    p.add_argument("--outer-radius", type=float, default=0.45,
                   help="textured ring radius as a fraction of the side; smaller values leave a "
                        "wider black border (default: 0.45)")
    p.add_argument("--out", required=True, help="output directory (must be absent or empty)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="pre-train with softmax, then train with batch-hard triplets",
                       description="Train a backbone and write a checkpoint plus a line-oriented train log.")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--log", default=None, help="train log path (default: <out>.log)")
    p.add_argument("--skip-pretrain", action="store_true",
                   help="run only the triplet stage from random initialization")
    add_config_flags(p, TRAIN_SECTIONS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="write an embedding store for a dataset",
                       description="Embed every image with a trained checkpoint.")
    p.add_argument("--checkpoint", required=True, help="checkpoint written by 'train'")
    p.add_argument("--data", required=True, help="dataset directory; images must match the checkpoint resolution")
    p.add_argument("--out", required=True, help="embedding store path to write")
    p.add_argument("--no-tta", action="store_true", help="single-view embeddings of length D instead of 6*D")
    add_config_flags(p, EMBED_SECTIONS)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("eval", help="all-to-all verification metrics for an embedding store",
                       description="Report EER, FRR at a target FAR and Rank-1; write ROC and score CSVs.")
    p.add_argument("--store", required=True, help="embedding store written by 'embed'")
    p.add_argument("--roc", default=None, help="ROC CSV path (default: <store>.roc.csv)")
    p.add_argument("--scores", default=None, help="score CSV path (default: <store>.scores.csv)")
    p.add_argument("--report", default=None, help="also write the report text to this path")
    add_config_flags(p, EVAL_SECTIONS)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"{parser.prog} {args.command}: diverged at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DatasetError, FormatError, ConfigMismatchError, OSError, ValueError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
