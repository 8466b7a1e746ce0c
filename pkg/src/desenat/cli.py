"""Command-line entry point: every pipeline stage reads and writes files under --out-dir."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .adversarial import FILTER_MODES, AdvConfig, generate_adversarial
from .bench import build_metrics_table, emit_report, pruning_experiment, read_metrics_table, \
    write_pruning_csv, write_tables
from .core import (DataError, RngSpec, default_threads, gen_synthetic_dataset, load_dataset,
                   load_pointcloud, save_dataset, save_pointcloud)
from .corrupt import build_corruption_grid, load_corruption_grid
from .distill import train_desenat, train_desenat_sd
from .net import TrainConfig, TrainingDiverged, load_model, save_model, train_standard
from .severity import CORRUPTION_KINDS, SEVERITY_LEVELS
from .shapley import (attribute_dataset, dataset_distribution, histogram, load_attribution,
                      save_attribution, write_distribution_csv, write_histogram_csv)

log = logging.getLogger("desenat")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
ATTR_MANIFEST = "attributions.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _csv_list(text: str) -> list[str]:
    return [t for t in text.split(",") if t]


def _write_config(out_dir: Path, command: str, args: argparse.Namespace) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    cfg["command"] = command
    (out_dir / f"{command}_config.json").write_text(json.dumps(cfg, indent=1, default=str) + "\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen_dataset(args) -> int:
    ds = gen_synthetic_dataset(args.classes, args.per_class, args.points,
                               RngSpec(args.seed, args.stream), args.jitter, args.name)
    out = Path(args.out_dir)
    save_dataset(ds, out)
    _write_config(out, "gen-dataset", args)
    log.info("wrote %d samples to %s", len(ds), out)
    return EXIT_OK


def _load_attributions(attr_dir: Path, n: int):
    manifest = json.loads((attr_dir / ATTR_MANIFEST).read_text())
    entries = sorted(manifest["entries"], key=lambda e: e["sample"])
    if [e["sample"] for e in entries] != list(range(n)):
        raise DataError(f"{attr_dir}: attributions do not cover samples 0..{n - 1}")
    return [load_attribution(attr_dir / e["path"]) for e in entries]


def cmd_train(args) -> int:
    ds = load_dataset(args.train_manifest)
    config = TrainConfig(args.epochs, args.batch_size, args.lr, args.momentum, RngSpec(args.seed),
                         tuple(args.hidden))
    rows: list[dict] = []
    if args.method == "st":
        model = train_standard(ds, config, rows)
    else:
        if not args.baseline:
            raise UsageError(f"--baseline is required for --method {args.method}")
        baseline = load_model(args.baseline)
        adv = AdvConfig((args.r_min, args.r_max), args.c1, args.c2,
                        RngSpec(args.seed, args.adv_stream), args.filter_mode)
        attrs = _load_attributions(Path(args.attr_dir), len(ds)) if args.attr_dir else None
        common = dict(attributions=attrs, num_permutations=args.permutations, threads=args.threads,
                      refresh_attributions=args.refresh_attr, log_rows=rows)
        if args.method == "desenat":
            model = train_desenat(ds, baseline, config, adv, **common)
        else:
            model = train_desenat_sd(ds, baseline, config, adv, args.alpha,
                                     detach_clean=args.detach_clean, **common)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.ckpt")
    fields = ["epoch", "split", "loss", "l_kd", "l_ce_clean", "l_ce_adv", "accuracy"]
    with open(out / "train_log.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fields, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({**{k: "" for k in fields}, **r, "split": "train"})
    _write_config(out, "train", args)
    return EXIT_OK


def cmd_shapley(args) -> int:
    model = load_model(args.model)
    ds = load_dataset(args.input_manifest)
    attrs = attribute_dataset(model, ds, args.permutations, RngSpec(args.seed, args.stream),
                              args.threads)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, a in enumerate(attrs):
        name = f"attr_{i:04d}.shap"
        save_attribution(a, out / name)
        entries.append({"sample": i, "path": name})
        if args.bins > 0:
            write_histogram_csv(histogram(a, args.bins), out / f"hist_{i:04d}.csv")
    (out / ATTR_MANIFEST).write_text(json.dumps(
        {"model": str(args.model), "dataset": str(args.input_manifest), "entries": entries},
        indent=1) + "\n")
    if len({len(a) for a in attrs}) == 1:
        write_distribution_csv(dataset_distribution(attrs), out / "distribution.csv")
    _write_config(out, "shapley", args)
    return EXIT_OK


def cmd_attack(args) -> int:
    pc = load_pointcloud(args.input)
    attr = load_attribution(args.attr)
    adv = AdvConfig((args.r, args.r), args.c1, args.c2, RngSpec(args.seed, args.stream),
                    args.filter_mode)
    out = generate_adversarial(pc, attr, adv, args.r)
    path = Path(args.output)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_pointcloud(out, path)
    _write_config(path.parent, "attack", args)
    return EXIT_OK


def cmd_corrupt(args) -> int:
    ds = load_dataset(args.input_manifest)
    sev = [int(s) for s in _csv_list(args.severities)]
    build_corruption_grid(ds, _csv_list(args.kinds), RngSpec(args.seed, args.stream), args.out_dir,
                          sev, args.threads)
    _write_config(Path(args.out_dir), "corrupt", args)
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(args.model)
    baseline = load_model(args.baseline)
    grid = load_corruption_grid(args.grid)
    table = build_metrics_table(model, baseline, grid, args.threads)
    out = Path(args.out_dir)
    write_tables(table, out)
    _write_config(out, "eval", args)
    return EXIT_OK


def cmd_report(args) -> int:
    table = read_metrics_table(args.tables)
    emit_report(table, args.out_dir)
    _write_config(Path(args.out_dir), "report", args)
    return EXIT_OK


def cmd_prune(args) -> int:
    model = load_model(args.model)
    ds = load_dataset(args.input_manifest)
    ratios = [float(r) for r in _csv_list(args.ratios)]
    rows = pruning_experiment(model, ds, ratios, RngSpec(args.seed, args.stream),
                              args.permutations, args.threads)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_pruning_csv(rows, out / "pruning.csv")
    _write_config(out, "prune", args)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    """gen -> train st -> shapley -> train desenat-sd -> corrupt -> eval -> report."""
    out = Path(args.out_dir)
    common = ["--seed", str(args.seed), "--threads", str(args.threads)]
    steps = [
        ["gen-dataset", "--classes", str(args.classes), "--per-class", str(args.per_class),
         "--points", str(args.points), "--stream", "0", "--name", "train",
         "--out-dir", str(out / "data/train")],
        ["gen-dataset", "--classes", str(args.classes), "--per-class", str(args.test_per_class),
         "--points", str(args.points), "--stream", "1", "--name", "test",
         "--out-dir", str(out / "data/test")],
        ["train", "--method", "st", "--train-manifest", str(out / "data/train/manifest.json"),
         "--epochs", str(args.epochs), "--out-dir", str(out / "st")],
        ["shapley", "--model", str(out / "st/model.ckpt"),
         "--input-manifest", str(out / "data/train/manifest.json"),
         "--permutations", str(args.permutations), "--stream", "2", "--out-dir", str(out / "attr")],
        ["train", "--method", args.method, "--train-manifest", str(out / "data/train/manifest.json"),
         "--baseline", str(out / "st/model.ckpt"), "--attr-dir", str(out / "attr"),
         "--alpha", str(args.alpha), "--epochs", str(args.epochs), "--out-dir", str(out / "robust")],
        ["corrupt", "--input-manifest", str(out / "data/test/manifest.json"), "--stream", "4",
         "--out-dir", str(out / "grid")],
        ["eval", "--model", str(out / "robust/model.ckpt"), "--baseline", str(out / "st/model.ckpt"),
         "--grid", str(out / "grid"), "--out-dir", str(out / "tables")],
        ["report", "--tables", str(out / "tables"), "--out-dir", str(out / "report")],
    ]
    for step in steps:
        log.info("pipeline: %s", step[0])
        code = _dispatch(step + common)
        if code != EXIT_OK:
            return code
    _write_config(out, "pipeline", args)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    shared = _Parser(add_help=False)
    shared.add_argument("--seed", type=int, default=0, help="global seed (default 0)")
    shared.add_argument("--stream", type=int, default=0, help="stream id under the seed")
    shared.add_argument("--threads", type=int, default=default_threads(),
                        help="worker threads; results do not depend on this")

    p = _Parser(prog="desenat", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-dataset", parents=[shared], help="write a synthetic shape dataset")
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--per-class", type=int, default=50)
    g.add_argument("--points", type=int, default=64)
    g.add_argument("--jitter", type=float, default=0.02)
    g.add_argument("--name", default="synthetic")
    g.add_argument("--out-dir", required=True)
    g.set_defaults(func=cmd_gen_dataset)

    t = sub.add_parser("train", parents=[shared], help="train st / desenat / desenat-sd")
    t.add_argument("--method", choices=("st", "desenat", "desenat-sd"), default="st")
    t.add_argument("--train-manifest", required=True)
    t.add_argument("--baseline", help="ST checkpoint used for attributions")
    t.add_argument("--attr-dir", help="precomputed attributions (output of `shapley`)")
    t.add_argument("--alpha", type=float, default=1.0)
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--lr", type=float, default=0.02)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--hidden", type=int, nargs=3, default=[32, 64, 32])
    t.add_argument("--r-min", type=float, default=0.5)
    t.add_argument("--r-max", type=float, default=1.0)
    t.add_argument("--c1", type=float, default=0.25)
    t.add_argument("--c2", type=float, default=0.05)
    t.add_argument("--adv-stream", type=int, default=3)
    t.add_argument("--filter-mode", choices=FILTER_MODES, default="prose")
    t.add_argument("--permutations", type=int, default=64,
                   help="permutations per sample when attributions are computed here")
    t.add_argument("--detach-clean", action="store_true")
    t.add_argument("--refresh-attr", action="store_true")
    t.add_argument("--out-dir", required=True)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("shapley", parents=[shared], help="per-point attributions for a dataset")
    s.add_argument("--model", required=True)
    s.add_argument("--input-manifest", required=True)
    s.add_argument("--permutations", type=int, default=64, help="0 = exact enumeration")
    s.add_argument("--bins", type=int, default=0, help="also write per-sample histograms")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_shapley)

    a = sub.add_parser("attack", parents=[shared], help="generate one adversarial sample")
    a.add_argument("--input", required=True)
    a.add_argument("--attr", required=True)
    a.add_argument("--r", type=float, default=0.75)
    a.add_argument("--c1", type=float, default=0.25)
    a.add_argument("--c2", type=float, default=0.05)
    a.add_argument("--filter-mode", choices=FILTER_MODES, default="prose")
    a.add_argument("--output", required=True)
    a.set_defaults(func=cmd_attack)

    c = sub.add_parser("corrupt", parents=[shared], help="build a corruption grid")
    c.add_argument("--input-manifest", required=True)
    c.add_argument("--kinds", default=",".join(CORRUPTION_KINDS))
    c.add_argument("--severities", default=",".join(map(str, SEVERITY_LEVELS)))
    c.add_argument("--out-dir", required=True)
    c.set_defaults(func=cmd_corrupt)

    e = sub.add_parser("eval", parents=[shared], help="OA grids for a model and the CE baseline")
    e.add_argument("--model", required=True)
    e.add_argument("--baseline", required=True)
    e.add_argument("--grid", required=True)
    e.add_argument("--out-dir", required=True)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", parents=[shared], help="CE/mCE/mOA tables and charts")
    r.add_argument("--tables", required=True)
    r.add_argument("--out-dir", required=True)
    r.set_defaults(func=cmd_report)

    pr = sub.add_parser("prune", parents=[shared], help="contribution vs. random pruning")
    pr.add_argument("--model", required=True)
    pr.add_argument("--input-manifest", required=True)
    pr.add_argument("--ratios", default="0.1,0.2,0.3,0.4,0.5")
    pr.add_argument("--permutations", type=int, default=64)
    pr.add_argument("--out-dir", required=True)
    pr.set_defaults(func=cmd_prune)

    pl = sub.add_parser("pipeline", parents=[shared], help="run every stage end to end")
    pl.add_argument("--classes", type=int, default=4)
    pl.add_argument("--per-class", type=int, default=50)
    pl.add_argument("--test-per-class", type=int, default=25)
    pl.add_argument("--points", type=int, default=64)
    pl.add_argument("--epochs", type=int, default=100)
    pl.add_argument("--permutations", type=int, default=64)
    pl.add_argument("--method", choices=("desenat", "desenat-sd"), default="desenat-sd")
    pl.add_argument("--alpha", type=float, default=1.0)
    pl.add_argument("--out-dir", required=True)
    pl.set_defaults(func=cmd_pipeline)
    return p


def _fail(code: int, kind: str, message: str) -> int:
    msg = " ".join(str(message).split())
    print(f"desenat: error code={code} type={kind} message={json.dumps(msg)}", file=sys.stderr)
    return code


def _dispatch(argv: Sequence[str]) -> int:
    try:
        args = build_parser().parse_args(list(argv))
        return args.func(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "UsageError", exc)
    except (TrainingDiverged, ZeroDivisionError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, type(exc).__name__, exc)
    except (DataError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        return _fail(EXIT_DATA, type(exc).__name__, exc)


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = os.environ.get("DESENAT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    return _dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
