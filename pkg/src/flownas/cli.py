"""``flownas`` command line: preprocess | estimate | search | train | eval | quantize.

Exit codes: 0 success, 1 unexpected failure, 2 configuration or usage
error, 3 I/O error, 4 malformed input file, 5 search budget exhausted,
6 training diverged, 130 interrupted.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
from collections import Counter
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .arch import (BN_PARAMS_PER_CHANNEL, DEFAULT_THRESHOLDS, TABLE_IV, Architecture, HwThresholds,
                   check_constraints, estimate, infer_shapes, layer_table, parse_arch,
                   serialize_arch)
from .config import RunConfig, load_run_config
from .dataset import Dataset, holdout_split, read_dataset, write_dataset
from .engine.checkpoint import read_weights, write_weights
from .engine.network import check_weights
from .engine.train import evaluate, multi_start_train
from .errors import ConfigError, FlownasError, InputIOError, ShapeMismatch
from .labels import load_label_map
from .pcap import iter_packets
from .quant import calibrate, compare
from .search import (SearchConfig, TrainingEvaluator, load_checkpoint, run_search,
                     write_curve)
from .sessions import AnonymizationMap, PreprocStrategy, session_vectors
from .space import initial_architecture
from .toy import toy_dataset

log = logging.getLogger("flownas")

EXIT_INTERRUPTED = 130


# -- helpers ---------------------------------------------------------------

def _write_manifest(path: Path, command: str, args: argparse.Namespace, cfg=None, **extra):
    doc = {
        "command": command,
        "args": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
        "config": cfg.snapshot() if cfg is not None else None,
        "versions": {
            "flownas": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    doc.update(extra)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def _read_arch(path, strict=True) -> Architecture:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputIOError(f"cannot read architecture {path}: {exc}") from None
    return parse_arch(text, strict=strict)


def _run_config(args) -> RunConfig:
    cfg = load_run_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    cfg.validate()
    return cfg


def _load_data(args, cfg: RunConfig) -> Dataset:
    toy = getattr(args, "toy", None) or cfg.data.toy
    path = getattr(args, "dataset", None) or cfg.data.dataset
    if path:
        try:
            return read_dataset(path)
        except OSError as exc:
            raise InputIOError(f"cannot read dataset {path}: {exc}") from None
    if toy:
        length = getattr(args, "length", None) or cfg.data.length
        return toy_dataset(toy, length, cfg.data.toy_classes, seed=cfg.seed)
    raise ConfigError("no data: pass --dataset, --toy N, or set [data] in the config")


def _anon_key(seed: int) -> bytes:
    return hashlib.sha256(b"flownas-anon:" + str(seed).encode()).digest()


def _thresholds(args, base: HwThresholds) -> HwThresholds:
    return HwThresholds(
        params=args.max_params if args.max_params is not None else base.params,
        max_tensor=args.max_tensor if args.max_tensor is not None else base.max_tensor,
        flops=args.max_flops if args.max_flops is not None else base.flops,
    )


def _model_arch_path(model: str, arch: str | None) -> Path:
    return Path(arch) if arch else Path(model).with_suffix(".arch")


def _load_model(args):
    arch = _read_arch(_model_arch_path(args.model, args.arch), strict=False)
    try:
        weights = read_weights(args.model)
    except OSError as exc:
        raise InputIOError(f"cannot read model {args.model}: {exc}") from None
    check_weights(arch, weights)
    return arch, weights


def _check_dims(arch: Architecture, ds: Dataset, what: str):
    if ds.input_len != arch.input_len:
        raise ShapeMismatch(
            f"dimension mismatch: {what} has input_len {ds.input_len}, "
            f"model expects {arch.input_len}"
        )
    if ds.n_classes != arch.n_classes:
        raise ShapeMismatch(
            f"dimension mismatch: {what} has {ds.n_classes} classes, "
            f"model has {arch.n_classes}"
        )


# -- subcommands -------------------------------------------------------------

def cmd_preprocess(args) -> int:
    cfg = _run_config(args)
    length = args.length or cfg.data.length
    out = Path(args.out)
    if args.toy:
        ds = toy_dataset(args.toy, length, args.toy_classes or cfg.data.toy_classes, seed=cfg.seed)
        classes = [f"class_{c}" for c in range(ds.n_classes)]
    else:
        strategy_id = args.strategy if args.strategy is not None else cfg.data.strategy
        strategy = PreprocStrategy.from_id(strategy_id)
        pcap_dir = args.pcap_dir or cfg.data.pcap_dir
        labels_path = args.labels or cfg.data.labels
        if not pcap_dir or not labels_path:
            raise ConfigError("preprocess needs --pcap-dir and --labels (or --toy N)")
        if not Path(pcap_dir).is_dir():
            raise InputIOError(f"pcap directory does not exist: {pcap_dir}")
        try:
            labels = load_label_map(labels_path)
        except OSError as exc:
            raise InputIOError(f"cannot read label map {labels_path}: {exc}") from None
        captures = sorted(p for p in Path(pcap_dir).iterdir()
                          if p.suffix in (".pcap", ".cap") and p.is_file())
        if not captures:
            raise InputIOError(f"no captures found in {pcap_dir}")
        anon = AnonymizationMap(_anon_key(cfg.seed))
        vectors = []
        for cap in captures:
            label = labels.label_of(cap.name)
            if label is None:
                log.warning("%s matches no label rule; skipped", cap.name)
                continue
            with open(cap, "rb") as fh:
                vectors += session_vectors(iter_packets(fh), strategy, anon, length, label)
        classes = labels.classes
        ds = Dataset.from_vectors(vectors, len(classes))
        if len(ds) == 0:
            ds = Dataset(np.zeros((0, length), np.uint8), np.zeros(0, np.int64), len(classes))
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(ds, out)
    _write_manifest(out.with_name(out.name + ".manifest.json"), "preprocess", args, cfg)
    counts = Counter(ds.y.tolist())
    print(f"wrote {len(ds)} sessions of {ds.input_len} bytes to {out}")
    for c, name in enumerate(classes):
        print(f"  {c:3d} {name:<24} {counts.get(c, 0)}")
    return 0


def cmd_estimate(args) -> int:
    arch = _read_arch(args.arch, strict=not args.no_strict)
    if args.length:
        arch = arch.with_input_len(args.length)
    th = _thresholds(args, DEFAULT_THRESHOLDS)
    table = layer_table(arch, args.bn)
    cost = estimate(arch, args.bn)
    verdict = check_constraints(arch, th, args.bn)

    print(f"{'layer':<16}{'kind':<10}{'input':>10}{'output':>10}{'params':>10}{'flops':>12}")
    for r in table:
        print(f"{r.name:<16}{r.kind:<10}{str(r.input):>10}{str(r.output):>10}"
              f"{r.params:>10}{r.flops:>12}")
    print()
    rows = [("params", cost.params, th.params), ("max_tensor", cost.max_tensor, th.max_tensor),
            ("flops", cost.flops, th.flops)]
    for name, value, bound in rows:
        status = "FAIL" if name in verdict.violations else "PASS"
        print(f"{name:<12}{value:>12} < {bound:<12.0f} {status}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value", "threshold", "status"])
            for name, value, bound in rows:
                w.writerow([name, value, f"{bound:.0f}",
                            "FAIL" if name in verdict.violations else "PASS"])
    if args.layers_csv:
        with open(args.layers_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["layer", "kind", "input", "output", "params", "flops"])
            for r in table:
                w.writerow([r.name, r.kind, str(r.input), str(r.output), r.params, r.flops])
    return 0


def cmd_search(args) -> int:
    cfg = _run_config(args)
    ds = _load_data(args, cfg)
    train_set, val_set = holdout_split(ds, cfg.train.val_fraction, cfg.seed)
    train_cfg = cfg.train
    if args.epochs:
        train_cfg = replace(train_cfg, max_epochs=args.epochs)
    scfg = SearchConfig(
        n_generations=args.generations or cfg.generations,
        children_per_generation=args.children or cfg.children,
        thresholds=cfg.thresholds,
        space=cfg.space,
        train=train_cfg,
        seed=cfg.seed,
        max_attempts=cfg.max_attempts,
        jobs=args.jobs,
    )
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.json"
    if cfg.initial_arch:
        initial = Architecture(ds.input_len, ds.n_classes, _read_arch(cfg.initial_arch).blocks)
    else:
        initial = initial_architecture(ds.input_len, ds.n_classes)
    state = load_checkpoint(ckpt) if args.resume and ckpt.exists() else None
    if state is None:
        (out / "search.log").write_text("")
    _write_manifest(out / "manifest.json", "search", args, cfg)
    evaluator = TrainingEvaluator(train_set, val_set, train_cfg, cfg.seed)
    state = run_search(scfg, evaluator, initial=initial, state=state,
                       checkpoint_path=ckpt, log_path=out / "search.log")
    write_curve(state, out / "curve.csv")
    (out / "best.arch").write_text(serialize_arch(state.best))
    print(f"best validation accuracy {state.best_val_acc:.4f} after "
          f"{len(state.records)} generations")
    print(serialize_arch(state.best), end="")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    ds = _load_data(args, cfg)
    base = _read_arch(args.arch, strict=False) if args.arch else TABLE_IV
    arch = Architecture(ds.input_len, ds.n_classes, base.blocks, base.input_channels)
    infer_shapes(arch)
    train_cfg = cfg.train
    if args.epochs:
        train_cfg = replace(train_cfg, max_epochs=args.epochs)
    if args.multi_start:
        train_cfg = replace(train_cfg, multi_start=args.multi_start)
    train_cfg = replace(train_cfg, seed=cfg.seed)
    res = multi_start_train(arch, ds, None, train_cfg)

    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_weights(res.weights, out / "model.wgts")
    (out / "model.arch").write_text(serialize_arch(arch))
    with open(out / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc", "lr"])
        for h in res.history:
            w.writerow([h.epoch, repr(h.train_loss), repr(h.train_acc), repr(h.val_loss),
                        repr(h.val_acc), repr(h.lr)])
    _write_manifest(out / "manifest.json", "train", args, cfg, run_index=res.run_index)
    print(f"run {res.run_index}: best epoch {res.best_epoch}, "
          f"val_loss {res.val_loss:.4f}, val_acc {res.val_acc:.4f}")
    return 0


def cmd_eval(args) -> int:
    arch, weights = _load_model(args)
    try:
        ds = read_dataset(args.dataset)
    except OSError as exc:
        raise InputIOError(f"cannot read dataset {args.dataset}: {exc}") from None
    _check_dims(arch, ds, args.dataset)
    m = evaluate(arch, weights, ds)
    print(f"accuracy {m.accuracy:.4f}  macro_f1 {m.macro_f1:.4f}  samples {len(ds)}")
    print(f"{'class':>5} {'precision':>10} {'recall':>10} {'f1':>10}")
    for c in range(m.n_classes):
        flag = "  (absent)" if c in m.absent_classes else ""
        print(f"{c:>5} {m.precision[c]:>10.4f} {m.recall[c]:>10.4f} {m.f1[c]:>10.4f}{flag}")
    if args.report:
        with open(args.report, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class", "precision", "recall", "f1"])
            for c in range(m.n_classes):
                w.writerow([c, repr(m.precision[c]), repr(m.recall[c]), repr(m.f1[c])])
            w.writerow(["accuracy", repr(m.accuracy), "", ""])
            w.writerow(["macro_f1", repr(m.macro_f1), "", ""])
    return 0


def cmd_quantize(args) -> int:
    arch, weights = _load_model(args)
    try:
        calib_ds = read_dataset(args.calib)
        eval_ds = read_dataset(args.dataset) if args.dataset else calib_ds
    except OSError as exc:
        raise InputIOError(f"cannot read dataset: {exc}") from None
    _check_dims(arch, calib_ds, args.calib)
    _check_dims(arch, eval_ds, args.dataset or args.calib)
    dtype = weights["dense.w"].dtype
    x = calib_ds.scaled(dtype)[: args.calib_samples]
    batches = [x[s : s + 128] for s in range(0, len(x), 128)]
    calib = calibrate(arch, weights, batches, bits=args.bits, per_channel=args.per_channel)
    cmp = compare(arch, weights, calib, eval_ds)
    with open(args.report, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scope", "acc_real", f"acc_int{args.bits}", "delta"])
        for row in cmp.rows():
            w.writerow([row[0]] + [repr(v) for v in row[1:]])
    _write_manifest(Path(args.report + ".manifest.json"), "quantize", args)
    print(f"real {cmp.acc_real:.4f}  int{args.bits} {cmp.acc_quant:.4f}  delta {cmp.delta:+.4f}")
    return 0


# -- parser --------------------------------------------------------------------

def _add_threshold_flags(p):
    p.add_argument("--max-params", type=float, help="parameter-count bound (default 120000)")
    p.add_argument("--max-tensor", type=float, help="peak tensor bound in elements (default 22000)")
    p.add_argument("--max-flops", type=float, help="FLOPs bound (default 11000000)")


def _add_data_flags(p):
    p.add_argument("--config", help="run config file (TOML)")
    p.add_argument("--dataset", help="SESS dataset file")
    p.add_argument("--toy", type=int, metavar="N", help="use N synthetic toy sessions instead")
    p.add_argument("--length", type=int, help="toy session length in bytes")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--epochs", type=int, help="maximum epochs per training run")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flownas",
        description="Hardware-constrained 1D-CNN search for session-level traffic classification.",
        epilog="Exit codes: 0 ok, 1 unexpected, 2 config/usage, 3 I/O, 4 bad input file, "
               "5 search budget exhausted, 6 training diverged, 130 interrupted.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    parser.add_argument("--version", action="version", version=f"flownas {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("preprocess", help="turn pcap captures into a SESS dataset")
    p.add_argument("--config", help="run config file (TOML)")
    p.add_argument("--pcap-dir", help="directory of .pcap files")
    p.add_argument("--labels", help="label map: '<glob> <class>' per line")
    p.add_argument("--strategy", type=int, help="header strategy 1-24 (default 2)")
    p.add_argument("--length", type=int, help="session length in bytes (default 784)")
    p.add_argument("--out", required=True, help="output .sess file")
    p.add_argument("--toy", type=int, metavar="N", help="write N synthetic sessions instead")
    p.add_argument("--toy-classes", type=int, help="number of toy classes (default 4)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("estimate", help="analytic parameter/FLOPs/peak-tensor report")
    p.add_argument("--arch", required=True, help="architecture file")
    p.add_argument("--length", type=int, help="override the input length")
    _add_threshold_flags(p)
    p.add_argument("--bn", choices=sorted(BN_PARAMS_PER_CHANNEL), default="full",
                   help="batch-norm parameter accounting (default full)")
    p.add_argument("--no-strict", action="store_true",
                   help="accept blocks outside the search-space ranges")
    p.add_argument("--csv", help="write constraint results as CSV")
    p.add_argument("--layers-csv", help="write the per-layer table as CSV")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("search", help="run the evolutionary architecture search")
    _add_data_flags(p)
    p.add_argument("--generations", type=int, help="number of generations")
    p.add_argument("--children", type=int, help="admissible children per generation")
    p.add_argument("--jobs", type=int, default=1, help="parallel child trainings (default 1)")
    p.add_argument("--resume", action="store_true", help="continue from OUT/checkpoint.json")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("train", help="train one architecture")
    _add_data_flags(p)
    p.add_argument("--arch", help="architecture file (default: reference 3-block model)")
    p.add_argument("--multi-start", type=int, help="number of seeded restarts")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy, F1 and per-class report")
    p.add_argument("--model", required=True, help="WGTS weight file")
    p.add_argument("--arch", help="architecture file (default: model path with .arch)")
    p.add_argument("--dataset", required=True, help="SESS dataset file")
    p.add_argument("--report", help="write the per-class report as CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("quantize", help="simulated post-training quantization report")
    p.add_argument("--model", required=True, help="WGTS weight file")
    p.add_argument("--arch", help="architecture file (default: model path with .arch)")
    p.add_argument("--calib", required=True, help="SESS calibration dataset")
    p.add_argument("--dataset", help="SESS evaluation dataset (default: the calibration set)")
    p.add_argument("--report", required=True, help="output CSV")
    p.add_argument("--bits", type=int, default=8, help="quantization width (default 8)")
    p.add_argument("--per-channel", action="store_true", help="per-channel weight scales")
    p.add_argument("--calib-samples", type=int, default=1024,
                   help="calibration samples to use (default 1024)")
    p.set_defaults(func=cmd_quantize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except FlownasError as exc:
        print(f"flownas {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"flownas {args.command}: {exc}", file=sys.stderr)
        return InputIOError.exit_code
    except KeyboardInterrupt:
        print(f"flownas {args.command}: interrupted", file=sys.stderr)
        return EXIT_INTERRUPTED


if __name__ == "__main__":
    sys.exit(main())
