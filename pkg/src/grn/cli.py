"""``grn`` command-line entry point.

Subcommands: gen, train, report, ablate, sweep. Exit codes: 0 success,
1 I/O or other failure, 2 config error, 3 data-format error, 4 numerical
abort, 5 leakage-guard violation.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .config import load_config
from .errors import ConfigError, GrnError
from .model import VARIANTS
from .protocol import LeakageMonitor, write_fold_manifest
from .report import render_report
from .signal import DEFAULT_BANDS, gen_synthetic_dataset, read_dataset, write_dataset
from .train import (
    LOSO,
    SD,
    PreparedData,
    make_folds,
    run_ablation,
    run_protocol,
    run_sensitivity,
    select_lambda,
    write_confusion_csv,
    write_curves_csv,
    write_sweep_csv,
)

SUMMARY_HEADER = ["protocol", "variant", "n_folds", "mean_acc", "std_acc", "min_acc", "max_acc", "fold_accs", "std_over"]


def git_blob_sha1(path) -> str:
    """Content hash as ``git hash-object`` computes it."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def default_out() -> Path:
    return Path(os.environ.get("GRN_RESULTS_DIR", "results"))


def _resolve(args):
    cfg = load_config(args.config)
    if getattr(args, "jobs", None) is not None:
        if args.jobs < 1:
            raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
        cfg = replace(cfg, run=replace(cfg.run, jobs=args.jobs))
    return cfg


def check_compatible(cfg, dataset) -> None:
    """Config and dataset must agree on C, B and L before any training."""
    problems = []
    if cfg.model.n_channels != dataset.n_channels:
        problems.append(f"model.n_channels={cfg.model.n_channels} but dataset has C={dataset.n_channels}")
    if cfg.model.n_bands != len(DEFAULT_BANDS):
        problems.append(f"model.n_bands={cfg.model.n_bands} but {len(DEFAULT_BANDS)} bands are defined")
    if cfg.model.n_classes != dataset.n_classes:
        problems.append(f"model.n_classes={cfg.model.n_classes} but dataset has {dataset.n_classes} classes")
    if problems:
        raise ConfigError("config/dataset mismatch: " + "; ".join(problems))
    for band in DEFAULT_BANDS:
        band.validate(dataset.fs)
    cfg.welch.validate(dataset.n_samples)


class Manifest:
    def __init__(self, command, argv, cfg, out_dir):
        self.out_dir = Path(out_dir)
        self.t0 = time.perf_counter()
        self.data = {
            "command": command,
            "argv": list(argv),
            "version": __version__,
            "kernel_backend": kernels.BACKEND,
            "config": cfg.to_dict(),
            "artifacts": [],
            "timings": {},
        }

    def add(self, path) -> Path:
        path = Path(path)
        self.data["artifacts"].append(str(path.relative_to(self.out_dir)))
        return path

    def time(self, key, start):
        self.data["timings"][key] = round(time.perf_counter() - start, 3)

    def write(self) -> Path:
        self.time("total_s", self.t0)
        missing = [a for a in self.data["artifacts"] if not (self.out_dir / a).is_file()]
        if missing:
            raise GrnError(f"artifacts missing at exit: {missing}")
        path = self.out_dir / "manifest.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, path)
        return path


def _load_dataset(path, manifest):
    ds = read_dataset(path)
    manifest.data["dataset"] = {
        "path": str(Path(path).resolve()),
        "sha1": git_blob_sha1(path),
        "n_trials": len(ds),
        "subjects": ds.subjects,
        "n_channels": ds.n_channels,
        "n_samples": ds.n_samples,
        "fs": ds.fs,
    }
    return ds


def write_summary_csv(path, protocol, variant, accs) -> None:
    accs = np.asarray(accs, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_HEADER)
        w.writerow([
            protocol, variant, len(accs), repr(float(accs.mean())), repr(float(accs.std())),
            repr(float(accs.min())), repr(float(accs.max())), ";".join(repr(float(a)) for a in accs), "folds",
        ])


# -- commands -------------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = _resolve(args)
    synth = cfg.synth if args.seed is None else replace(cfg.synth, seed=args.seed)
    ds = gen_synthetic_dataset(synth)
    out = Path(args.out) if args.out else default_out() / "dataset.grn"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(out, ds)
    print(
        f"wrote {out}: subjects={len(ds.subjects)} trials={len(ds)} classes={ds.n_classes} "
        f"C={ds.n_channels} T={ds.n_samples} fs={ds.fs:g}"
    )
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args)
    train_cfg = cfg.train
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    if args.variant is not None:
        train_cfg = replace(train_cfg, variant=args.variant)
    cfg = replace(cfg, train=train_cfg)
    out = Path(args.out) if args.out else default_out()
    man = Manifest("train", sys.argv[1:] if args.argv is None else args.argv, cfg, out)
    man.data["protocol"] = args.protocol

    t = time.perf_counter()
    ds = _load_dataset(args.dataset, man)
    check_compatible(cfg, ds)
    data = PreparedData(ds, DEFAULT_BANDS, cfg.welch)
    folds = make_folds(ds, args.protocol, train_cfg)
    man.time("prepare_s", t)

    monitor = LeakageMonitor()
    t = time.perf_counter()
    results = run_protocol(data, args.protocol, cfg.model, train_cfg, monitor=monitor, jobs=cfg.run.jobs)
    man.time("train_s", t)

    out.mkdir(parents=True, exist_ok=True)
    for r in results:
        write_curves_csv(man.add(out / f"fold_{r.fold_id}_curves.csv"), r.history)
        write_confusion_csv(man.add(out / f"fold_{r.fold_id}_confusion.csv"), r.confusion)
    write_fold_manifest(man.add(out / "folds.csv"), folds, ds)
    write_summary_csv(man.add(out / "summary.csv"), args.protocol, train_cfg.variant, [r.test_accuracy for r in results])
    man.data["folds"] = [
        {"fold_id": r.fold_id, "test_subjects": list(r.test_subjects), "test_accuracy": r.test_accuracy,
         "best_epoch": r.best_epoch, "epochs_run": len(r.history)}
        for r in results
    ]
    man.data["leakage"] = {"checks": monitor.checks, "violations": monitor.violations}
    man.write()
    accs = np.array([r.test_accuracy for r in results])
    print(f"{args.protocol} {train_cfg.variant}: {len(results)} folds, accuracy {accs.mean():.4f} +/- {accs.std():.4f}")
    return 0


def _seeds(cfg, args):
    base = list(cfg.run.seeds)
    if args.seed is None:
        return base
    return [args.seed + i for i in range(len(base))]


def cmd_ablate(args) -> int:
    cfg = _resolve(args)
    out = Path(args.out) if args.out else default_out()
    man = Manifest("ablate", sys.argv[1:] if args.argv is None else args.argv, cfg, out)
    ds = _load_dataset(args.dataset, man)
    check_compatible(cfg, ds)
    data = PreparedData(ds, DEFAULT_BANDS, cfg.welch)
    seeds = _seeds(cfg, args)
    grn_cfg = cfg.model
    if args.tune_lambda:
        t = time.perf_counter()
        best, scores = select_lambda(data, grn_cfg, replace(cfg.train, seed=seeds[0]), jobs=cfg.run.jobs)
        man.time("lambda_search_s", t)
        man.data["lambda_search"] = {"scores": {repr(k): v for k, v in scores.items()}, "selected": best}
        grn_cfg = replace(grn_cfg, lambda_proto=best)
        man.data["config"]["model.lambda_proto"] = best
    man.data["seeds"] = seeds

    monitor = LeakageMonitor()
    t = time.perf_counter()
    rows = run_ablation(data, grn_cfg, cfg.train, seeds, monitor=monitor, jobs=cfg.run.jobs)
    man.time("ablation_s", t)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(man.add(out / "ablation.csv"), rows, "variant")
    man.data["leakage"] = {"checks": monitor.checks, "violations": monitor.violations}
    man.write()
    for r in rows:
        print(f"{r.key:18s} {r.mean:.4f} +/- {r.std:.4f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve(args)
    out = Path(args.out) if args.out else default_out()
    man = Manifest("sweep", sys.argv[1:] if args.argv is None else args.argv, cfg, out)
    ds = _load_dataset(args.dataset, man)
    check_compatible(cfg, ds)
    data = PreparedData(ds, DEFAULT_BANDS, cfg.welch)
    seeds = _seeds(cfg, args)
    man.data["seeds"] = seeds
    monitor = LeakageMonitor()
    t = time.perf_counter()
    kr, m = run_sensitivity(data, cfg.model, cfg.train, seeds, monitor=monitor, jobs=cfg.run.jobs)
    man.time("sweep_s", t)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(man.add(out / "sensitivity_kr.csv"), kr, "K_r")
    write_sweep_csv(man.add(out / "sensitivity_m.csv"), m, "M")
    man.data["leakage"] = {"checks": monitor.checks, "violations": monitor.violations}
    man.write()
    for r in kr + m:
        print(f"{r.label:8s} {r.mean:.4f} +/- {r.std:.4f}")
    return 0


def cmd_report(args) -> int:
    results = Path(args.results) if args.results else default_out()
    out = Path(args.out) if args.out else results
    written = render_report(results, out)
    print(f"wrote {len(written)} figures to {out}")
    return 0


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grn", description="Group resonance network on synthetic EEG.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, dataset=True):
        sp.add_argument("--config", help="key = value config file (defaults apply to absent keys)")
        if dataset:
            sp.add_argument("--dataset", required=True, help="GRN1 dataset file")
        sp.add_argument("--out", help="output path (default: $GRN_RESULTS_DIR or ./results)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--jobs", type=int, help="parallel fold workers")

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    common(g, dataset=False)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train and evaluate one variant under SD or LOSO")
    common(t)
    t.add_argument("--protocol", choices=[SD, LOSO], default=LOSO)
    t.add_argument("--variant", choices=list(VARIANTS))
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", help="LOSO ablation over the five variants")
    common(a)
    a.add_argument("--tune-lambda", action="store_true", help="pick lambda_proto on validation folds first")
    a.set_defaults(func=cmd_ablate)

    s = sub.add_parser("sweep", help="LOSO sensitivity to K_r and M")
    common(s)
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="SVG figures from result CSVs")
    r.add_argument("results", nargs="?", help="results directory (default: $GRN_RESULTS_DIR or ./results)")
    r.add_argument("--out", help="figure directory (default: the results directory)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except GrnError as exc:
        print(f"grn {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"grn {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
