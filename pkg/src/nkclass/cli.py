"""Command-line entry point.

Subcommands: ingest, stats, augment, train, evaluate, sweep-precision,
classify, run-paper. Exit codes: 0 success, 2 usage error, 3 data error,
4 pipeline error. Every subcommand is reproducible: same flags, inputs and
seed give byte-identical outputs.

Environment: NKCLASS_SEED overrides the default seed (flags still win);
NKCLASS_THREADS is accepted and reserved (training is single-threaded and
deterministic regardless).
"""

from __future__ import annotations

import argparse
import csv
import gzip
import os
import sys
from pathlib import Path

import numpy as np

from . import augment as aug
from . import evaluate as ev
from . import forest as rf
from .errors import DataError, ParameterError, PipelineError
from .ingest import (CleaningPolicy, clean, dataset_stats, load_dataset,
                     parse_page_tree, write_compiled_csv)
from .preprocess import FeatureVector, SplitSpec, split, truncate_precision, window_features
from .rng import derive
from .spectral import ALL_BINS

DEFAULT_SEED = 42


def _env_seed() -> int:
    raw = os.environ.get("NKCLASS_SEED")
    if raw is None:
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError:
        raise ParameterError(f"NKCLASS_SEED must be an integer, got {raw!r}")


def _add_input_args(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--csv", help="compiled CSV path (may be .gz)")
    src.add_argument("--tree", help="page-tree directory root")


def _add_forest_args(p):
    p.add_argument("--trees", type=int, default=100, help="number of trees")
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--max-features", type=int, default=None)
    p.add_argument("--min-samples-split", type=int, default=2)
    p.add_argument("--min-samples-leaf", type=int, default=1)
    p.add_argument("--no-bootstrap", action="store_true")


def _hyper(args, seed: int) -> rf.Hyperparams:
    return rf.Hyperparams(n_trees=args.trees, max_depth=args.max_depth,
                          max_features=args.max_features,
                          min_samples_split=args.min_samples_split,
                          min_samples_leaf=args.min_samples_leaf,
                          bootstrap=not args.no_bootstrap, seed=seed)


def _load_raw(args):
    if args.csv:
        return load_dataset(args.csv)
    return parse_page_tree(args.tree)


def _load_clean(args):
    return clean(_load_raw(args), CleaningPolicy())


def _strategy_from_flags(fe: int, resample: str) -> ev.Strategy:
    width = fe + 1
    balance = None if resample == "none" else resample
    base = {1: "RD", 2: "FE1", 3: "FE2"}[width]
    name = base if balance is None else (
        balance.upper() if width == 1 else f"{base}+{balance.upper()}")
    return ev.Strategy(name=name, width=width, balance=balance)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_ingest(args) -> int:
    d = _load_raw(args)
    print(f"records: {len(d)}")
    print(f"labels: {len(d.labels)}")
    print(f"missing n: {d.missing_n_count}")
    print(f"missing k: {d.missing_k_count}")
    print(f"rejected rows: {len(d.parse_rejects)}")
    cleaned = clean(d, CleaningPolicy())
    print(f"records after clean: {len(cleaned)}")
    if args.write:
        write_compiled_csv(cleaned if args.cleaned else d, args.write)
        print(f"wrote {args.write}")
    return 0


def cmd_stats(args) -> int:
    d = _load_clean(args)
    lam_edges = np.geomspace(args.lam_min, args.lam_max, args.lam_bins + 1)
    n_edges = np.linspace(args.n_min, args.n_max, args.n_bins + 1)
    stats = dataset_stats(d, lam_edges, n_edges)
    out = _out_dir(args)
    with open(out / "compound_counts.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["compound", "records"])
        for name, count in stats.compound_counts.items():
            w.writerow([name, count])
    with open(out / "bin_counts.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["bin", "records"])
        for b in ALL_BINS:
            w.writerow([b.label, stats.bin_counts[b]])
    with open(out / "hist2d.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["lam_lo", "lam_hi", "n_lo", "n_hi", "records"])
        for i in range(stats.hist.shape[0]):
            for j in range(stats.hist.shape[1]):
                if stats.hist[i, j]:
                    w.writerow([repr(float(stats.lam_edges[i])),
                                repr(float(stats.lam_edges[i + 1])),
                                repr(float(stats.n_edges[j])),
                                repr(float(stats.n_edges[j + 1])),
                                int(stats.hist[i, j])])
    print(f"stats written to {out} ({stats.record_count} records, "
          f"{len(stats.compound_counts)} compounds)")
    return 0


def _parse_range(text):
    try:
        lo, hi = text.split(":")
        return float(lo), float(hi)
    except ValueError:
        raise ParameterError(f"--range must be LO:HI, got {text!r}")


def cmd_augment(args) -> int:
    d = _load_clean(args)
    lam_lo = lam_hi = None
    if args.range:
        lam_lo, lam_hi = _parse_range(args.range)
    augmented, report = aug.augment_dataset(d, grid_points=args.points,
                                            min_points=args.min_points,
                                            lam_lo=lam_lo, lam_hi=lam_hi)
    out = _out_dir(args)
    with open(out / "sellmeier_fits.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["compound", "A", "B1", "C1", "B2", "C2", "rms", "status"])
        fitted = dict(report.fitted)
        skipped = dict(report.skipped)
        for compound in d.labels:
            if compound in fitted:
                m = fitted[compound]
                w.writerow([compound, repr(m.a), repr(m.b1), repr(m.c1),
                            repr(m.b2), repr(m.c2), repr(m.rms_residual), "fitted"])
            else:
                w.writerow([compound, "", "", "", "", "", "",
                            f"skipped: {skipped.get(compound, 'unknown')}"])
    if args.write_augmented:
        write_compiled_csv(augmented, args.write_augmented)
        print(f"wrote {args.write_augmented}")
    print(f"fitted {len(report.fitted)}, skipped {len(report.skipped)}, "
          f"generated {report.generated_count} records "
          f"({len(d)} -> {len(augmented)})")
    return 0


def cmd_train(args) -> int:
    d = _load_clean(args)
    seed = args.seed
    strat = _strategy_from_flags(args.fe, args.resample)
    spec = SplitSpec(train_fraction=args.train_fraction,
                     seed=derive(seed, "split", strat.name),
                     paper_mode=args.paper_mode)
    hyper = _hyper(args, derive(seed, "forest", strat.name))
    report = ev.run_experiment(d, strat, spec, hyper,
                               truncate_digits=args.truncate_digits)
    print(f"strategy {strat.name}: train accuracy "
          f"{report.overall_train_accuracy:.4f}, test accuracy "
          f"{report.overall_test_accuracy:.4f}")
    if args.model_out:
        train_fs, test_fs, _ = ev.prepare_train_test(
            d, strat, spec, truncate_digits=args.truncate_digits)
        model = rf.fit(train_fs, hyper)
        data = rf.save_model(model)
        path = Path(args.model_out)
        if path.suffix == ".gz":
            with gzip.open(path, "wb") as f:
                f.write(data)
        else:
            path.write_bytes(data)
        print(f"model written to {path}")
    return 0


def cmd_evaluate(args) -> int:
    d = _load_clean(args)
    strat = ev.get_strategy(args.strategy)
    spec = SplitSpec(train_fraction=args.train_fraction,
                     seed=derive(args.seed, "split", strat.name),
                     paper_mode=args.paper_mode)
    hyper = _hyper(args, derive(args.seed, "forest", strat.name))
    report = ev.run_experiment(d, strat, spec, hyper,
                               truncate_digits=args.truncate_digits,
                               per_bin_models=args.per_bin_models)
    out = _out_dir(args)
    path = out / f"report_{strat.name.replace('-', '_')}.csv"
    ev.emit_report(report, path)
    print(f"{strat.name}: train {report.overall_train_accuracy:.4f}, "
          f"test {report.overall_test_accuracy:.4f}")
    for lab, acc in report.per_bin_test_accuracy.items():
        print(f"  {lab}: {acc:.4f}")
    print(f"report written to {path}")
    return 0


def cmd_sweep(args) -> int:
    d = _load_clean(args)
    try:
        digits = [int(x) for x in args.digits.split(",") if x]
    except ValueError:
        raise ParameterError(f"--digits must be comma-separated integers, got {args.digits!r}")
    strat = ev.get_strategy(args.strategy)
    spec = SplitSpec(seed=derive(args.seed, "split", "sweep"), paper_mode=args.paper_mode)
    hyper = _hyper(args, derive(args.seed, "forest", "sweep"))
    sweep = ev.precision_sweep(d, digits, strat, spec, hyper)
    out = _out_dir(args)
    ev.write_fig_sweep(sweep, out / "fig6_precision_sweep.csv")
    for dgt in sorted(k for k in sweep if k is not None):
        print(f"d={dgt}: test accuracy {sweep[dgt].overall_test_accuracy:.4f}")
    print(f"untruncated: test accuracy {sweep[None].overall_test_accuracy:.4f}")
    print(f"sweep written to {out / 'fig6_precision_sweep.csv'}")
    return 0


def cmd_classify(args) -> int:
    lam = args.wavelength
    if lam is None:
        raise ParameterError("--wavelength is required")
    if args.nm:
        lam = lam / 1000.0
    if lam <= 0:
        raise ParameterError(f"wavelength must be positive, got {lam}")
    if args.k < 0:
        raise ParameterError(f"k must be nonnegative, got {args.k}")
    if args.top < 1:
        raise ParameterError(f"--top must be >= 1, got {args.top}")
    path = Path(args.model)
    try:
        raw = gzip.open(path, "rb").read() if path.suffix == ".gz" else path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read model: {e}")
    model = rf.load_model(raw)
    if model.feature_width != 1:
        raise ParameterError(
            f"model was trained on {model.feature_width}-point windows; "
            f"single-point classification needs a width-1 model "
            f"(supply {model.feature_width} consecutive points instead)")
    fv = FeatureVector(points=((lam, args.n, args.k),))
    proba = rf.predict_proba(model, fv)
    order = np.argsort(-proba, kind="stable")[:args.top]
    rows = [(model.label_table[i], float(proba[i])) for i in order]
    if args.format == "csv":
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["rank", "compound", "probability"])
        for rank, (name, p) in enumerate(rows, 1):
            w.writerow([rank, name, repr(p)])
    else:
        for rank, (name, p) in enumerate(rows, 1):
            print(f"{rank:2d}. {name:30s} {p:.4f}")
    return 0


def cmd_run_paper(args) -> int:
    d = _load_clean(args)
    try:
        digits = [int(x) for x in args.digits.split(",") if x]
    except ValueError:
        raise ParameterError(f"--digits must be comma-separated integers, got {args.digits!r}")
    out = _out_dir(args)
    _, _, rows = ev.run_paper(d, out, seed=args.seed, n_trees=args.trees,
                              sweep_digits=digits, augment_points=args.points,
                              progress=print)
    failed = [r for r in rows if not r.passed]
    if failed:
        print(f"{len(failed)} summary check(s) outside target windows "
              f"(see {out / 'summary.csv'})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="nkclass",
        description="Classify organic compounds from single-wavelength "
                    "refractive-index measurements.")
    p.add_argument("--seed", type=int, default=None,
                   help=f"global RNG seed (default {DEFAULT_SEED}; "
                        "NKCLASS_SEED overrides the default)")
    p.add_argument("--paper-mode", action="store_true",
                   help="balance/augment before splitting (reproduces the "
                        "published ordering; allows duplicate leakage)")
    p.add_argument("--out", default="nkclass_out", help="output directory")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("ingest", help="parse and validate a spectral database")
    _add_input_args(sp)
    sp.add_argument("--write", help="write the dataset as canonical compiled CSV")
    sp.add_argument("--cleaned", action="store_true",
                    help="with --write, write the cleaned dataset")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("stats", help="dataset distribution tables")
    _add_input_args(sp)
    sp.add_argument("--lam-bins", type=int, default=50)
    sp.add_argument("--lam-min", type=float, default=0.2)
    sp.add_argument("--lam-max", type=float, default=25.0)
    sp.add_argument("--n-bins", type=int, default=50)
    sp.add_argument("--n-min", type=float, default=0.0)
    sp.add_argument("--n-max", type=float, default=2.5)
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("augment", help="fit dispersion models and generate records")
    _add_input_args(sp)
    sp.add_argument("--points", type=int, default=aug.DEFAULT_GRID_POINTS,
                    help="synthetic points per fitted compound")
    sp.add_argument("--min-points", type=int, default=aug.DEFAULT_MIN_POINTS,
                    help="minimum usable points below 1.5 um to attempt a fit")
    sp.add_argument("--range", help="generation range LO:HI in um")
    sp.add_argument("--write-augmented", help="write augmented dataset CSV path")
    sp.set_defaults(func=cmd_augment)

    sp = sub.add_parser("train", help="train a forest and optionally save it")
    _add_input_args(sp)
    sp.add_argument("--fe", type=int, choices=(0, 1, 2), default=0,
                    help="feature engineering level (0: single point)")
    sp.add_argument("--resample", choices=("none", "os", "us", "da"), default="none")
    sp.add_argument("--truncate-digits", type=int, default=None)
    sp.add_argument("--train-fraction", type=float, default=0.75)
    _add_forest_args(sp)
    sp.add_argument("--model-out", help="write the trained model (.json or .json.gz)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="run one named strategy end to end")
    _add_input_args(sp)
    sp.add_argument("--strategy", default="RD",
                    help="one of " + ", ".join(sorted(ev.STRATEGIES)))
    sp.add_argument("--truncate-digits", type=int, default=None)
    sp.add_argument("--train-fraction", type=float, default=0.75)
    sp.add_argument("--per-bin-models", action="store_true",
                    help="train one forest per spectral bin")
    _add_forest_args(sp)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("sweep-precision", help="accuracy vs truncation digits")
    _add_input_args(sp)
    sp.add_argument("--digits", default="1,2,3,4,5,6")
    sp.add_argument("--strategy", default="RD")
    _add_forest_args(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("classify", help="rank compounds for one measurement")
    sp.add_argument("--model", required=True, help="trained model path")
    sp.add_argument("--wavelength", type=float, help="wavelength in um")
    sp.add_argument("--nm", action="store_true", help="interpret --wavelength in nm")
    sp.add_argument("--n", type=float, required=True, help="refractive index")
    sp.add_argument("--k", type=float, default=0.0, help="extinction coefficient")
    sp.add_argument("--top", type=int, default=5, help="ranked results to print")
    sp.add_argument("--format", choices=("table", "csv"), default="table")
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("run-paper", help="full published battery with fixed seeds")
    _add_input_args(sp)
    sp.add_argument("--trees", type=int, default=100,
                    help="trees per forest (20 is the smoke profile)")
    sp.add_argument("--digits", default="1,2,3,4,5,6",
                    help="precision sweep digits")
    sp.add_argument("--points", type=int, default=aug.DEFAULT_GRID_POINTS)
    sp.set_defaults(func=cmd_run_paper)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.seed is None:
        args.seed = _env_seed()
    os.environ.get("NKCLASS_THREADS")  # reserved; pipeline is single-threaded
    try:
        return args.func(args)
    except ParameterError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except PipelineError as e:
        print(f"pipeline error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
