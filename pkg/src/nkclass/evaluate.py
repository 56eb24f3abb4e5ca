"""Metrics, experiment orchestration, and plot-ready report emission.

run_experiment executes one preprocessing strategy end to end and returns an
ExperimentReport; precision_sweep repeats a strategy across truncation
levels; run_paper executes the whole published battery and writes the four
figure CSV analogues plus a pass/fail summary against the prose targets.

Pipeline ordering depends on SplitSpec.paper_mode. With paper_mode=True,
balancing (resampling or augmentation) happens before the train/test split,
reproducing the published numbers at the cost of duplicate leakage across
the partition. With paper_mode=False (default), the split comes first and
balancing touches only the training side; the absence of any train/test
fingerprint overlap is then verified on every run.
"""

from __future__ import annotations

import csv
import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import augment as aug
from . import forest as rf
from .errors import ParameterError, PipelineError
from .ingest import CompoundId, Dataset
from .preprocess import (FeatureSet, SplitSpec, oversample, split,
                         truncate_precision, undersample, window_features)
from .rng import derive
from .spectral import ALL_BINS, SpectralBin

BIN_LABELS = tuple(b.label for b in ALL_BINS)


@dataclass(frozen=True)
class Strategy:
    """A named preprocessing recipe: one feature width, at most one balancer."""
    name: str
    width: int
    balance: Optional[str] = None    # None | "os" | "us" | "da"
    sbb: bool = False                # per-bin reporting emphasis


STRATEGIES: Dict[str, Strategy] = {s.name: s for s in (
    Strategy("RD", 1),
    Strategy("FE1", 2),
    Strategy("FE2", 3),
    Strategy("SBB", 1, sbb=True),
    Strategy("SBB-FE1", 2, sbb=True),
    Strategy("SBB-FE2", 3, sbb=True),
    Strategy("OS", 1, balance="os"),
    Strategy("US", 1, balance="us"),
    Strategy("DA", 1, balance="da"),
)}

BATTERY_ORDER = ("RD", "FE1", "FE2", "SBB", "OS", "US", "DA")


def get_strategy(name: str) -> Strategy:
    try:
        return STRATEGIES[name.upper()]
    except KeyError:
        raise ParameterError(
            f"unknown strategy {name!r}; choose from {sorted(STRATEGIES)}")


@dataclass
class ExperimentReport:
    strategy: str
    seed: int
    paper_mode: bool
    n_trees: int
    train_size: int
    test_size: int
    overall_train_accuracy: float
    overall_test_accuracy: float
    per_bin_test_accuracy: Dict[str, float]          # bin label -> accuracy
    record_counts: Dict[str, Tuple[int, int]]        # bin label -> (before, after)
    labels: Tuple[str, ...]
    confusion: np.ndarray                            # truth x predicted counts
    truncate_digits: Optional[int] = None
    leak_checked: bool = False


def accuracy(predictions, truths) -> float:
    """Fraction of exact matches between two aligned label sequences."""
    p = np.asarray(predictions)
    t = np.asarray(truths)
    if p.shape[0] != t.shape[0]:
        raise ParameterError(f"length mismatch: {p.shape[0]} vs {t.shape[0]}")
    if p.shape[0] == 0:
        raise ParameterError("cannot compute accuracy of an empty set")
    return float(np.mean(p == t))


def per_bin_accuracy(predictions, truths, bins) -> Dict[SpectralBin, float]:
    """Accuracy restricted to each spectral bin; empty bins are absent."""
    p = np.asarray(predictions)
    t = np.asarray(truths)
    b = np.asarray(bins)
    if not (p.shape[0] == t.shape[0] == b.shape[0]):
        raise ParameterError("predictions, truths and bins must be aligned")
    if p.shape[0] == 0:
        raise ParameterError("cannot compute accuracy of an empty set")
    out: Dict[SpectralBin, float] = {}
    for sb in ALL_BINS:
        sel = b == int(sb)
        if sel.any():
            out[sb] = float(np.mean(p[sel] == t[sel]))
    return out


@contextmanager
def _stage(name: str):
    try:
        yield
    except PipelineError:
        raise
    except Exception as e:
        raise PipelineError(f"stage '{name}': {e}") from e


def _augment_train_only(train: FeatureSet, grid_points: int) -> FeatureSet:
    """Fit dispersion models on training curves only and append synthetic vectors."""
    w = train.width
    lam = train.X[:, 0::3].reshape(-1)
    nval = train.X[:, 1::3].reshape(-1)
    labs = np.repeat(train.y, w)
    parts_X: List[np.ndarray] = []
    parts_y: List[int] = []
    pages: List[CompoundId] = []
    for code, compound in enumerate(train.labels):
        sel = labs == code
        if not sel.any():
            continue
        try:
            model = aug.fit_sellmeier_arrays(lam[sel], nval[sel], compound)
            glam, gn = aug.generate_arrays(model, grid_points)
        except (aug.FitSkipped, ParameterError):
            continue
        nwin = glam.shape[0] // w
        if nwin == 0:
            continue
        X = np.zeros((nwin, 3 * w))
        X[:, 0::3] = glam[:nwin * w].reshape(nwin, w)
        X[:, 1::3] = gn[:nwin * w].reshape(nwin, w)
        parts_X.append(X)
        parts_y.extend([code] * nwin)
        pages.append(CompoundId("organic", compound, aug.SYNTHETIC_PAGE))
    if not parts_X:
        return train
    Xs = np.concatenate(parts_X)
    ys = np.asarray(parts_y, np.int32)
    page_col = np.repeat(np.arange(len(pages), dtype=np.int32),
                         [p.shape[0] for p in parts_X])
    from .spectral import bin_indices
    synth = FeatureSet(Xs, ys, bin_indices(Xs[:, 0]), page_col,
                       train.labels, tuple(pages), w)
    return train.concat(synth)


def prepare_train_test(d: Dataset, strategy: Strategy, split_spec: SplitSpec,
                       truncate_digits: Optional[int] = None,
                       augment_points: int = aug.DEFAULT_GRID_POINTS):
    """Assemble the (train, test) feature sets for one strategy.

    Returns (train, test, counts_before, leak_checked), where counts_before
    are the per-bin vector counts before any balancing. In non-paper mode
    the train/test fingerprint disjointness is verified here.
    """
    if isinstance(strategy, str):
        strategy = get_strategy(strategy)
    balance_seed = derive(split_spec.seed, "balance", strategy.name)

    if split_spec.paper_mode and strategy.balance == "da":
        with _stage("augment"):
            d, _ = aug.augment_dataset(d, grid_points=augment_points)

    with _stage("window"):
        fs = window_features(d, strategy.width)
    counts_before = fs.bin_counts()

    if split_spec.paper_mode and strategy.balance in ("os", "us"):
        with _stage("balance"):
            fs = (oversample if strategy.balance == "os" else undersample)(
                fs, seed=balance_seed)

    with _stage("split"):
        train, test = split(fs, split_spec)

    if truncate_digits is not None:
        with _stage("truncate"):
            train = truncate_precision(train, truncate_digits)
            test = truncate_precision(test, truncate_digits)

    leak_checked = False
    if not split_spec.paper_mode:
        if strategy.balance in ("os", "us"):
            with _stage("balance"):
                train = (oversample if strategy.balance == "os" else undersample)(
                    train, seed=balance_seed)
        elif strategy.balance == "da":
            with _stage("augment"):
                train = _augment_train_only(train, augment_points)
        with _stage("leakage-guard"):
            overlap = train.fingerprints() & test.fingerprints()
            if overlap:
                raise PipelineError(
                    f"stage 'leakage-guard': {len(overlap)} vector(s) shared "
                    "between train and test")
            leak_checked = True
    return train, test, counts_before, leak_checked


def run_experiment(d: Dataset, strategy: Strategy, split_spec: SplitSpec,
                   hyper: rf.Hyperparams, truncate_digits: Optional[int] = None,
                   augment_points: int = aug.DEFAULT_GRID_POINTS,
                   per_bin_models: bool = False) -> ExperimentReport:
    """Execute feature scheme -> balancing -> split -> fit -> evaluate."""
    if isinstance(strategy, str):
        strategy = get_strategy(strategy)
    train, test, counts_before, leak_checked = prepare_train_test(
        d, strategy, split_spec, truncate_digits, augment_points)
    counts_after = train.bin_counts()

    with _stage("fit"):
        if per_bin_models:
            train_pred, test_pred = _fit_predict_per_bin(train, test, hyper)
        else:
            model = rf.fit(train, hyper)
            train_pred = rf.predict_batch(model, train.X)
            test_pred = rf.predict_batch(model, test.X)

    with _stage("evaluate"):
        overall_train = accuracy(train_pred, train.y)
        overall_test = accuracy(test_pred, test.y)
        per_bin = per_bin_accuracy(test_pred, test.y, test.bins)
        n_labels = len(train.labels)
        confusion = np.zeros((n_labels, n_labels), dtype=np.int64)
        np.add.at(confusion, (test.y, test_pred), 1)

    return ExperimentReport(
        strategy=strategy.name,
        seed=split_spec.seed,
        paper_mode=split_spec.paper_mode,
        n_trees=hyper.n_trees,
        train_size=len(train),
        test_size=len(test),
        overall_train_accuracy=overall_train,
        overall_test_accuracy=overall_test,
        per_bin_test_accuracy={b.label: a for b, a in per_bin.items()},
        record_counts={lab: (counts_before[b], counts_after[b])
                       for b, lab in zip(ALL_BINS, BIN_LABELS)},
        labels=train.labels,
        confusion=confusion,
        truncate_digits=truncate_digits,
        leak_checked=leak_checked,
    )


def _fit_predict_per_bin(train: FeatureSet, test: FeatureSet, hyper: rf.Hyperparams):
    """SBB variant: one forest per spectral bin (behind a flag)."""
    train_pred = np.zeros(len(train), np.int32)
    test_pred = np.zeros(len(test), np.int32)
    for b in ALL_BINS:
        tr_sel = np.nonzero(train.bins == int(b))[0]
        te_sel = np.nonzero(test.bins == int(b))[0]
        if tr_sel.size == 0:
            continue
        sub = train.subset(tr_sel)
        if np.unique(sub.y).size < 2 or len(sub) < 2:
            train_pred[tr_sel] = sub.y[0]
            test_pred[te_sel] = sub.y[0]
            continue
        model = rf.fit(sub, hyper)
        train_pred[tr_sel] = rf.predict_batch(model, sub.X)
        if te_sel.size:
            test_pred[te_sel] = rf.predict_batch(model, test.X[te_sel])
    return train_pred, test_pred


def precision_sweep(d: Dataset, digits: Sequence[int], strategy: Strategy,
                    split_spec: SplitSpec, hyper: rf.Hyperparams,
                    include_untruncated: bool = True,
                    augment_points: int = aug.DEFAULT_GRID_POINTS):
    """Run the strategy once per truncation level (plus an untruncated baseline).

    Truncation is applied identically to both partitions, after splitting.
    Returns {digits_or_None: ExperimentReport}.
    """
    digits = list(digits)
    if not digits:
        raise ParameterError("digits list must be non-empty")
    for dgt in digits:
        if not isinstance(dgt, (int, np.integer)) or dgt < 1:
            raise ParameterError(f"digits must be integers >= 1, got {dgt!r}")
    levels: List[Optional[int]] = ([None] if include_untruncated else []) + digits
    out: Dict[Optional[int], ExperimentReport] = {}
    for dgt in levels:
        out[dgt] = run_experiment(d, strategy, split_spec, hyper,
                                  truncate_digits=dgt,
                                  augment_points=augment_points)
    return out


# --------------------------------------------------------------------------
# report serialization

def _fmt(x: float) -> str:
    return repr(float(x))


def emit_report(report: ExperimentReport, path) -> None:
    """Write one report as a long-format CSV that parse_report inverts exactly."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["section", "key", "subkey", "value"])
        w.writerow(["meta", "strategy", "", report.strategy])
        w.writerow(["meta", "seed", "", str(report.seed)])
        w.writerow(["meta", "paper_mode", "", str(report.paper_mode).lower()])
        w.writerow(["meta", "n_trees", "", str(report.n_trees)])
        w.writerow(["meta", "train_size", "", str(report.train_size)])
        w.writerow(["meta", "test_size", "", str(report.test_size)])
        w.writerow(["meta", "truncate_digits", "",
                    "" if report.truncate_digits is None else str(report.truncate_digits)])
        w.writerow(["meta", "leak_checked", "", str(report.leak_checked).lower()])
        w.writerow(["accuracy", "train", "", _fmt(report.overall_train_accuracy)])
        w.writerow(["accuracy", "test", "", _fmt(report.overall_test_accuracy)])
        for lab in BIN_LABELS:
            if lab in report.per_bin_test_accuracy:
                w.writerow(["bin_accuracy", lab, "",
                            _fmt(report.per_bin_test_accuracy[lab])])
        for lab in BIN_LABELS:
            before, after = report.record_counts.get(lab, (0, 0))
            w.writerow(["counts", lab, "before", str(before)])
            w.writerow(["counts", lab, "after", str(after)])
        for i, lab in enumerate(report.labels):
            w.writerow(["label", str(i), "", lab])
        truth_idx, pred_idx = np.nonzero(report.confusion)
        for ti, pi in zip(truth_idx, pred_idx):
            w.writerow(["confusion", str(int(ti)), str(int(pi)),
                        str(int(report.confusion[ti, pi]))])


def parse_report(path) -> ExperimentReport:
    rows: List[List[str]] = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != ["section", "key", "subkey", "value"]:
            raise ParameterError(f"not a report file: {path}")
        rows = list(reader)
    meta = {k: v for sect, k, _, v in rows if sect == "meta"}
    acc = {k: float(v) for sect, k, _, v in rows if sect == "accuracy"}
    per_bin = {k: float(v) for sect, k, _, v in rows if sect == "bin_accuracy"}
    counts: Dict[str, List[int]] = {}
    for sect, k, sub, v in rows:
        if sect == "counts":
            pair = counts.setdefault(k, [0, 0])
            pair[0 if sub == "before" else 1] = int(v)
    labels = [v for sect, _, _, v in rows if sect == "label"]
    confusion = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for sect, k, sub, v in rows:
        if sect == "confusion":
            confusion[int(k), int(sub)] = int(v)
    return ExperimentReport(
        strategy=meta["strategy"],
        seed=int(meta["seed"]),
        paper_mode=meta["paper_mode"] == "true",
        n_trees=int(meta["n_trees"]),
        train_size=int(meta["train_size"]),
        test_size=int(meta["test_size"]),
        overall_train_accuracy=acc["train"],
        overall_test_accuracy=acc["test"],
        per_bin_test_accuracy=per_bin,
        record_counts={k: (v[0], v[1]) for k, v in counts.items()},
        labels=tuple(labels),
        confusion=confusion,
        truncate_digits=None if meta["truncate_digits"] == "" else int(meta["truncate_digits"]),
        leak_checked=meta["leak_checked"] == "true",
    )


def reports_equal(a: ExperimentReport, b: ExperimentReport) -> bool:
    return (a.strategy == b.strategy and a.seed == b.seed
            and a.paper_mode == b.paper_mode and a.n_trees == b.n_trees
            and a.train_size == b.train_size and a.test_size == b.test_size
            and a.overall_train_accuracy == b.overall_train_accuracy
            and a.overall_test_accuracy == b.overall_test_accuracy
            and a.per_bin_test_accuracy == b.per_bin_test_accuracy
            and a.record_counts == dict(b.record_counts)
            and a.labels == b.labels
            and np.array_equal(a.confusion, b.confusion)
            and a.truncate_digits == b.truncate_digits
            and a.leak_checked == b.leak_checked)


def write_fig_overall(reports: Sequence[ExperimentReport], path) -> None:
    """Overall train/test accuracy per strategy (figure 3 analogue)."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["strategy", "train_accuracy", "test_accuracy"])
        for r in reports:
            w.writerow([r.strategy, _fmt(r.overall_train_accuracy),
                        _fmt(r.overall_test_accuracy)])


def write_fig_bin_counts(reports: Sequence[ExperimentReport], path) -> None:
    """Training record counts per spectral bin before/after balancing (figure 4)."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["strategy", "bin", "count_before", "count_after"])
        for r in reports:
            for lab in BIN_LABELS:
                before, after = r.record_counts.get(lab, (0, 0))
                w.writerow([r.strategy, lab, str(before), str(after)])


def write_fig_bin_accuracy(reports: Sequence[ExperimentReport], path) -> None:
    """Per-bin test accuracy by strategy (figure 5): 5 bin columns, one row each."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["strategy"] + list(BIN_LABELS))
        for r in reports:
            row = [r.strategy]
            for lab in BIN_LABELS:
                a = r.per_bin_test_accuracy.get(lab)
                row.append("" if a is None else _fmt(a))
            w.writerow(row)


def write_fig_sweep(sweep: Dict[Optional[int], ExperimentReport], path) -> None:
    """Test accuracy against truncation digits (figure 6 analogue)."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["digits", "test_accuracy"])
        for dgt in sorted(k for k in sweep if k is not None):
            w.writerow([str(dgt), _fmt(sweep[dgt].overall_test_accuracy)])
        if None in sweep:
            w.writerow(["untruncated", _fmt(sweep[None].overall_test_accuracy)])


# --------------------------------------------------------------------------
# the published battery

@dataclass
class SummaryRow:
    check: str
    value: float
    target: str
    passed: bool


def _battery_checks(by_name: Dict[str, ExperimentReport],
                    sweep: Dict[Optional[int], ExperimentReport]) -> List[SummaryRow]:
    rows: List[SummaryRow] = []

    def add(check, value, target, passed):
        rows.append(SummaryRow(check, float(value), target, bool(passed)))

    rd = by_name["RD"].overall_test_accuracy
    add("RD overall test accuracy", rd, "0.80 +/- 0.05", abs(rd - 0.80) <= 0.05)
    for s in ("FE1", "FE2"):
        v = by_name[s].overall_test_accuracy
        add(f"{s} at or below RD", v, "<= RD + 0.01", v <= rd + 0.01)
    for s, bin_lab, floor in (("US", "UV", 0.92), ("US", "VIS", 0.94),
                              ("OS", "UV", 0.92), ("OS", "VIS", 0.94),
                              ("DA", "UV", 0.95), ("DA", "VIS", 0.95)):
        v = by_name[s].per_bin_test_accuracy.get(bin_lab, 0.0)
        add(f"{s} {bin_lab} accuracy", v, f">= {floor}", v >= floor)
    rd_far = by_name["RD"].per_bin_test_accuracy.get("FarIR", 0.0)
    us_far = by_name["US"].per_bin_test_accuracy.get("FarIR", 1.0)
    add("US FarIR drop vs RD", rd_far - us_far, ">= 0.15", rd_far - us_far >= 0.15)
    if sweep:
        untrunc = sweep[None].overall_test_accuracy
        d3 = sweep[3].overall_test_accuracy
        for dgt in (1, 2):
            v = sweep[dgt].overall_test_accuracy
            add(f"sweep d={dgt} below d=3", d3 - v, ">= 0.05", d3 - v >= 0.05)
        add("sweep d=3 accuracy", d3, "0.95 +/- 0.04", abs(d3 - 0.95) <= 0.04)
        for dgt in (4, 5, 6):
            if dgt in sweep:
                v = sweep[dgt].overall_test_accuracy
                add(f"sweep d={dgt} near untruncated", abs(v - untrunc),
                    "<= 0.02", abs(v - untrunc) <= 0.02)
    return rows


def write_summary(rows: Sequence[SummaryRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["check", "value", "target", "status"])
        for r in rows:
            w.writerow([r.check, _fmt(r.value), r.target,
                        "pass" if r.passed else "FAIL"])


def run_paper(d: Dataset, out_dir, seed: int = 42, n_trees: int = 100,
              sweep_digits: Sequence[int] = (1, 2, 3, 4, 5, 6),
              augment_points: int = aug.DEFAULT_GRID_POINTS,
              progress=None):
    """Execute the full published battery on a cleaned dataset.

    Runs RD, FE1, FE2, SBB, OS, US, DA and the RD precision sweep in
    paper_mode with per-strategy derived seeds, writes figure CSVs, one
    report CSV per run, and a summary comparing each number against its
    target window. Returns (reports_by_name, sweep_reports, summary_rows).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    say = progress if progress is not None else (lambda msg: None)
    reports: Dict[str, ExperimentReport] = {}
    ordered: List[ExperimentReport] = []
    for name in BATTERY_ORDER:
        strat = STRATEGIES[name]
        spec = SplitSpec(train_fraction=0.75, seed=derive(seed, "split", name),
                         paper_mode=True)
        hyper = rf.Hyperparams(n_trees=n_trees, seed=derive(seed, "forest", name))
        say(f"running {name} ...")
        rep = run_experiment(d, strat, spec, hyper, augment_points=augment_points)
        reports[name] = rep
        ordered.append(rep)
        emit_report(rep, out / f"report_{name.replace('-', '_')}.csv")
        say(f"  {name}: test accuracy {rep.overall_test_accuracy:.4f}")
    spec = SplitSpec(train_fraction=0.75, seed=derive(seed, "split", "sweep"),
                     paper_mode=True)
    hyper = rf.Hyperparams(n_trees=n_trees, seed=derive(seed, "forest", "sweep"))
    say("running precision sweep (RD) ...")
    sweep = precision_sweep(d, list(sweep_digits), STRATEGIES["RD"], spec, hyper)
    for dgt, rep in sweep.items():
        tag = "untruncated" if dgt is None else f"d{dgt}"
        emit_report(rep, out / f"report_sweep_{tag}.csv")
    write_fig_overall(ordered, out / "fig3_overall_accuracy.csv")
    write_fig_bin_counts([reports[n] for n in ("RD", "OS", "US", "DA")],
                         out / "fig4_bin_distribution.csv")
    write_fig_bin_accuracy(ordered, out / "fig5_bin_accuracy.csv")
    write_fig_sweep(sweep, out / "fig6_precision_sweep.csv")
    rows = _battery_checks(reports, sweep)
    write_summary(rows, out / "summary.csv")
    say(f"summary: {sum(r.passed for r in rows)}/{len(rows)} checks passed")
    return reports, sweep, rows
