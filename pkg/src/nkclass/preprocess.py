"""Feature construction: windowing, precision truncation, splitting, resampling.

A cleaned Dataset becomes a FeatureSet: a flat (N, 3w) matrix whose rows are
w consecutive same-curve points, each point contributing (wavelength, n, k).
All operations are pure functions of their inputs plus an explicit seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from .errors import DataError, ParameterError
from .ingest import CompoundId, Dataset
from .spectral import ALL_BINS, SpectralBin, assign_bin, bin_indices

WINDOW_WIDTHS = (1, 2, 3)


@dataclass(frozen=True)
class FeatureVector:
    """A single classifier input: w (wavelength, n, k) points plus its label."""
    points: Tuple[Tuple[float, float, float], ...]
    label: Optional[str] = None

    @property
    def width(self) -> int:
        return len(self.points)

    @property
    def bin(self) -> SpectralBin:
        return assign_bin(self.points[0][0])

    def flat(self) -> np.ndarray:
        return np.asarray(self.points, dtype=np.float64).reshape(-1)


class FeatureSet:
    """Columnar batch of feature vectors sharing one label table.

    X rows are [lam_1, n_1, k_1, ..., lam_w, n_w, k_w]; y holds label codes;
    bins the spectral bin of lam_1; page the source-curve index (provenance,
    used when augmentation must be restricted to the training partition).
    """

    __slots__ = ("X", "y", "bins", "page", "labels", "pages", "width")

    def __init__(self, X, y, bins, page, labels, pages, width):
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        self.y = np.ascontiguousarray(y, dtype=np.int32)
        self.bins = np.ascontiguousarray(bins, dtype=np.uint8)
        self.page = np.ascontiguousarray(page, dtype=np.int32)
        self.labels = tuple(labels)
        self.pages = tuple(pages)
        self.width = int(width)

    def __len__(self) -> int:
        return int(self.X.shape[0])

    def vector(self, i: int) -> FeatureVector:
        row = self.X[i]
        pts = tuple(tuple(row[3 * j:3 * j + 3]) for j in range(self.width))
        return FeatureVector(points=pts, label=self.labels[self.y[i]])

    def __iter__(self) -> Iterator[FeatureVector]:
        for i in range(len(self)):
            yield self.vector(i)

    def subset(self, indices) -> "FeatureSet":
        idx = np.asarray(indices)
        return FeatureSet(self.X[idx], self.y[idx], self.bins[idx], self.page[idx],
                          self.labels, self.pages, self.width)

    def concat(self, other: "FeatureSet") -> "FeatureSet":
        if other.width != self.width:
            raise ParameterError("cannot concatenate feature sets of different widths")
        if other.labels != self.labels:
            raise ParameterError("cannot concatenate feature sets with different label tables")
        page_offset = len(self.pages)
        return FeatureSet(np.concatenate([self.X, other.X]),
                          np.concatenate([self.y, other.y]),
                          np.concatenate([self.bins, other.bins]),
                          np.concatenate([self.page, other.page + page_offset]),
                          self.labels, self.pages + other.pages, self.width)

    def bin_counts(self) -> dict:
        counts = np.bincount(self.bins, minlength=len(ALL_BINS))
        return {b: int(counts[int(b)]) for b in ALL_BINS}

    def fingerprints(self) -> set:
        """Content identity of each vector: exact feature bytes plus label."""
        return {(self.X[i].tobytes(), int(self.y[i])) for i in range(len(self))}


def window_features(d: Dataset, w: int) -> FeatureSet:
    """Pack w consecutive same-curve points into one vector.

    Within each page, records are sorted by wavelength and chunked into
    disjoint windows; a final short remainder is dropped, so a page with m
    records yields floor(m / w) vectors. w = 1 is the identity packing.
    """
    if w not in WINDOW_WIDTHS:
        raise ParameterError(f"window width must be one of {WINDOW_WIDTHS}, got {w}")
    if np.isnan(d.n).any() or np.isnan(d.k).any():
        raise DataError("window_features requires a cleaned dataset")
    if len(d) == 0:
        return FeatureSet(np.empty((0, 3 * w)), np.empty(0, np.int32),
                          np.empty(0, np.uint8), np.empty(0, np.int32),
                          d.labels, d.pages, w)
    order = np.lexsort((np.arange(len(d)), d.wavelength_um, d.page_index))
    pi_sorted = d.page_index[order]
    cuts = np.nonzero(np.diff(pi_sorted))[0] + 1
    chunks = []
    for seg in np.split(order, cuts):
        nwin = len(seg) // w
        if nwin:
            chunks.append(seg[:nwin * w].reshape(nwin, w))
    if not chunks:
        return FeatureSet(np.empty((0, 3 * w)), np.empty(0, np.int32),
                          np.empty(0, np.uint8), np.empty(0, np.int32),
                          d.labels, d.pages, w)
    idx = np.concatenate(chunks)
    X = np.empty((idx.shape[0], 3 * w))
    X[:, 0::3] = d.wavelength_um[idx]
    X[:, 1::3] = d.n[idx]
    X[:, 2::3] = d.k[idx]
    page = d.page_index[idx[:, 0]]
    y = d.page_labels[page]
    return FeatureSet(X, y, bin_indices(X[:, 0]), page, d.labels, d.pages, w)


def truncate_precision(fs: FeatureSet, digits: int) -> FeatureSet:
    """Round every n and k to ``digits`` decimal places (half-to-even).

    Wavelengths are untouched. Idempotent at fixed digits.
    """
    if not isinstance(digits, (int, np.integer)) or digits < 1:
        raise ParameterError(f"digits must be an integer >= 1, got {digits!r}")
    X = fs.X.copy()
    X[:, 1::3] = np.round(X[:, 1::3], digits)
    X[:, 2::3] = np.round(X[:, 2::3], digits)
    return FeatureSet(X, fs.y, fs.bins, fs.page, fs.labels, fs.pages, fs.width)


@dataclass(frozen=True)
class SplitSpec:
    """Train/test partitioning parameters.

    paper_mode controls pipeline ordering downstream: True resamples or
    augments before splitting (reproducing published figures, duplicates may
    cross the partition); False applies balancing to the training side only.
    """
    train_fraction: float = 0.75
    seed: int = 0
    paper_mode: bool = False

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ParameterError(
                f"train_fraction must be in (0, 1), got {self.train_fraction}")


def split(fs: FeatureSet, spec: SplitSpec) -> tuple[FeatureSet, FeatureSet]:
    """Seeded uniform shuffle-split into (train, test).

    |train| = round(train_fraction * |fs|); any label with at least two
    vectors is guaranteed a training presence (deterministic swap from test
    if the shuffle left it out).
    """
    n = len(fs)
    if n < 2:
        raise ParameterError("need at least 2 vectors to split")
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(n)
    n_train = round(spec.train_fraction * n)
    in_train = np.zeros(n, dtype=bool)
    in_train[perm[:n_train]] = True
    _ensure_labels_in_train(fs, in_train)
    train_idx = np.nonzero(in_train)[0]
    test_idx = np.nonzero(~in_train)[0]
    return fs.subset(train_idx), fs.subset(test_idx)


def _ensure_labels_in_train(fs: FeatureSet, in_train: np.ndarray) -> None:
    n_labels = len(fs.labels)
    total = np.bincount(fs.y, minlength=n_labels)
    train_counts = np.bincount(fs.y[in_train], minlength=n_labels)
    needy = np.nonzero((total >= 2) & (train_counts == 0))[0]
    if needy.size == 0:
        return
    train_order = np.nonzero(in_train)[0]
    for lab in needy:
        # first test vector of the missing label
        cand = np.nonzero((fs.y == lab) & ~in_train)[0]
        take = cand[0]
        # first training vector whose label can spare one
        for j in train_order:
            if in_train[j] and train_counts[fs.y[j]] >= 2:
                in_train[j] = False
                in_train[take] = True
                train_counts[fs.y[j]] -= 1
                train_counts[lab] += 1
                break


def _resolve_target(counts: np.ndarray, target, extreme) -> int:
    present = counts[counts > 0]
    if isinstance(target, str):
        if target not in ("min", "max"):
            raise ParameterError(f"target must be a count, 'min' or 'max', got {target!r}")
        if present.size == 0:
            raise ParameterError("feature set is empty")
        return int(extreme(present))
    t = int(target)
    if t <= 0:
        raise ParameterError(f"target must be positive, got {target}")
    return t


def undersample(fs: FeatureSet, target="min", seed: int = 0) -> FeatureSet:
    """Randomly thin each spectral bin above ``target`` down to it.

    Bins at or below the target are untouched; surviving vectors keep their
    original order. Default target is the smallest non-empty bin count.
    """
    counts = np.bincount(fs.bins, minlength=len(ALL_BINS))
    t = _resolve_target(counts, target, np.min)
    rng = np.random.default_rng(seed)
    keep = np.ones(len(fs), dtype=bool)
    for b in range(len(ALL_BINS)):
        if counts[b] > t:
            idx_b = np.nonzero(fs.bins == b)[0]
            kept = rng.permutation(idx_b)[:t]
            keep[idx_b] = False
            keep[kept] = True
    return fs.subset(np.nonzero(keep)[0])


def oversample(fs: FeatureSet, target="max", seed: int = 0) -> FeatureSet:
    """Top up each spectral bin below ``target`` by resampling it with replacement.

    Duplicated vectors are appended after the originals (bins in ascending
    order). Default target is the largest bin count. A bin with no vectors
    cannot be raised and is an error.
    """
    counts = np.bincount(fs.bins, minlength=len(ALL_BINS))
    t = _resolve_target(counts, target, np.max)
    rng = np.random.default_rng(seed)
    extra = []
    for b in range(len(ALL_BINS)):
        if counts[b] >= t:
            continue
        if counts[b] == 0:
            raise ParameterError(
                f"bin {SpectralBin(b).label} has no vectors to duplicate")
        idx_b = np.nonzero(fs.bins == b)[0]
        extra.append(rng.choice(idx_b, size=t - counts[b], replace=True))
    if not extra:
        return fs
    dup = fs.subset(np.concatenate(extra))
    return FeatureSet(np.concatenate([fs.X, dup.X]),
                      np.concatenate([fs.y, dup.y]),
                      np.concatenate([fs.bins, dup.bins]),
                      np.concatenate([fs.page, dup.page]),
                      fs.labels, fs.pages, fs.width)
