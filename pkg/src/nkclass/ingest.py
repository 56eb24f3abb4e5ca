"""Parsing, validation, and cleaning of spectral databases.

Records come from a "virtual bookshelf" layout: a shelf groups compounds by
category, a book is the compound name (the classification target), and a
page is one literature source tabulating (wavelength, n, k) for that
compound. Two on-disk forms are supported:

* compiled CSV: header ``shelf,book,page,wavelength_um,n,k``, one record per
  row, empty cells meaning "missing";
* page tree: ``<root>/<shelf>/<book>/<page>.csv`` with headerless
  ``wavelength_um,n[,k]`` rows.

Datasets are immutable after construction (arrays are write-protected) and
record order is a deterministic function of the input bytes.
"""

from __future__ import annotations

import csv
import gzip
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np

from .errors import DataError
from .spectral import ALL_BINS, SpectralBin, bin_indices

logger = logging.getLogger(__name__)

COMPILED_HEADER = ("shelf", "book", "page", "wavelength_um", "n", "k")

# sanity bounds for a refractive index; values outside reject the row
N_MAX = 20.0


class CompoundId(NamedTuple):
    shelf: str
    book: str
    page: str


class SpectralRecord(NamedTuple):
    compound: CompoundId
    wavelength_um: float
    n: Optional[float]
    k: Optional[float]
    synthetic: bool = False


class Dataset:
    """Immutable collection of spectral records with a label table.

    Columns are stored as parallel numpy arrays; missing n/k are NaN
    internally and surface as None on the record view. ``labels`` lists the
    distinct book values in order of first appearance.
    """

    __slots__ = ("pages", "page_index", "wavelength_um", "n", "k", "synthetic",
                 "labels", "page_labels", "parse_rejects")

    def __init__(self, pages, page_index, wavelength_um, n, k, synthetic,
                 parse_rejects=()):
        self.pages = tuple(pages)
        self.page_index = _frozen(page_index, np.int32)
        self.wavelength_um = _frozen(wavelength_um, np.float64)
        self.n = _frozen(n, np.float64)
        self.k = _frozen(k, np.float64)
        self.synthetic = _frozen(synthetic, bool)
        self.parse_rejects = tuple(parse_rejects)
        # label index per page, and the deduplicated label table
        labels: list[str] = []
        seen: dict[str, int] = {}
        page_labels = np.empty(len(self.pages), dtype=np.int32)
        used = np.zeros(len(self.pages), dtype=bool)
        used[self.page_index] = True
        for i, cid in enumerate(self.pages):
            if not used[i]:
                page_labels[i] = -1
                continue
            if cid.book not in seen:
                seen[cid.book] = len(labels)
                labels.append(cid.book)
            page_labels[i] = seen[cid.book]
        self.labels = tuple(labels)
        self.page_labels = _frozen(page_labels, np.int32)

    def __len__(self) -> int:
        return int(self.wavelength_um.shape[0])

    def record(self, i: int) -> SpectralRecord:
        n = float(self.n[i])
        k = float(self.k[i])
        return SpectralRecord(
            compound=self.pages[self.page_index[i]],
            wavelength_um=float(self.wavelength_um[i]),
            n=None if math.isnan(n) else n,
            k=None if math.isnan(k) else k,
            synthetic=bool(self.synthetic[i]),
        )

    def __iter__(self) -> Iterator[SpectralRecord]:
        for i in range(len(self)):
            yield self.record(i)

    @property
    def label_codes(self) -> np.ndarray:
        """Label index per record (into ``labels``)."""
        return self.page_labels[self.page_index]

    @property
    def missing_n_count(self) -> int:
        return int(np.isnan(self.n).sum())

    @property
    def missing_k_count(self) -> int:
        return int(np.isnan(self.k).sum())

    @classmethod
    def from_records(cls, records: Sequence[SpectralRecord]) -> "Dataset":
        pages: list[CompoundId] = []
        seen: dict[CompoundId, int] = {}
        page_index = np.empty(len(records), dtype=np.int32)
        lam = np.empty(len(records))
        n = np.empty(len(records))
        k = np.empty(len(records))
        syn = np.zeros(len(records), dtype=bool)
        for i, r in enumerate(records):
            if r.compound not in seen:
                seen[r.compound] = len(pages)
                pages.append(r.compound)
            page_index[i] = seen[r.compound]
            lam[i] = r.wavelength_um
            n[i] = math.nan if r.n is None else r.n
            k[i] = math.nan if r.k is None else r.k
            syn[i] = r.synthetic
        return cls(pages, page_index, lam, n, k, syn)

    def subset(self, indices: np.ndarray) -> "Dataset":
        """New Dataset with the selected records (order preserved), pages compacted."""
        indices = np.asarray(indices)
        old_pi = self.page_index[indices]
        remap = -np.ones(len(self.pages), dtype=np.int32)
        new_pages: list[CompoundId] = []
        new_pi = np.empty(old_pi.shape[0], dtype=np.int32)
        for pos, p in enumerate(old_pi):
            if remap[p] < 0:
                remap[p] = len(new_pages)
                new_pages.append(self.pages[p])
            new_pi[pos] = remap[p]
        return Dataset(new_pages, new_pi, self.wavelength_um[indices],
                       self.n[indices], self.k[indices], self.synthetic[indices],
                       self.parse_rejects)

    def concat(self, other: "Dataset") -> "Dataset":
        """Append another dataset's records after this one's."""
        pages = list(self.pages)
        seen = {cid: i for i, cid in enumerate(pages)}
        other_map = np.empty(len(other.pages), dtype=np.int32)
        for i, cid in enumerate(other.pages):
            if cid not in seen:
                seen[cid] = len(pages)
                pages.append(cid)
            other_map[i] = seen[cid]
        page_index = np.concatenate([self.page_index, other_map[other.page_index]])
        return Dataset(
            pages, page_index,
            np.concatenate([self.wavelength_um, other.wavelength_um]),
            np.concatenate([self.n, other.n]),
            np.concatenate([self.k, other.k]),
            np.concatenate([self.synthetic, other.synthetic]),
            self.parse_rejects + other.parse_rejects,
        )

    def records_equal(self, other: "Dataset") -> bool:
        if len(self) != len(other):
            return False
        return all(a == b for a, b in zip(self, other))


def _frozen(arr, dtype) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class CleaningPolicy:
    """How missing values are resolved.

    A record with missing n is either dropped (default) or causes the whole
    dataset to be rejected; there is no keep-as-missing path. Missing k is
    imputed as 0.0 (transparency) by default, otherwise dropped.
    """
    drop_missing_n: bool = True
    impute_k_zero: bool = True


def _parse_value(cell: str, line_no: int, what: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise _RowReject(line_no, f"non-numeric {what} {cell!r}")
    if not math.isfinite(value):
        raise _RowReject(line_no, f"non-finite {what} {cell!r}")
    return value


class _RowReject(Exception):
    def __init__(self, where, reason):
        self.where = where
        self.reason = reason


def _validate_row_values(lam_cell: str, n_cell: str, k_cell: str, line_no: int):
    if lam_cell == "":
        raise _RowReject(line_no, "missing wavelength")
    lam = _parse_value(lam_cell, line_no, "wavelength")
    if lam <= 0:
        raise _RowReject(line_no, f"non-positive wavelength {lam!r}")
    if n_cell == "":
        n = math.nan
    else:
        n = _parse_value(n_cell, line_no, "n")
        if n < 0 or n >= N_MAX:
            raise _RowReject(line_no, f"refractive index out of range: {n!r}")
    if k_cell == "":
        k = math.nan
    else:
        k = _parse_value(k_cell, line_no, "k")
        if k < 0:
            raise _RowReject(line_no, f"negative extinction coefficient: {k!r}")
    return lam, n, k


class _Builder:
    """Accumulates validated rows into Dataset arrays."""

    def __init__(self):
        self.pages: list[CompoundId] = []
        self.seen: dict[CompoundId, int] = {}
        self.page_index: list[int] = []
        self.lam: list[float] = []
        self.n: list[float] = []
        self.k: list[float] = []
        self.rejects: list[tuple[str, str]] = []

    def add(self, cid: CompoundId, lam: float, n: float, k: float):
        idx = self.seen.get(cid)
        if idx is None:
            idx = len(self.pages)
            self.seen[cid] = idx
            self.pages.append(cid)
        self.page_index.append(idx)
        self.lam.append(lam)
        self.n.append(n)
        self.k.append(k)

    def reject(self, where, reason):
        self.rejects.append((str(where), reason))

    def finish(self) -> Dataset:
        if self.rejects:
            logger.warning("rejected %d rows during parsing (first: %s: %s)",
                           len(self.rejects), *self.rejects[0])
        m = len(self.lam)
        return Dataset(self.pages, np.array(self.page_index, dtype=np.int32),
                       np.array(self.lam), np.array(self.n), np.array(self.k),
                       np.zeros(m, dtype=bool), self.rejects)


def parse_compiled_csv(source) -> Dataset:
    """Parse a compiled-CSV byte stream (or bytes, or text stream) into a Dataset.

    A malformed header rejects the whole file; malformed rows are skipped
    and recorded in ``Dataset.parse_rejects`` with their line number.
    """
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    if isinstance(source, io.TextIOBase):
        text = source
    else:
        text = io.TextIOWrapper(source, encoding="utf-8", newline="")
    reader = csv.reader(text)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty file: missing header")
    if tuple(cell.strip().lower() for cell in header) != COMPILED_HEADER:
        raise DataError(f"malformed header: {header!r}")
    b = _Builder()
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            if len(row) != 6:
                raise _RowReject(line_no, f"expected 6 fields, got {len(row)}")
            shelf, book, page = (row[0].strip(), row[1].strip(), row[2].strip())
            if not book:
                raise _RowReject(line_no, "empty book (compound) field")
            lam, n, k = _validate_row_values(row[3].strip(), row[4].strip(),
                                             row[5].strip(), line_no)
        except _RowReject as r:
            b.reject(f"line {r.where}", r.reason)
            continue
        b.add(CompoundId(shelf, book, page), lam, n, k)
    return b.finish()


def parse_page_tree(root) -> Dataset:
    """Parse a ``<root>/<shelf>/<book>/<page>.csv`` directory tree.

    Files are visited in sorted path order so the result is deterministic.
    Unreadable files are skipped (counted in ``parse_rejects``); a duplicate
    (shelf, book, page) triple rejects the whole tree.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"not a directory: {root}")
    files = sorted(root.glob("*/*/*.csv"))
    b = _Builder()
    seen_pages: set[CompoundId] = set()
    for path in files:
        page = path.stem
        book = path.parent.name
        shelf = path.parent.parent.name
        cid = CompoundId(shelf, book, page)
        if cid in seen_pages:
            raise DataError(f"duplicate page path: {path}")
        seen_pages.add(cid)
        try:
            raw = path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as e:
            b.reject(path, f"unreadable file: {e}")
            continue
        for line_no, row in enumerate(csv.reader(io.StringIO(raw, newline="")), start=1):
            if not row:
                continue
            try:
                if len(row) == 2:
                    lam_cell, n_cell, k_cell = row[0], row[1], ""
                elif len(row) == 3:
                    lam_cell, n_cell, k_cell = row
                else:
                    raise _RowReject(line_no, f"expected 2 or 3 fields, got {len(row)}")
                lam, n, k = _validate_row_values(lam_cell.strip(), n_cell.strip(),
                                                 k_cell.strip(), line_no)
            except _RowReject as r:
                b.reject(f"{path}:{r.where}", r.reason)
                continue
            b.add(cid, lam, n, k)
    return b.finish()


def clean(d: Dataset, policy: CleaningPolicy = CleaningPolicy()) -> Dataset:
    """Resolve missing values: the result has no missing n and no missing k.

    Idempotent; never mutates the input.
    """
    missing_n = np.isnan(d.n)
    if missing_n.any() and not policy.drop_missing_n:
        raise DataError(f"dataset has {int(missing_n.sum())} records with missing n "
                        "and the policy forbids dropping them")
    keep = ~missing_n
    if not policy.impute_k_zero:
        keep &= ~np.isnan(d.k)
    out = d.subset(np.nonzero(keep)[0])
    if policy.impute_k_zero:
        k = out.k.copy()
        k[np.isnan(k)] = 0.0
        out = Dataset(out.pages, out.page_index, out.wavelength_um, out.n, k,
                      out.synthetic, out.parse_rejects)
    return out


@dataclass
class Stats:
    record_count: int
    compound_counts: dict = field(default_factory=dict)   # book -> count
    bin_counts: dict = field(default_factory=dict)        # SpectralBin -> count
    hist: np.ndarray = None
    lam_edges: np.ndarray = None
    n_edges: np.ndarray = None


def dataset_stats(d: Dataset, lam_edges=None, n_edges=None) -> Stats:
    """Per-compound counts, per-bin counts, and a 2-D (wavelength, n) histogram.

    Requires a cleaned dataset (no missing n).
    """
    if np.isnan(d.n).any():
        raise DataError("dataset_stats requires a cleaned dataset (missing n present)")
    if lam_edges is None:
        lam_edges = np.geomspace(max(d.wavelength_um.min(), 1e-3) if len(d) else 0.2,
                                 d.wavelength_um.max() if len(d) else 25.0, 51)
    if n_edges is None:
        hi = float(d.n.max()) if len(d) else 2.5
        n_edges = np.linspace(0.0, max(hi, 2.5), 51)
    codes = d.label_codes
    compound_counts = {lab: int((codes == i).sum()) for i, lab in enumerate(d.labels)}
    bins = bin_indices(d.wavelength_um) if len(d) else np.empty(0, dtype=np.uint8)
    bin_counts = {b: int((bins == int(b)).sum()) for b in ALL_BINS}
    hist, le, ne = np.histogram2d(d.wavelength_um, d.n, bins=[lam_edges, n_edges])
    return Stats(record_count=len(d), compound_counts=compound_counts,
                 bin_counts=bin_counts, hist=hist, lam_edges=le, n_edges=ne)


def _fmt(x: float) -> str:
    """Canonical float text: shortest repr that round-trips."""
    return repr(float(x))


def _cell(x: float) -> str:
    return "" if math.isnan(x) else _fmt(x)


def write_compiled_csv(d: Dataset, path) -> None:
    """Serialize to the compiled-CSV form (gzip if the path ends in .gz)."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wt", encoding="utf-8", newline="") as f:
        dump_compiled_csv(d, f)


def dump_compiled_csv(d: Dataset, stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(COMPILED_HEADER)
    for i in range(len(d)):
        cid = d.pages[d.page_index[i]]
        w.writerow([cid.shelf, cid.book, cid.page, _fmt(d.wavelength_um[i]),
                    _cell(d.n[i]), _cell(d.k[i])])


def export_tree(d: Dataset, root) -> None:
    """Write the dataset as a page tree (inverse of parse_page_tree).

    The synthetic flag is not represented on disk; round-trip equality holds
    for datasets of measured records.
    """
    root = Path(root)
    handles: dict[int, list[str]] = {}
    for i in range(len(d)):
        handles.setdefault(int(d.page_index[i]), []).append(
            ",".join([_fmt(d.wavelength_um[i]), _cell(d.n[i]), _cell(d.k[i])]))
    for pi, lines in handles.items():
        cid = d.pages[pi]
        for part in cid:
            if "/" in part or "\\" in part or part in ("", ".", ".."):
                raise DataError(f"page id not filesystem-safe: {cid}")
        dest = root / cid.shelf / cid.book
        dest.mkdir(parents=True, exist_ok=True)
        (dest / f"{cid.page}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_dataset(path) -> Dataset:
    """Read a compiled CSV (optionally gzipped) from disk."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        return parse_compiled_csv(f)
