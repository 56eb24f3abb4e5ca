"""Random-forest classifier built from scratch.

Gini-criterion trees grown on bootstrap resamples with per-node feature
subsampling; the committee prediction averages each tree's leaf class
frequencies (soft voting) and breaks argmax ties toward the lowest label
index. Training is sequential and seeded per tree, so a model is a pure
function of (data, hyperparameters, seed) regardless of thread count.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from . import _forest_kernel as _k
from .errors import ModelFormatError, ParameterError
from .preprocess import FeatureSet, FeatureVector
from .rng import derive

MODEL_FORMAT = "nkclass-forest"
MODEL_VERSION = 1

_UNBOUNDED_DEPTH = 2**31 - 1


@dataclass(frozen=True)
class Hyperparams:
    """Forest training knobs; defaults mirror the common library defaults."""
    n_trees: int = 100
    max_depth: Optional[int] = None
    max_features: Optional[int] = None   # None -> floor(sqrt(n_features))
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ParameterError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.max_depth is not None and self.max_depth < 0:
            raise ParameterError(f"max_depth must be >= 0, got {self.max_depth}")
        if self.min_samples_split < 2:
            raise ParameterError("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise ParameterError("min_samples_leaf must be >= 1")

    def resolve_max_features(self, n_features: int) -> int:
        mf = self.max_features
        if mf is None:
            mf = int(math.isqrt(n_features))
        if not 1 <= mf <= n_features:
            raise ParameterError(
                f"max_features must be in [1, {n_features}], got {mf}")
        return mf


@dataclass(frozen=True)
class Internal:
    feature_index: int
    threshold: float
    left: "TreeNode"
    right: "TreeNode"


@dataclass(frozen=True)
class Leaf:
    class_counts: dict  # label index -> count, positive total


TreeNode = Union[Internal, Leaf]


class _TreeArrays(NamedTuple):
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_ptr: np.ndarray
    leaf_len: np.ndarray
    leaf_classes: np.ndarray
    leaf_counts: np.ndarray


@dataclass
class ForestModel:
    trees: list            # list[_TreeArrays]
    label_table: tuple
    feature_width: int
    hyperparams: Hyperparams

    @property
    def n_features(self) -> int:
        return 3 * self.feature_width

    def root(self, t: int) -> TreeNode:
        return _to_node_view(self.trees[t], 0)


def _to_node_view(ta: _TreeArrays, node: int) -> TreeNode:
    if ta.feature[node] < 0:
        p = int(ta.leaf_ptr[node])
        counts = {int(ta.leaf_classes[p + j]): int(ta.leaf_counts[p + j])
                  for j in range(int(ta.leaf_len[node]))}
        return Leaf(class_counts=counts)
    return Internal(feature_index=int(ta.feature[node]),
                    threshold=float(ta.threshold[node]),
                    left=_to_node_view(ta, int(ta.left[node])),
                    right=_to_node_view(ta, int(ta.right[node])))


def gini(class_counts) -> float:
    """Gini impurity 1 - sum((count_c / N)^2) of a count vector or mapping."""
    if isinstance(class_counts, dict):
        counts = np.asarray(list(class_counts.values()), dtype=np.float64)
    else:
        counts = np.asarray(class_counts, dtype=np.float64)
    if counts.size and counts.min() < 0:
        raise ParameterError("class counts must be nonnegative")
    total = counts.sum()
    if total <= 0:
        raise ParameterError("class counts must have a positive total")
    p = counts / total
    return float(1.0 - np.sum(p * p))


def best_split(X, y, candidate_features: Optional[Sequence[int]] = None,
               min_samples_leaf: int = 1):
    """Best (feature_index, threshold, impurity_decrease) over candidate features.

    Thresholds are midpoints between consecutive distinct sorted values of a
    feature; the split maximizing the weighted Gini decrease wins, ties
    resolved toward the lowest feature index then lowest threshold. Returns
    None when no candidate feature admits any threshold (all constant within
    the sample); a returned best split may have zero decrease.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ParameterError("X must be a non-empty 2-D array")
    y = np.ascontiguousarray(y, dtype=np.int32)
    if y.shape[0] != X.shape[0]:
        raise ParameterError("X and y lengths differ")
    if candidate_features is None:
        feats = np.arange(X.shape[1], dtype=np.int64)
    else:
        feats = np.unique(np.asarray(candidate_features, dtype=np.int64))
        if feats.size == 0 or feats.min() < 0 or feats.max() >= X.shape[1]:
            raise ParameterError(f"candidate features out of range: {candidate_features}")
    n_classes = int(y.max()) + 1 if y.size else 0
    f, thr, dec = _k.best_split_single(X, y, feats, n_classes, min_samples_leaf)
    if f < 0:
        return None
    return int(f), float(thr), max(float(dec), 0.0)


def grow_tree(X, y, h: Hyperparams, rng_seed: int, n_labels: Optional[int] = None) -> TreeNode:
    """Grow a single decision tree on the given sample; returns the root node view.

    ``rng_seed`` feeds the per-node feature-subset draws; the caller is
    responsible for any bootstrap resampling of (X, y).
    """
    ta = _grow_arrays(X, y, h, rng_seed, n_labels)
    return _to_node_view(ta, 0)


def _grow_arrays(X, y, h: Hyperparams, rng_seed: int,
                 n_labels: Optional[int] = None) -> _TreeArrays:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.int32)
    if X.shape[0] == 0:
        raise ParameterError("cannot grow a tree on an empty sample")
    if n_labels is None:
        n_labels = int(y.max()) + 1
    mf = h.resolve_max_features(X.shape[1])
    depth = _UNBOUNDED_DEPTH if h.max_depth is None else h.max_depth
    idx = np.arange(X.shape[0], dtype=np.int64)
    out = _k.grow_tree(X, y, idx, n_labels, depth, mf,
                       h.min_samples_split, h.min_samples_leaf,
                       np.uint64(rng_seed))
    return _TreeArrays(*out)


def fit(train: FeatureSet, h: Hyperparams) -> ForestModel:
    """Train a forest of h.n_trees trees on the feature set.

    Tree t is grown on a bootstrap resample drawn from a stream seeded by
    (h.seed, t); results are bit-identical for identical inputs.
    """
    n = len(train)
    if n < 2:
        raise ParameterError("need at least 2 training vectors")
    if np.unique(train.y).size < 2:
        raise ParameterError("training data has a single label; refusing to fit")
    X = train.X
    y = train.y
    n_labels = len(train.labels)
    mf = h.resolve_max_features(X.shape[1])
    depth = _UNBOUNDED_DEPTH if h.max_depth is None else h.max_depth
    trees = []
    for t in range(h.n_trees):
        if h.bootstrap:
            idx = _k.bootstrap_indices(n, np.uint64(derive(h.seed, t, "bootstrap")))
        else:
            idx = np.arange(n, dtype=np.int64)
        out = _k.grow_tree(X, y, idx, n_labels, depth, mf,
                           h.min_samples_split, h.min_samples_leaf,
                           np.uint64(derive(h.seed, t, "grow")))
        trees.append(_TreeArrays(*out))
    return ForestModel(trees=trees, label_table=train.labels,
                       feature_width=train.width, hyperparams=h)


def _as_matrix(model: ForestModel, x) -> np.ndarray:
    if isinstance(x, FeatureVector):
        if x.width != model.feature_width:
            raise ParameterError(
                f"model expects {model.feature_width} point(s) per vector, "
                f"got {x.width}")
        return x.flat().reshape(1, -1)
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.shape[1] != model.n_features:
        raise ParameterError(
            f"model expects {model.n_features} features, got {arr.shape[1]}")
    return arr


def predict_proba_batch(model: ForestModel, X: np.ndarray) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    out = np.zeros((X.shape[0], len(model.label_table)))
    for ta in model.trees:
        _k.tree_accumulate_proba(X, ta.feature, ta.threshold, ta.left, ta.right,
                                 ta.leaf_ptr, ta.leaf_len, ta.leaf_classes,
                                 ta.leaf_counts, out)
    out /= len(model.trees)
    return out


def predict_proba(model: ForestModel, x) -> np.ndarray:
    """Committee distribution over model.label_table for one input."""
    return predict_proba_batch(model, _as_matrix(model, x))[0]


def predict_batch(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """Predicted label codes; argmax ties go to the lowest label index."""
    return np.argmax(predict_proba_batch(model, X), axis=1).astype(np.int32)


def predict(model: ForestModel, x) -> str:
    return model.label_table[int(np.argmax(predict_proba(model, x)))]


def save_model(model: ForestModel) -> bytes:
    """Serialize to a versioned, self-describing JSON document."""
    trees = []
    for ta in model.trees:
        nodes = []
        for i in range(ta.feature.shape[0]):
            if ta.feature[i] < 0:
                p = int(ta.leaf_ptr[i])
                counts = [[int(ta.leaf_classes[p + j]), int(ta.leaf_counts[p + j])]
                          for j in range(int(ta.leaf_len[i]))]
                nodes.append({"type": "leaf", "counts": counts})
            else:
                nodes.append({"type": "internal",
                              "feature": int(ta.feature[i]),
                              "threshold": float(ta.threshold[i]),
                              "left": int(ta.left[i]),
                              "right": int(ta.right[i])})
        trees.append({"nodes": nodes})
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "hyperparams": asdict(model.hyperparams),
        "label_table": list(model.label_table),
        "feature_width": model.feature_width,
        "trees": trees,
    }
    return json.dumps(doc, separators=(",", ":")).encode("utf-8")


def load_model(data: bytes) -> ForestModel:
    """Parse and validate a serialized model; raises ModelFormatError on any defect."""
    if not data:
        raise ModelFormatError("empty model data")
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelFormatError(f"not a valid model document: {e}")
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError("unrecognized model format")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version: {doc.get('version')!r}")
    try:
        labels = tuple(str(s) for s in doc["label_table"])
        width = int(doc["feature_width"])
        hp = Hyperparams(**doc["hyperparams"])
        raw_trees = doc["trees"]
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(f"malformed model document: {e}")
    if width not in (1, 2, 3):
        raise ModelFormatError(f"invalid feature_width: {width}")
    if not isinstance(raw_trees, list) or not raw_trees:
        raise ModelFormatError("model has no trees")
    trees = [_tree_from_doc(t, len(labels), 3 * width, i)
             for i, t in enumerate(raw_trees)]
    return ForestModel(trees=trees, label_table=labels, feature_width=width,
                       hyperparams=hp)


def _tree_from_doc(tree_doc, n_labels: int, n_features: int, t: int) -> _TreeArrays:
    nodes = tree_doc.get("nodes") if isinstance(tree_doc, dict) else None
    if not isinstance(nodes, list) or not nodes:
        raise ModelFormatError(f"tree {t}: missing nodes")
    n = len(nodes)
    feature = np.full(n, -1, np.int32)
    threshold = np.zeros(n, np.float64)
    left = np.full(n, -1, np.int32)
    right = np.full(n, -1, np.int32)
    leaf_ptr = np.full(n, -1, np.int32)
    leaf_len = np.zeros(n, np.int32)
    lcls: list[int] = []
    lcnt: list[int] = []
    for i, nd in enumerate(nodes):
        if not isinstance(nd, dict):
            raise ModelFormatError(f"tree {t} node {i}: not an object")
        kind = nd.get("type")
        if kind == "leaf":
            counts = nd.get("counts")
            if (not isinstance(counts, list) or not counts
                    or not all(isinstance(c, list) and len(c) == 2 for c in counts)):
                raise ModelFormatError(f"tree {t} node {i}: bad leaf counts")
            leaf_ptr[i] = len(lcls)
            leaf_len[i] = len(counts)
            for cls, cnt in counts:
                if not (isinstance(cls, int) and 0 <= cls < n_labels):
                    raise ModelFormatError(f"tree {t} node {i}: class {cls!r} out of range")
                if not (isinstance(cnt, int) and cnt > 0):
                    raise ModelFormatError(f"tree {t} node {i}: count {cnt!r} invalid")
                lcls.append(cls)
                lcnt.append(cnt)
        elif kind == "internal":
            try:
                f = int(nd["feature"])
                thr = float(nd["threshold"])
                lo = int(nd["left"])
                hi = int(nd["right"])
            except (KeyError, TypeError, ValueError) as e:
                raise ModelFormatError(f"tree {t} node {i}: {e}")
            if not 0 <= f < n_features:
                raise ModelFormatError(f"tree {t} node {i}: feature {f} out of range")
            if not (0 <= lo < n and 0 <= hi < n) or lo == i or hi == i:
                raise ModelFormatError(f"tree {t} node {i}: child index out of range")
            feature[i] = f
            threshold[i] = thr
            left[i] = lo
            right[i] = hi
        else:
            raise ModelFormatError(f"tree {t} node {i}: unknown type {kind!r}")
    _check_tree_shape(feature, left, right, t)
    return _TreeArrays(feature, threshold, left, right, leaf_ptr, leaf_len,
                       np.asarray(lcls, np.int32), np.asarray(lcnt, np.int32))


def _check_tree_shape(feature, left, right, t: int):
    """Every node reachable from the root exactly once (a proper tree)."""
    n = feature.shape[0]
    seen = np.zeros(n, bool)
    stack = [0]
    while stack:
        i = stack.pop()
        if seen[i]:
            raise ModelFormatError(f"tree {t}: node {i} reached twice (cycle or DAG)")
        seen[i] = True
        if feature[i] >= 0:
            stack.append(int(left[i]))
            stack.append(int(right[i]))
    if not seen.all():
        raise ModelFormatError(f"tree {t}: {int((~seen).sum())} unreachable node(s)")
