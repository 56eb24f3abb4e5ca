"""Numba kernels for decision-tree growth and forest prediction.

Trees are grown iteratively (explicit stack, left child first) over an index
array partitioned in place, so node numbering and RNG consumption are fixed
regardless of environment. The RNG is an explicit-state splitmix64 stream:
results cannot drift with library versions or thread counts.

Split scoring uses integer sums of squared class counts: for a candidate
partition (L, R) of a node with counts K, the weighted Gini decrease is
(S - P) / m with S = sum(L^2)/|L| + sum(R^2)/|R| and P = sum(K^2)/m, so
maximizing S maximizes the decrease. Thresholds are midpoints of consecutive
distinct sorted values (clamped to the lower value if rounding would reach
the upper one). Ties go to the lowest feature index, then lowest threshold.

A node draws a fresh uniform subset of max_features features and splits on
the best valid threshold among them, even at zero decrease (otherwise
symmetric layouts like XOR would never separate). If every drawn feature is
constant within the node, the node becomes a leaf with its mixed class
counts; this is what makes the forest sensitive to class imbalance inside
the k = 0 slab, where the extinction feature carries no information.
"""

import numpy as np
from numba import njit

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@njit(inline="always")
def _mix_fin(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(inline="always")
def _next_u64(state):
    state = state + _GAMMA
    return state, _mix_fin(state)


@njit(inline="always")
def _rand_below(state, bound):
    state, v = _next_u64(state)
    return state, np.int64(v % np.uint64(bound))


@njit(cache=True)
def bootstrap_indices(n, seed):
    idx = np.empty(n, np.int64)
    state = np.uint64(seed)
    for i in range(n):
        state, r = _rand_below(state, n)
        idx[i] = r
    return idx


@njit(cache=True)
def _scan_feature(X, y, idx, s, e, f, counts, sum_k2, min_leaf,
                  cl, cr, vals, labs, svals, slabs):
    """Best threshold on one feature within idx[s:e).

    Returns (valid, threshold, S). valid is False when the feature is
    constant in the node (no threshold exists).
    """
    m = e - s
    for i in range(m):
        vals[i] = X[idx[s + i], f]
    order = np.argsort(vals[:m])
    for i in range(m):
        svals[i] = vals[order[i]]
        slabs[i] = labs[order[i]]
    for c in range(cl.shape[0]):
        cl[c] = 0
        cr[c] = counts[c]
    sl = np.int64(0)
    sr = sum_k2
    best_thr = 0.0
    best_s = -1.0
    valid = False
    for i in range(m - 1):
        lab = slabs[i]
        sl += 2 * cl[lab] + 1
        cl[lab] += 1
        sr -= 2 * cr[lab] - 1
        cr[lab] -= 1
        if svals[i + 1] > svals[i]:
            nl = i + 1
            nr = m - nl
            if nl >= min_leaf and nr >= min_leaf:
                score = sl / nl + sr / nr
                if score > best_s:
                    thr = 0.5 * (svals[i] + svals[i + 1])
                    if not thr < svals[i + 1]:
                        thr = svals[i]
                    best_s = score
                    best_thr = thr
                    valid = True
    return valid, best_thr, best_s


@njit(inline="always")
def _better(score, f, thr, best_s, best_f, best_thr):
    if score > best_s:
        return True
    if score == best_s:
        if f < best_f:
            return True
        if f == best_f and thr < best_thr:
            return True
    return False


@njit(cache=True)
def grow_tree(X, y, idx, n_classes, max_depth, max_features,
              min_samples_split, min_samples_leaf, seed):
    """Grow one tree on X[idx]; returns packed node and leaf-count arrays.

    Node arrays: feature (-1 for leaves), threshold, left, right child ids,
    and per-leaf slices [leaf_ptr, leaf_ptr + leaf_len) into (leaf_classes,
    leaf_counts), listing present classes in ascending order.
    """
    n = idx.shape[0]
    n_feat = X.shape[1]
    cap = 2 * n + 1
    feat = np.empty(cap, np.int32)
    thr = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    leaf_ptr = np.full(cap, -1, np.int32)
    leaf_len = np.zeros(cap, np.int32)
    lcls = np.empty(n + 1, np.int32)
    lcnt = np.empty(n + 1, np.int32)
    lpos = 0
    n_nodes = 0

    counts = np.zeros(n_classes, np.int64)
    cl = np.zeros(n_classes, np.int64)
    cr = np.zeros(n_classes, np.int64)
    vals = np.empty(n, np.float64)
    labs = np.empty(n, np.int32)
    svals = np.empty(n, np.float64)
    slabs = np.empty(n, np.int32)
    tmp = np.empty(n, np.int64)
    perm = np.empty(n_feat, np.int32)

    stack = np.empty((n + 2, 5), np.int64)
    stack[0, 0] = 0
    stack[0, 1] = n
    stack[0, 2] = 0
    stack[0, 3] = -1
    stack[0, 4] = 0
    sp = 1
    state = np.uint64(seed)

    while sp > 0:
        sp -= 1
        s = stack[sp, 0]
        e = stack[sp, 1]
        depth = stack[sp, 2]
        parent = stack[sp, 3]
        side = stack[sp, 4]
        node = n_nodes
        n_nodes += 1
        if parent >= 0:
            if side == 0:
                left[parent] = node
            else:
                right[parent] = node
        m = e - s
        for c in range(n_classes):
            counts[c] = 0
        for i in range(s, e):
            counts[y[idx[i]]] += 1
        distinct = 0
        sum_k2 = np.int64(0)
        for c in range(n_classes):
            if counts[c] > 0:
                distinct += 1
                sum_k2 += counts[c] * counts[c]

        best_f = np.int64(-1)
        best_thr = 0.0
        best_s = -1.0
        if (distinct > 1 and m >= min_samples_split and depth < max_depth
                and m >= 2 * min_samples_leaf):
            # fresh uniform subset of max_features features (partial shuffle)
            for j in range(n_feat):
                perm[j] = j
            for j in range(max_features):
                state, r = _rand_below(state, n_feat - j)
                k = j + r
                t = perm[j]
                perm[j] = perm[k]
                perm[k] = t
            for i in range(m):
                labs[i] = y[idx[s + i]]
            for j in range(max_features):
                f = perm[j]
                ok, f_thr, f_s = _scan_feature(X, y, idx, s, e, f, counts,
                                               sum_k2, min_samples_leaf,
                                               cl, cr, vals, labs, svals, slabs)
                if not ok:
                    continue
                if _better(f_s, f, f_thr, best_s, best_f, best_thr):
                    best_s = f_s
                    best_f = f
                    best_thr = f_thr

        if best_f < 0:
            leaf_ptr[node] = lpos
            nc = 0
            for c in range(n_classes):
                if counts[c] > 0:
                    lcls[lpos + nc] = c
                    lcnt[lpos + nc] = counts[c]
                    nc += 1
            leaf_len[node] = nc
            lpos += nc
            feat[node] = -1
            continue

        feat[node] = np.int32(best_f)
        thr[node] = best_thr
        # stable in-place partition of idx[s:e)
        nl = 0
        nr = 0
        for i in range(s, e):
            v = idx[i]
            if X[v, best_f] <= best_thr:
                idx[s + nl] = v
                nl += 1
            else:
                tmp[nr] = v
                nr += 1
        for j in range(nr):
            idx[s + nl + j] = tmp[j]
        # right pushed first so the left child is grown (and numbered) first
        stack[sp, 0] = s + nl
        stack[sp, 1] = e
        stack[sp, 2] = depth + 1
        stack[sp, 3] = node
        stack[sp, 4] = 1
        sp += 1
        stack[sp, 0] = s
        stack[sp, 1] = s + nl
        stack[sp, 2] = depth + 1
        stack[sp, 3] = node
        stack[sp, 4] = 0
        sp += 1

    return (feat[:n_nodes].copy(), thr[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), leaf_ptr[:n_nodes].copy(),
            leaf_len[:n_nodes].copy(), lcls[:lpos].copy(), lcnt[:lpos].copy())


@njit(cache=True)
def best_split_single(X, y, features, n_classes, min_samples_leaf):
    """Node scan over all samples and the given features (no budget, no RNG)."""
    n = X.shape[0]
    idx = np.arange(n)
    counts = np.zeros(n_classes, np.int64)
    labs = np.empty(n, np.int32)
    for i in range(n):
        counts[y[i]] += 1
        labs[i] = y[i]
    sum_k2 = np.int64(0)
    for c in range(n_classes):
        sum_k2 += counts[c] * counts[c]
    cl = np.zeros(n_classes, np.int64)
    cr = np.zeros(n_classes, np.int64)
    vals = np.empty(n, np.float64)
    svals = np.empty(n, np.float64)
    slabs = np.empty(n, np.int32)
    best_f = np.int64(-1)
    best_thr = 0.0
    best_s = -1.0
    for j in range(features.shape[0]):
        f = features[j]
        ok, f_thr, f_s = _scan_feature(X, y, idx, 0, n, f, counts, sum_k2,
                                       min_samples_leaf, cl, cr, vals, labs,
                                       svals, slabs)
        if not ok:
            continue
        if _better(f_s, f, f_thr, best_s, best_f, best_thr):
            best_s = f_s
            best_f = f
            best_thr = f_thr
    if best_f < 0:
        return np.int64(-1), 0.0, 0.0
    decrease = (best_s - sum_k2 / n) / n
    return best_f, best_thr, decrease


@njit(cache=True)
def tree_accumulate_proba(X, feat, thr, left, right, leaf_ptr, leaf_len,
                          lcls, lcnt, out):
    """Route each row to its leaf and add the leaf's class frequencies to out."""
    for i in range(X.shape[0]):
        node = 0
        while feat[node] >= 0:
            if X[i, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        p = leaf_ptr[node]
        total = 0.0
        for j in range(leaf_len[node]):
            total += lcnt[p + j]
        for j in range(leaf_len[node]):
            out[i, lcls[p + j]] += lcnt[p + j] / total
