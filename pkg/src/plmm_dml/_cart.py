"""Compiled kernels for CART regression trees and forests.

Trees are stored as flat arrays (``feature``, ``threshold``, ``left``,
``right``, ``value``); ``feature == -1`` marks a leaf. A row goes left when
``x[feature] <= threshold``.

Per-node feature subsampling draws from a splitmix64 stream seeded per tree,
so a tree depends only on its seed and bootstrap indices.
"""
import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True)
def _splitmix(state):
    state = state + _GOLDEN
    z = state
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    z = z ^ (z >> np.uint64(31))
    return state, z


@njit(cache=True)
def _best_split(x, y, idx, start, end, feat, min_gain_base):
    # Scan sorted values; strict '>' keeps the lowest threshold on ties.
    n = end - start
    vals = np.empty(n)
    ys = np.empty(n)
    for i in range(n):
        vals[i] = x[idx[start + i], feat]
        ys[i] = y[idx[start + i]]
    order = np.argsort(vals, kind="mergesort")
    total = 0.0
    for i in range(n):
        total += ys[i]
    best = min_gain_base
    best_thr = np.nan
    left_sum = 0.0
    for i in range(1, n):
        left_sum += ys[order[i - 1]]
        lo = vals[order[i - 1]]
        hi = vals[order[i]]
        if hi <= lo:
            continue
        right_sum = total - left_sum
        crit = left_sum * left_sum / i + right_sum * right_sum / (n - i)
        if crit > best:
            best = crit
            thr = lo + 0.5 * (hi - lo)
            if thr >= hi:
                thr = lo
            best_thr = thr
    return best, best_thr


@njit(cache=True)
def build_tree(x, y, sample, mtry, min_node_size, seed,
               feature, threshold, left, right, value):
    """Grow one tree on rows ``sample`` of ``(x, y)``; return the node count."""
    v = x.shape[1]
    m = sample.shape[0]
    idx = sample.copy()
    state = np.uint64(seed)
    feats = np.empty(v, dtype=np.int64)
    chosen = np.empty(mtry, dtype=np.int64)

    stack_start = np.empty(m + 1, dtype=np.int64)
    stack_end = np.empty(m + 1, dtype=np.int64)
    stack_node = np.empty(m + 1, dtype=np.int64)
    sp = 0
    stack_start[0] = 0
    stack_end[0] = m
    stack_node[0] = 0
    sp = 1
    n_nodes = 1

    while sp > 0:
        sp -= 1
        start = stack_start[sp]
        end = stack_end[sp]
        node = stack_node[sp]
        n = end - start

        s = 0.0
        ymin = np.inf
        ymax = -np.inf
        for i in range(start, end):
            yi = y[idx[i]]
            s += yi
            if yi < ymin:
                ymin = yi
            if yi > ymax:
                ymax = yi
        value[node] = s / n
        feature[node] = -1
        left[node] = -1
        right[node] = -1
        if n <= min_node_size or ymax <= ymin:
            continue

        # partial Fisher-Yates draw of mtry distinct features
        for j in range(v):
            feats[j] = j
        for j in range(mtry):
            state, r = _splitmix(state)
            u = (r >> np.uint64(11)) * (1.0 / 9007199254740992.0)
            pick = j + int(u * (v - j))
            if pick >= v:
                pick = v - 1
            tmp = feats[j]
            feats[j] = feats[pick]
            feats[pick] = tmp
            chosen[j] = feats[j]
        chosen_sorted = np.sort(chosen)

        base = s * s / n
        best = base
        best_feat = -1
        best_thr = 0.0
        for j in range(mtry):
            f = chosen_sorted[j]
            crit, thr = _best_split(x, y, idx, start, end, f, best)
            if crit > best:
                best = crit
                best_feat = f
                best_thr = thr
        if best_feat < 0:
            continue

        # partition idx[start:end] by x[:, best_feat] <= best_thr
        lo = start
        hi = end - 1
        while lo <= hi:
            if x[idx[lo], best_feat] <= best_thr:
                lo += 1
            else:
                tmp = idx[lo]
                idx[lo] = idx[hi]
                idx[hi] = tmp
                hi -= 1
        mid = lo
        if mid == start or mid == end:
            continue

        feature[node] = best_feat
        threshold[node] = best_thr
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        left[node] = lnode
        right[node] = rnode
        stack_start[sp] = mid
        stack_end[sp] = end
        stack_node[sp] = rnode
        sp += 1
        stack_start[sp] = start
        stack_end[sp] = mid
        stack_node[sp] = lnode
        sp += 1
    return n_nodes


@njit(cache=True)
def build_forest(x, y, samples, seeds, mtry, min_node_size):
    n_trees, m = samples.shape
    max_nodes = 2 * m - 1
    feature = np.empty((n_trees, max_nodes), dtype=np.int64)
    threshold = np.zeros((n_trees, max_nodes))
    left = np.empty((n_trees, max_nodes), dtype=np.int64)
    right = np.empty((n_trees, max_nodes), dtype=np.int64)
    value = np.zeros((n_trees, max_nodes))
    counts = np.empty(n_trees, dtype=np.int64)
    for t in range(n_trees):
        counts[t] = build_tree(
            x, y, samples[t], mtry, min_node_size, seeds[t],
            feature[t], threshold[t], left[t], right[t], value[t],
        )
    return feature, threshold, left, right, value, counts


@njit(cache=True)
def predict_forest(x, feature, threshold, left, right, value):
    n = x.shape[0]
    n_trees = feature.shape[0]
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for t in range(n_trees):
            node = 0
            while feature[t, node] >= 0:
                if x[i, feature[t, node]] <= threshold[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            acc += value[t, node]
        out[i] = acc / n_trees
    return out
