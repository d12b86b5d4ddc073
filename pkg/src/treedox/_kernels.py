"""Numba kernels for extra-trees fitting and prediction.

Random source
-------------
All randomness in tree construction comes from xoshiro256** streams whose
256-bit states are expanded with splitmix64 from (seed, stream_id), one
stream per tree.  Stream derivation:

    state0 = seed + (stream_id + 1) * 0x9E3779B97F4A7C15   (mod 2^64)
    s[i]   = splitmix64 outputs i = 0..3 starting from state0

Uniform doubles are the top 53 bits of an output scaled by 2^-53; bounded
integers use the modulo reduction (bias is negligible for the feature
counts involved).  Because every tree owns an independent stream, the
ensemble is reproducible regardless of tree build order.

Per-node draw order (fixed): first the candidate features via partial
Fisher-Yates (one bounded-integer draw per candidate), then, for each
non-constant candidate in drawn order, its random cut values.  Constant
candidates consume no cut draws.

Tree storage
------------
Nodes of all trees live in flat arrays concatenated per ensemble with a
tree offset table.  Child links are tree-local indices.  Leaves store a
[lo, hi) slice into the tree's sample-index permutation; the leaf value
is the mean of the label rows in that slice, computed on demand (leaves
of fully-grown trees hold only a handful of samples).
"""

import numpy as np
from numba import njit

U64 = np.uint64
_GOLDEN = U64(0x9E3779B97F4A7C15)
_MIX1 = U64(0xBF58476D1CE4E5B9)
_MIX2 = U64(0x94D049BB133111EB)
_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53


@njit(cache=True, inline="always")
def _splitmix64(state):
    state = state + _GOLDEN
    z = state
    z = (z ^ (z >> U64(30))) * _MIX1
    z = (z ^ (z >> U64(27))) * _MIX2
    z = z ^ (z >> U64(31))
    return state, z


@njit(cache=True)
def stream_state(seed, stream_id):
    """256-bit xoshiro256** state for stream `stream_id` of `seed`."""
    s = np.empty(4, dtype=np.uint64)
    state = U64(seed) + (U64(stream_id) + U64(1)) * _GOLDEN
    any_nonzero = False
    for i in range(4):
        state, z = _splitmix64(state)
        s[i] = z
        if z != U64(0):
            any_nonzero = True
    if not any_nonzero:
        s[0] = _GOLDEN  # all-zero state is invalid for xoshiro
    return s


@njit(cache=True, inline="always")
def _rotl(x, k):
    return (x << k) | (x >> (U64(64) - k))


@njit(cache=True, inline="always")
def _xoshiro_next(s):
    result = _rotl(s[1] * U64(5), U64(7)) * U64(9)
    t = s[1] << U64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], U64(45))
    return result


@njit(cache=True, inline="always")
def _next_uniform(s):
    return (_xoshiro_next(s) >> U64(11)) * _INV_2_53


@njit(cache=True, inline="always")
def _next_below(s, n):
    return np.int64(_xoshiro_next(s) % U64(n))


@njit(cache=True)
def build_tree(
    X,            # (N, F) float64, C order (row scans dominate)
    Y,            # (N, D) float64
    q,            # (N,) per-sample sum of squared labels over outputs
    rng,          # uint64[4] xoshiro state for this tree
    max_features,
    n_cuts,
    min_samples_split,
    min_samples_leaf,
    max_depth,    # -1 for unbounded
    idx,          # int32[N] permutation, initialized 0..N-1; leaf slices index it
    node_feature, node_threshold, node_left, node_right,
    node_n, node_impurity, node_drop, leaf_lo, leaf_hi,
):
    """Grow one tree depth-first; returns the number of nodes written.

    All candidate cuts of a node are scored in a single branchless sweep
    over the node's samples with per-candidate accumulators (left count,
    left sum of squared labels, left label sums), from which both child
    SSEs follow without a second pass.
    """
    N, F = X.shape
    D = Y.shape[1]
    full = max_features == F

    S = np.empty(D)
    ymin = np.empty(D)
    ymax = np.empty(D)
    yrow = np.empty(D)
    feat_perm = np.empty(F, dtype=np.int64)
    # candidate workspaces; slot a = candidate j, cut c -> j * n_cuts + c
    # (indexed by feature when max_features == F)
    fmin = np.empty(F)
    fmax = np.empty(F)
    n_slots = max_features * n_cuts
    cuts = np.empty(n_slots)
    acc_n = np.empty(n_slots)
    acc_q = np.empty(n_slots)
    acc_s = np.empty(n_slots * D)
    tmp = np.empty(N, dtype=np.int32)
    stack = np.empty((N + 2, 5), dtype=np.int64)

    n_nodes = 0
    stack[0, 0] = 0      # start
    stack[0, 1] = N      # end
    stack[0, 2] = 0      # depth
    stack[0, 3] = -1     # parent node id
    stack[0, 4] = 0      # is_left flag
    sp = 1

    while sp > 0:
        sp -= 1
        start = stack[sp, 0]
        end = stack[sp, 1]
        depth = stack[sp, 2]
        parent = stack[sp, 3]
        is_left = stack[sp, 4]

        nid = n_nodes
        n_nodes += 1
        if parent >= 0:
            if is_left == 1:
                node_left[parent] = nid
            else:
                node_right[parent] = nid

        n = end - start

        # node label statistics
        Q = 0.0
        for d in range(D):
            S[d] = 0.0
            ymin[d] = np.inf
            ymax[d] = -np.inf
        for ii in range(start, end):
            i = idx[ii]
            Q += q[i]
            for d in range(D):
                v = Y[i, d]
                S[d] += v
                if v < ymin[d]:
                    ymin[d] = v
                if v > ymax[d]:
                    ymax[d] = v
        sse_node = Q
        for d in range(D):
            sse_node -= S[d] * S[d] / n
        if sse_node < 0.0:
            sse_node = 0.0
        imp = sse_node / n

        node_n[nid] = n
        node_impurity[nid] = imp
        leaf_lo[nid] = start
        leaf_hi[nid] = end

        pure = True
        for d in range(D):
            if ymin[d] != ymax[d]:
                pure = False
                break

        make_leaf = (
            n < min_samples_split
            or pure
            or (max_depth >= 0 and depth >= max_depth)
        )

        best_f = -1
        best_cut = 0.0
        best_score = np.inf
        best_nl = 0
        best_ssel = 0.0
        best_sser = 0.0

        if not make_leaf:
            for j in range(F):
                feat_perm[j] = j
            for j in range(max_features):
                r = j + _next_below(rng, F - j)
                t = feat_perm[j]
                feat_perm[j] = feat_perm[r]
                feat_perm[r] = t

            # candidate value ranges over the node's samples
            if full:
                for f in range(F):
                    fmin[f] = np.inf
                    fmax[f] = -np.inf
                for ii in range(start, end):
                    i = idx[ii]
                    for f in range(F):
                        v = X[i, f]
                        if v < fmin[f]:
                            fmin[f] = v
                        if v > fmax[f]:
                            fmax[f] = v
            else:
                for j in range(max_features):
                    fmin[j] = np.inf
                    fmax[j] = -np.inf
                for ii in range(start, end):
                    i = idx[ii]
                    for j in range(max_features):
                        v = X[i, feat_perm[j]]
                        if v < fmin[j]:
                            fmin[j] = v
                        if v > fmax[j]:
                            fmax[j] = v

            # cut draws, in candidate order; constant candidates draw nothing
            # and get a -inf sentinel so the sweep scores them as empty-left
            for j in range(max_features):
                f = feat_perm[j]
                r = f if full else j
                if fmin[r] == fmax[r]:
                    for c in range(n_cuts):
                        cuts[r * n_cuts + c] = -np.inf
                else:
                    for c in range(n_cuts):
                        u = _next_uniform(rng)
                        cut = fmin[r] + u * (fmax[r] - fmin[r])
                        if cut >= fmax[r]:
                            cut = np.nextafter(fmax[r], fmin[r])  # rounding guard
                        cuts[r * n_cuts + c] = cut

            for a in range(n_slots):
                acc_n[a] = 0.0
                acc_q[a] = 0.0
            for a in range(n_slots * D):
                acc_s[a] = 0.0

            # branchless scoring sweep
            for ii in range(start, end):
                i = idx[ii]
                qi = q[i]
                for d in range(D):
                    yrow[d] = Y[i, d]
                if full:
                    for f in range(F):
                        xv = X[i, f]
                        for c in range(n_cuts):
                            a = f * n_cuts + c
                            m = 1.0 if xv <= cuts[a] else 0.0
                            acc_n[a] += m
                            acc_q[a] += m * qi
                            ab = a * D
                            for d in range(D):
                                acc_s[ab + d] += m * yrow[d]
                else:
                    for j in range(max_features):
                        xv = X[i, feat_perm[j]]
                        for c in range(n_cuts):
                            a = j * n_cuts + c
                            m = 1.0 if xv <= cuts[a] else 0.0
                            acc_n[a] += m
                            acc_q[a] += m * qi
                            ab = a * D
                            for d in range(D):
                                acc_s[ab + d] += m * yrow[d]

            # select the lowest summed child SSE; ties keep the earliest
            # candidate in drawn order
            for j in range(max_features):
                f = feat_perm[j]
                r = f if full else j
                for c in range(n_cuts):
                    a = r * n_cuts + c
                    cut = cuts[a]
                    if cut == -np.inf:
                        continue
                    nl = np.int64(acc_n[a])
                    nr = n - nl
                    if nl < min_samples_leaf or nr < min_samples_leaf:
                        continue
                    ssel = acc_q[a]
                    sser = Q - acc_q[a]
                    ab = a * D
                    for d in range(D):
                        sl = acc_s[ab + d]
                        ssel -= sl * sl / nl
                        sr = S[d] - sl
                        sser -= sr * sr / nr
                    if ssel < 0.0:
                        ssel = 0.0
                    if sser < 0.0:
                        sser = 0.0
                    score = ssel + sser
                    if score < best_score:
                        best_score = score
                        best_f = f
                        best_cut = cut
                        best_nl = nl
                        best_ssel = ssel
                        best_sser = sser
            if best_f < 0:
                make_leaf = True

        if make_leaf:
            node_feature[nid] = -1
            node_threshold[nid] = 0.0
            node_left[nid] = -1
            node_right[nid] = -1
            node_drop[nid] = 0.0
            continue

        # stable partition of idx[start:end] on the winning cut
        a = 0
        b = best_nl
        for ii in range(start, end):
            i = idx[ii]
            if X[i, best_f] <= best_cut:
                tmp[a] = i
                a += 1
            else:
                tmp[b] = i
                b += 1
        for ii in range(n):
            idx[start + ii] = tmp[ii]

        node_feature[nid] = best_f
        node_threshold[nid] = best_cut
        drop = imp - (best_ssel + best_sser) / n
        if drop < 0.0:
            drop = 0.0
        node_drop[nid] = drop

        nl = best_nl
        stack[sp, 0] = start + nl
        stack[sp, 1] = end
        stack[sp, 2] = depth + 1
        stack[sp, 3] = nid
        stack[sp, 4] = 0
        sp += 1
        stack[sp, 0] = start
        stack[sp, 1] = start + nl
        stack[sp, 2] = depth + 1
        stack[sp, 3] = nid
        stack[sp, 4] = 1
        sp += 1

    return n_nodes


@njit(cache=True)
def accumulate_importances(
    tree_offsets, node_feature, node_n, node_drop, n_samples, n_features
):
    """Mean-decrease-impurity importances averaged over trees with splits.

    Per tree: fi[f] += (node_n / n_samples) * drop at every node splitting
    on f, normalized to sum 1; trees without splits are skipped.  Returns
    (mean importance vector, number of trees with at least one split).
    """
    n_trees = tree_offsets.shape[0] - 1
    fi = np.zeros(n_features)
    fi_tree = np.empty(n_features)
    n_split_trees = 0
    for t in range(n_trees):
        for f in range(n_features):
            fi_tree[f] = 0.0
        total = 0.0
        for a in range(tree_offsets[t], tree_offsets[t + 1]):
            f = node_feature[a]
            if f >= 0:
                w = (node_n[a] / n_samples) * node_drop[a]
                fi_tree[f] += w
                total += w
        if total > 0.0:
            n_split_trees += 1
            for f in range(n_features):
                fi[f] += fi_tree[f] / total
    if n_split_trees > 0:
        for f in range(n_features):
            fi[f] /= n_split_trees
    return fi, n_split_trees


@njit(cache=True)
def predict_kernel(
    Xq, tree_offsets, node_feature, node_threshold, node_left, node_right,
    leaf_lo, leaf_hi, idx_all, idx_stride, Y, out
):
    """Mean over trees of leaf label means; writes into out (M, D).

    idx_stride is the length of each tree's block in idx_all; leaf slices
    are positions within the owning tree's block.
    """
    M = Xq.shape[0]
    D = Y.shape[1]
    n_trees = tree_offsets.shape[0] - 1
    acc = np.empty(D)
    for m in range(M):
        for d in range(D):
            acc[d] = 0.0
        for t in range(n_trees):
            base = tree_offsets[t]
            node = 0
            while node_feature[base + node] >= 0:
                f = node_feature[base + node]
                if Xq[m, f] <= node_threshold[base + node]:
                    node = node_left[base + node]
                else:
                    node = node_right[base + node]
            lo = leaf_lo[base + node]
            hi = leaf_hi[base + node]
            ibase = t * idx_stride
            inv = 1.0 / (hi - lo)
            for d in range(D):
                sd = 0.0
                for ii in range(lo, hi):
                    sd += Y[idx_all[ibase + ii], d]
                acc[d] += sd * inv
        for d in range(D):
            out[m, d] = acc[d] / n_trees
    return out
