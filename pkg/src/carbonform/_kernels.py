"""Numba-compiled inner loops for tree fitting and prediction.

Whole trees are grown inside single kernel calls (explicit stack, stable
in-place partitions) so no per-node Python overhead remains. Everything
is deterministic: feature loops run in ascending index order and
candidate thresholds in ascending value order, so ties always resolve to
the lowest feature index and lowest threshold. If numba is unavailable
the same functions run as plain Python (slow but identical).
"""
from __future__ import annotations

import numpy as np

try:  # pragma: no cover - exercised implicitly everywhere
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


@njit(cache=True)
def _scan_split_mse(X, grad, work, lo, hi, min_leaf, col, gbuf):
    """Best variance-reduction split over segment work[lo:hi].

    Returns (feature, threshold, gain); feature == -1 when no admissible
    split improves on the parent. Split predicate is ``x < threshold``.
    """
    n = hi - lo
    gsum = 0.0
    for i in range(n):
        gbuf[i] = grad[work[lo + i]]
        gsum += gbuf[i]
    parent = gsum * gsum / n
    best_gain = 0.0
    best_feat = -1
    best_thr = 0.0
    p = X.shape[1]
    for j in range(p):
        for i in range(n):
            col[i] = X[work[lo + i], j]
        order = np.argsort(col[:n], kind="mergesort")
        cs = 0.0
        for ii in range(n - 1):
            idx = order[ii]
            cs += gbuf[idx]
            nl = ii + 1
            nr = n - nl
            if nr < min_leaf:
                break
            if nl < min_leaf:
                continue
            x_here = col[idx]
            x_next = col[order[ii + 1]]
            if x_here == x_next:
                continue
            csr = gsum - cs
            gain = cs * cs / nl + csr * csr / nr - parent
            if gain > best_gain:
                thr = 0.5 * (x_here + x_next)
                if thr <= x_here:  # adjacent floats: keep the predicate consistent
                    thr = x_next
                best_gain = gain
                best_feat = j
                best_thr = thr
    return best_feat, best_thr, best_gain


@njit(cache=True)
def _partition_stable(X, work, lo, hi, feat, thr, buf):
    """Stable partition of work[lo:hi] by ``X[row, feat] < thr``; returns split point."""
    n_left = 0
    for i in range(lo, hi):
        if X[work[i], feat] < thr:
            buf[n_left] = work[i]
            n_left += 1
    n_right = 0
    for i in range(lo, hi):
        if not (X[work[i], feat] < thr):
            buf[n_left + n_right] = work[i]
            n_right += 1
    for i in range(hi - lo):
        work[lo + i] = buf[i]
    return lo + n_left


@njit(cache=True)
def grow_tree_mse(X, grad, rows, max_depth, min_leaf):
    """Grow one squared-loss regression tree over the given row subset.

    Returns flat arrays (feature, threshold, left, right, value, n_samples)
    trimmed to the number of nodes created. Leaf values are residual means.
    """
    n_rows = rows.shape[0]
    cap_leaves = max(1, n_rows // max(1, min_leaf))
    cap = 2 * cap_leaves - 1
    if max_depth < 30:
        full = 2 ** (max_depth + 1) - 1
        if full < cap:
            cap = full
    if cap < 1:
        cap = 1

    feature = np.full(cap, -1, dtype=np.int32)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    value = np.zeros(cap, dtype=np.float64)
    n_samples = np.zeros(cap, dtype=np.int64)

    work = rows.astype(np.int64)
    buf = np.empty(n_rows, dtype=np.int64)
    col = np.empty(n_rows, dtype=np.float64)
    gbuf = np.empty(n_rows, dtype=np.float64)

    st_node = np.empty(cap + 1, dtype=np.int64)
    st_lo = np.empty(cap + 1, dtype=np.int64)
    st_hi = np.empty(cap + 1, dtype=np.int64)
    st_depth = np.empty(cap + 1, dtype=np.int64)

    count = 1
    top = 0
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = n_rows
    st_depth[0] = 0

    while top >= 0:
        node = st_node[top]
        lo = st_lo[top]
        hi = st_hi[top]
        depth = st_depth[top]
        top -= 1
        n = hi - lo
        n_samples[node] = n

        split_done = False
        if depth < max_depth and n >= 2 * min_leaf and count + 2 <= cap:
            feat, thr, gain = _scan_split_mse(X, grad, work, lo, hi, min_leaf, col, gbuf)
            if feat >= 0 and gain > 0.0:
                mid = _partition_stable(X, work, lo, hi, feat, thr, buf)
                feature[node] = feat
                threshold[node] = thr
                left_id = count
                right_id = count + 1
                count += 2
                left[node] = left_id
                right[node] = right_id
                top += 1
                st_node[top] = right_id
                st_lo[top] = mid
                st_hi[top] = hi
                st_depth[top] = depth + 1
                top += 1
                st_node[top] = left_id
                st_lo[top] = lo
                st_hi[top] = mid
                st_depth[top] = depth + 1
                split_done = True
        if not split_done:
            s = 0.0
            for i in range(lo, hi):
                s += grad[work[i]]
            value[node] = s / n

    return (
        feature[:count].copy(),
        threshold[:count].copy(),
        left[:count].copy(),
        right[:count].copy(),
        value[:count].copy(),
        n_samples[:count].copy(),
    )


@njit(cache=True)
def tree_accumulate(feature, threshold, left, right, value, X, scale, out):
    """Add ``scale * leaf_value`` of one tree to ``out`` for every row."""
    for r in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] < threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] += scale * value[node]


@njit(cache=True)
def tree_leaf_ids(feature, threshold, left, right, X, out):
    """Leaf node index for every row of X."""
    for r in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[r, feature[node]] < threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = node


@njit(cache=True)
def _ridge_theta_seg(T, y, work, lo, hi, ridge_lambda, A, b):
    """Uniform-weight ridge coefficient over rows work[lo:hi] (in-place A, b)."""
    d = T.shape[1]
    n = hi - lo
    for a in range(d):
        b[a] = 0.0
        for c in range(d):
            A[a, c] = ridge_lambda if a == c else 0.0
    if n > 0:
        for i in range(lo, hi):
            r = work[i]
            for a in range(d):
                ta = T[r, a]
                b[a] += ta * y[r] / n
                for c in range(d):
                    A[a, c] += ta * T[r, c] / n
    return np.linalg.solve(A, b)


@njit(cache=True)
def _scan_split_effect(
    X, T, y, s_work, s_lo, s_hi, e_work, e_lo, e_hi, min_leaf, ridge_lambda,
    col, ecol, ys, ts,
):
    """Best heterogeneity split over split segment, honoring estimation counts.

    The two children's ridge coefficients (outcome residuals on treatment
    residuals) are compared; the criterion is the size-weighted squared
    distance between them. Admissibility needs min_leaf rows per child on
    BOTH the split and the estimation segment.
    """
    n = s_hi - s_lo
    n_e = e_hi - e_lo
    d = T.shape[1]
    p = X.shape[1]

    s1_tot = np.zeros((d, d))
    s2_tot = np.zeros(d)
    for i in range(n):
        r = s_work[s_lo + i]
        ys[i] = y[r]
        for a in range(d):
            ts[i, a] = T[r, a]
            s2_tot[a] += ts[i, a] * ys[i]
            for c in range(d):
                s1_tot[a, c] += ts[i, a] * T[r, c]

    best_crit = 0.0
    best_feat = -1
    best_thr = 0.0
    A_l = np.empty((d, d))
    A_r = np.empty((d, d))
    b_l = np.empty(d)
    b_r = np.empty(d)
    s1 = np.empty((d, d))
    s2 = np.empty(d)

    for j in range(p):
        for i in range(n):
            col[i] = X[s_work[s_lo + i], j]
        order = np.argsort(col[:n], kind="mergesort")
        for i in range(n_e):
            ecol[i] = X[e_work[e_lo + i], j]
        esorted = np.sort(ecol[:n_e])
        for a in range(d):
            s2[a] = 0.0
            for c in range(d):
                s1[a, c] = 0.0
        for ii in range(n - 1):
            idx = order[ii]
            yi = ys[idx]
            for a in range(d):
                ta = ts[idx, a]
                s2[a] += ta * yi
                for c in range(d):
                    s1[a, c] += ta * ts[idx, c]
            nl = ii + 1
            nr = n - nl
            if nr < min_leaf:
                break
            if nl < min_leaf:
                continue
            x_here = col[idx]
            x_next = col[order[ii + 1]]
            if x_here == x_next:
                continue
            thr = 0.5 * (x_here + x_next)
            if thr <= x_here:
                thr = x_next
            ne_l = np.searchsorted(esorted, thr)
            ne_r = n_e - ne_l
            if ne_l < min_leaf or ne_r < min_leaf:
                continue
            if d == 1:
                theta_l0 = (s2[0] / nl) / (s1[0, 0] / nl + ridge_lambda)
                theta_r0 = ((s2_tot[0] - s2[0]) / nr) / (
                    (s1_tot[0, 0] - s1[0, 0]) / nr + ridge_lambda
                )
                diff = theta_l0 - theta_r0
                dist = diff * diff
            else:
                for a in range(d):
                    b_l[a] = s2[a] / nl
                    b_r[a] = (s2_tot[a] - s2[a]) / nr
                    for c in range(d):
                        A_l[a, c] = s1[a, c] / nl + (ridge_lambda if a == c else 0.0)
                        A_r[a, c] = (s1_tot[a, c] - s1[a, c]) / nr + (
                            ridge_lambda if a == c else 0.0
                        )
                theta_l = np.linalg.solve(A_l, b_l)
                theta_r = np.linalg.solve(A_r, b_r)
                dist = 0.0
                for a in range(d):
                    diff = theta_l[a] - theta_r[a]
                    dist += diff * diff
            crit = dist * nl * nr / (n * n)
            if crit > best_crit:
                best_crit = crit
                best_feat = j
                best_thr = thr
    return best_feat, best_thr, best_crit


@njit(cache=True)
def grow_tree_effect(X, T, y, split_rows, est_rows, min_leaf, ridge_lambda):
    """Grow one honest effect tree.

    Splits maximize the heterogeneity criterion on the split rows while
    requiring min_leaf estimation rows per child; leaves store the ridge
    coefficient of their estimation rows. Returns flat node arrays plus
    the re-ordered estimation index (grouped by leaf via leaf_est_start).
    """
    n_s = split_rows.shape[0]
    n_e = est_rows.shape[0]
    d = T.shape[1]

    cap_leaves = max(1, min(n_s // max(1, min_leaf), n_e // max(1, min_leaf)))
    cap = 2 * cap_leaves - 1
    if cap < 1:
        cap = 1

    feature = np.full(cap, -1, dtype=np.int32)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    est_count = np.zeros(cap, dtype=np.int64)
    leaf_est_start = np.full(cap, -1, dtype=np.int64)
    leaf_theta = np.zeros((cap, d), dtype=np.float64)

    s_work = split_rows.astype(np.int64)
    e_work = est_rows.astype(np.int64)
    buf = np.empty(max(n_s, n_e), dtype=np.int64)
    col = np.empty(n_s, dtype=np.float64)
    ecol = np.empty(max(n_e, 1), dtype=np.float64)
    ys = np.empty(n_s, dtype=np.float64)
    ts = np.empty((n_s, d), dtype=np.float64)
    A = np.empty((d, d), dtype=np.float64)
    b = np.empty(d, dtype=np.float64)

    st_node = np.empty(cap + 1, dtype=np.int64)
    st_slo = np.empty(cap + 1, dtype=np.int64)
    st_shi = np.empty(cap + 1, dtype=np.int64)
    st_elo = np.empty(cap + 1, dtype=np.int64)
    st_ehi = np.empty(cap + 1, dtype=np.int64)

    count = 1
    top = 0
    st_node[0] = 0
    st_slo[0] = 0
    st_shi[0] = n_s
    st_elo[0] = 0
    st_ehi[0] = n_e

    while top >= 0:
        node = st_node[top]
        s_lo = st_slo[top]
        s_hi = st_shi[top]
        e_lo = st_elo[top]
        e_hi = st_ehi[top]
        top -= 1
        est_count[node] = e_hi - e_lo

        split_done = False
        if (
            s_hi - s_lo >= 2 * min_leaf
            and e_hi - e_lo >= 2 * min_leaf
            and count + 2 <= cap
        ):
            feat, thr, crit = _scan_split_effect(
                X, T, y, s_work, s_lo, s_hi, e_work, e_lo, e_hi,
                min_leaf, ridge_lambda, col, ecol, ys, ts,
            )
            if feat >= 0 and crit > 0.0:
                s_mid = _partition_stable(X, s_work, s_lo, s_hi, feat, thr, buf)
                e_mid = _partition_stable(X, e_work, e_lo, e_hi, feat, thr, buf)
                feature[node] = feat
                threshold[node] = thr
                left_id = count
                right_id = count + 1
                count += 2
                left[node] = left_id
                right[node] = right_id
                top += 1
                st_node[top] = right_id
                st_slo[top] = s_mid
                st_shi[top] = s_hi
                st_elo[top] = e_mid
                st_ehi[top] = e_hi
                top += 1
                st_node[top] = left_id
                st_slo[top] = s_lo
                st_shi[top] = s_mid
                st_elo[top] = e_lo
                st_ehi[top] = e_mid
                split_done = True
        if not split_done:
            leaf_est_start[node] = e_lo
            leaf_theta[node] = _ridge_theta_seg(T, y, e_work, e_lo, e_hi, ridge_lambda, A, b)

    return (
        feature[:count].copy(),
        threshold[:count].copy(),
        left[:count].copy(),
        right[:count].copy(),
        est_count[:count].copy(),
        leaf_est_start[:count].copy(),
        e_work,
        leaf_theta[:count].copy(),
    )


@njit(cache=True)
def ridge_theta(T, y, ridge_lambda):
    """Uniform-weight ridge coefficient of y on T (all rows)."""
    n, d = T.shape
    A = ridge_lambda * np.eye(d)
    b = np.zeros(d)
    if n > 0:
        for i in range(n):
            for a in range(d):
                ta = T[i, a]
                b[a] += ta * y[i] / n
                for c in range(d):
                    A[a, c] += ta * T[i, c] / n
    return np.linalg.solve(A, b)


# ---------------------------------------------------------------------------
# path-dependent Shapley attribution for a single tree
#
# The classic polynomial-time algorithm: a path of unique features is
# carried down the tree; each entry stores the fraction of subsets that
# flow down when the feature is out of the subset (zero fraction), when
# in (one fraction), and the permutation weights for each subset size.
# ---------------------------------------------------------------------------

@njit(cache=True)
def _shap_extend(feat_idx, zero_frac, one_frac, pweight, depth, zero, one, feat):
    feat_idx[depth] = feat
    zero_frac[depth] = zero
    one_frac[depth] = one
    if depth == 0:
        pweight[0] = 1.0
    else:
        pweight[depth] = 0.0
    for i in range(depth - 1, -1, -1):
        pweight[i + 1] += one * pweight[i] * (i + 1.0) / (depth + 1.0)
        pweight[i] = zero * pweight[i] * (depth - i) / (depth + 1.0)


@njit(cache=True)
def _shap_unwind(feat_idx, zero_frac, one_frac, pweight, depth, path_index):
    one = one_frac[path_index]
    zero = zero_frac[path_index]
    carry = pweight[depth]
    for i in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = pweight[i]
            pweight[i] = carry * (depth + 1.0) / ((i + 1.0) * one)
            carry = tmp - pweight[i] * zero * (depth - i) / (depth + 1.0)
        else:
            pweight[i] = pweight[i] * (depth + 1.0) / (zero * (depth - i))
    for i in range(path_index, depth):
        feat_idx[i] = feat_idx[i + 1]
        zero_frac[i] = zero_frac[i + 1]
        one_frac[i] = one_frac[i + 1]


@njit(cache=True)
def _shap_unwound_sum(zero_frac, one_frac, pweight, depth, path_index):
    one = one_frac[path_index]
    zero = zero_frac[path_index]
    carry = pweight[depth]
    total = 0.0
    for i in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = carry * (depth + 1.0) / ((i + 1.0) * one)
            total += tmp
            carry = pweight[i] - tmp * zero * (depth - i) / (depth + 1.0)
        else:
            total += (pweight[i] / zero) / ((depth - i) / (depth + 1.0))
    return total


@njit(cache=True)
def tree_shap(left, right, feature, threshold, values, node_weight, x, phi, buf_feat, buf_zero, buf_one, buf_w):
    """Exact path-dependent attribution of one tree's prediction at x.

    ``phi`` (length p) receives the per-feature contributions; the caller
    adds the tree's expected value as the base. Buffer arrays must have
    at least (D+2)(D+3)/2 entries for tree depth D.
    """
    # iterative depth-first traversal with explicit frames mirroring the
    # recursive formulation; each frame owns a window of the path buffers
    max_nodes = left.shape[0]
    st_node = np.empty(max_nodes + 1, dtype=np.int64)
    st_depth = np.empty(max_nodes + 1, dtype=np.int64)
    st_offset = np.empty(max_nodes + 1, dtype=np.int64)
    st_zero = np.empty(max_nodes + 1, dtype=np.float64)
    st_one = np.empty(max_nodes + 1, dtype=np.float64)
    st_feat = np.empty(max_nodes + 1, dtype=np.int64)

    top = 0
    st_node[0] = 0
    st_depth[0] = 0
    st_offset[0] = 0
    st_zero[0] = 1.0
    st_one[0] = 1.0
    st_feat[0] = -1

    while top >= 0:
        node = st_node[top]
        depth = st_depth[top]
        offset = st_offset[top]
        parent_zero = st_zero[top]
        parent_one = st_one[top]
        parent_feat = st_feat[top]
        top -= 1

        # copy the parent's path window into this frame's window
        child_offset = offset + depth
        for i in range(depth):
            buf_feat[child_offset + i] = buf_feat[offset + i]
            buf_zero[child_offset + i] = buf_zero[offset + i]
            buf_one[child_offset + i] = buf_one[offset + i]
            buf_w[child_offset + i] = buf_w[offset + i]
        feat_idx = buf_feat[child_offset:]
        zero_frac = buf_zero[child_offset:]
        one_frac = buf_one[child_offset:]
        pweight = buf_w[child_offset:]

        _shap_extend(feat_idx, zero_frac, one_frac, pweight, depth, parent_zero, parent_one, parent_feat)
        unique_depth = depth

        if left[node] < 0:  # leaf
            for i in range(1, unique_depth + 1):
                w = _shap_unwound_sum(zero_frac, one_frac, pweight, unique_depth, i)
                phi[feat_idx[i]] += w * (one_frac[i] - zero_frac[i]) * values[node]
            continue

        split = feature[node]
        cleft = left[node]
        cright = right[node]
        if x[split] < threshold[node]:
            hot = cleft
            cold = cright
        else:
            hot = cright
            cold = cleft
        w_node = node_weight[node]
        hot_zero = node_weight[hot] / w_node
        cold_zero = node_weight[cold] / w_node
        incoming_zero = 1.0
        incoming_one = 1.0

        # if this feature is already on the path, undo its previous split
        path_index = 0
        while path_index <= unique_depth:
            if feat_idx[path_index] == split:
                break
            path_index += 1
        if path_index != unique_depth + 1:
            incoming_zero = zero_frac[path_index]
            incoming_one = one_frac[path_index]
            _shap_unwind(feat_idx, zero_frac, one_frac, pweight, unique_depth, path_index)
            unique_depth -= 1

        top += 1
        st_node[top] = cold
        st_depth[top] = unique_depth + 1
        st_offset[top] = child_offset
        st_zero[top] = cold_zero * incoming_zero
        st_one[top] = 0.0
        st_feat[top] = split

        top += 1
        st_node[top] = hot
        st_depth[top] = unique_depth + 1
        st_offset[top] = child_offset
        st_zero[top] = hot_zero * incoming_zero
        st_one[top] = incoming_one
        st_feat[top] = split
