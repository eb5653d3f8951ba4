"""Numba kernels shared by the search, pruning and graph construction code.

Everything here operates on plain numpy arrays so it can be jitted.  All
distances are squared L2 computed in float32 with a fixed ascending
accumulation order; keeping one kernel for every caller is what makes
rebuilds bit-reproducible.  No fastmath: reassociation would make results
depend on the compiler's whims.
"""

import numpy as np
from numba import njit, prange

# Padding value for fixed-width adjacency / candidate rows.
EMPTY = np.int32(-1)


@njit(cache=True)
def squared_l2(a, b):
    """Squared L2 distance, float32 accumulation in index order."""
    acc = np.float32(0.0)
    for i in range(a.shape[0]):
        d = a[i] - b[i]
        acc += d * d
    return acc


@njit(cache=True)
def cos_angle_from_sq(d2_uw, d2_vw, d2_uv):
    """Cosine of the angle at w in triangle (u, w, v) from squared sides.

    Inputs are squared distances; the law of cosines only needs the two
    adjacent sides under a square root.  Result clamped to [-1, 1].
    """
    denom = 2.0 * np.sqrt(np.float64(d2_uw)) * np.sqrt(np.float64(d2_vw))
    if denom == 0.0:
        return np.float64(np.nan)
    c = (np.float64(d2_uw) + np.float64(d2_vw) - np.float64(d2_uv)) / denom
    if c > 1.0:
        c = 1.0
    elif c < -1.0:
        c = -1.0
    return c


# ---------------------------------------------------------------------------
# Candidate pool primitives (mirrored by core.CandidatePool)
# ---------------------------------------------------------------------------

@njit(cache=True)
def pool_insert(ids, dists, flags, size, cap, nid, nd):
    """Insert (nid, nd) into a sorted bounded pool, returning the new size.

    Entries are kept ascending by (dist, id).  A full pool rejects anything
    not strictly better than its last entry; duplicates are rejected.  flags
    carries the expanded bits and is shifted in lockstep.
    """
    if size == cap:
        last = size - 1
        if nd > dists[last] or (nd == dists[last] and nid >= ids[last]):
            return size
    lo = 0
    hi = size
    while lo < hi:
        mid = (lo + hi) >> 1
        if dists[mid] < nd or (dists[mid] == nd and ids[mid] < nid):
            lo = mid + 1
        else:
            hi = mid
    if lo < size and ids[lo] == nid:
        return size
    end = size if size < cap else cap - 1
    for j in range(end, lo, -1):
        ids[j] = ids[j - 1]
        dists[j] = dists[j - 1]
        flags[j] = flags[j - 1]
    ids[lo] = nid
    dists[lo] = nd
    flags[lo] = False
    if size < cap:
        return size + 1
    return size


@njit(cache=True)
def first_unexpanded(flags, size, limit):
    """Index of the first entry among the first `limit` not yet expanded."""
    top = size if size < limit else limit
    for i in range(top):
        if not flags[i]:
            return i
    return -1


# ---------------------------------------------------------------------------
# Beam search
# ---------------------------------------------------------------------------

@njit(cache=True)
def _search_core(data, adj, counts, q, L, ep, pool_ids, pool_dists, pool_exp,
                 visited, touched):
    """Best-first beam search; fills the caller's pool arrays.

    Returns (pool size, distance kernel calls, expansions).  The visited
    array rejects re-offers before any distance work; it marks offered ids,
    not expanded ones.  visited must be all-zero on entry and is restored
    to all-zero before returning (touched needs room for n ids), so one
    allocation serves any number of queries.
    """
    visited[ep] = 1
    touched[0] = ep
    n_t = 1
    d0 = squared_l2(data[ep], q)
    dist_count = 1
    size = pool_insert(pool_ids, pool_dists, pool_exp, 0, L, ep, d0)
    n_expanded = 0
    while True:
        idx = first_unexpanded(pool_exp, size, L)
        if idx < 0:
            break
        u = pool_ids[idx]
        pool_exp[idx] = True
        n_expanded += 1
        for j in range(counts[u]):
            v = adj[u, j]
            if visited[v]:
                continue
            visited[v] = 1
            touched[n_t] = v
            n_t += 1
            dv = squared_l2(data[v], q)
            dist_count += 1
            size = pool_insert(pool_ids, pool_dists, pool_exp, size, L, v, dv)
    for t in range(n_t):
        visited[touched[t]] = 0
    return size, dist_count, n_expanded


@njit(cache=True)
def _search_core_traced(data, adj, counts, q, L, ep,
                        pool_ids, pool_dists, pool_exp):
    """As _search_core but also returns the expansion order and every
    offered (id, dist) pair including the seed."""
    n = data.shape[0]
    visited = np.zeros(n, dtype=np.uint8)
    exp_ids = np.empty(4 * L + 8, dtype=np.int32)
    off_cap = 8 * L + 8
    off_ids = np.empty(off_cap, dtype=np.int32)
    off_dists = np.empty(off_cap, dtype=np.float32)
    n_off = 0
    visited[ep] = 1
    d0 = squared_l2(data[ep], q)
    dist_count = 1
    off_ids[0] = ep
    off_dists[0] = d0
    n_off = 1
    size = pool_insert(pool_ids, pool_dists, pool_exp, 0, L, ep, d0)
    n_expanded = 0
    while True:
        idx = first_unexpanded(pool_exp, size, L)
        if idx < 0:
            break
        u = pool_ids[idx]
        pool_exp[idx] = True
        if n_expanded >= exp_ids.shape[0]:
            grown = np.empty(exp_ids.shape[0] * 2, dtype=np.int32)
            grown[: n_expanded] = exp_ids[: n_expanded]
            exp_ids = grown
        exp_ids[n_expanded] = u
        n_expanded += 1
        for j in range(counts[u]):
            v = adj[u, j]
            if visited[v]:
                continue
            visited[v] = 1
            dv = squared_l2(data[v], q)
            dist_count += 1
            if n_off >= off_ids.shape[0]:
                gi = np.empty(off_ids.shape[0] * 2, dtype=np.int32)
                gd = np.empty(off_ids.shape[0] * 2, dtype=np.float32)
                gi[:n_off] = off_ids[:n_off]
                gd[:n_off] = off_dists[:n_off]
                off_ids = gi
                off_dists = gd
            off_ids[n_off] = v
            off_dists[n_off] = dv
            n_off += 1
            size = pool_insert(pool_ids, pool_dists, pool_exp, size, L, v, dv)
    return (size, dist_count, exp_ids[:n_expanded].copy(),
            off_ids[:n_off].copy(), off_dists[:n_off].copy())


@njit(cache=True)
def extract_results(pool_ids, pool_dists, size, k, exclude):
    """First k pool entries, skipping the excluded id."""
    out_ids = np.empty(k, dtype=np.int32)
    out_dists = np.empty(k, dtype=np.float32)
    m = 0
    for i in range(size):
        if m == k:
            break
        if pool_ids[i] == exclude:
            continue
        out_ids[m] = pool_ids[i]
        out_dists[m] = pool_dists[i]
        m += 1
    return out_ids[:m], out_dists[:m]


@njit(cache=True)
def search_one(data, adj, counts, q, k, L, ep, exclude):
    """Single-query beam search -> (ids, dists, dist_count, n_expanded)."""
    n = data.shape[0]
    pool_ids = np.empty(L, dtype=np.int32)
    pool_dists = np.empty(L, dtype=np.float32)
    pool_exp = np.zeros(L, dtype=np.bool_)
    visited = np.zeros(n, dtype=np.uint8)
    touched = np.empty(n, dtype=np.int32)
    size, dist_count, n_expanded = _search_core(
        data, adj, counts, q, L, ep, pool_ids, pool_dists, pool_exp,
        visited, touched)
    rid, rd = extract_results(pool_ids, pool_dists, size, k, exclude)
    return rid, rd, dist_count, n_expanded


@njit(cache=True)
def search_many(data, adj, counts, queries, k, L, ep):
    """Sequential query batch -> (ids (nq,k), dists, per-query dist counts)."""
    nq = queries.shape[0]
    out_ids = np.full((nq, k), EMPTY, dtype=np.int32)
    out_dists = np.full((nq, k), np.inf, dtype=np.float32)
    out_m = np.zeros(nq, dtype=np.int32)
    dist_counts = np.zeros(nq, dtype=np.int64)
    pool_ids = np.empty(L, dtype=np.int32)
    pool_dists = np.empty(L, dtype=np.float32)
    pool_exp = np.zeros(L, dtype=np.bool_)
    visited = np.zeros(data.shape[0], dtype=np.uint8)
    touched = np.empty(data.shape[0], dtype=np.int32)
    for qi in range(nq):
        pool_exp[:] = False
        size, dc, _ = _search_core(
            data, adj, counts, queries[qi], L, ep,
            pool_ids, pool_dists, pool_exp, visited, touched)
        rid, rd = extract_results(pool_ids, pool_dists, size, k, np.int32(-1))
        out_ids[qi, : rid.shape[0]] = rid
        out_dists[qi, : rd.shape[0]] = rd
        out_m[qi] = rid.shape[0]
        dist_counts[qi] = dc
    return out_ids, out_dists, out_m, dist_counts


@njit(cache=True, parallel=True)
def batch_self_search(data, adj, counts, k, L, eps, out_ids, out_dists,
                      out_m, dist_counts):
    """One search per node (query = the node's own vector, excluded from the
    results).  eps[u] gives the entry point of node u's search.  Rows of the
    output are written independently, so the result does not depend on the
    thread count.  Work is chunked so the per-query scratch is allocated
    once per chunk, not once per node."""
    n = data.shape[0]
    chunk = 512
    nb = (n + chunk - 1) // chunk
    for b in prange(nb):
        lo = b * chunk
        hi = min(n, lo + chunk)
        pool_ids = np.empty(L, dtype=np.int32)
        pool_dists = np.empty(L, dtype=np.float32)
        pool_exp = np.zeros(L, dtype=np.bool_)
        visited = np.zeros(n, dtype=np.uint8)
        touched = np.empty(n, dtype=np.int32)
        for u in range(lo, hi):
            pool_exp[:] = False
            size, dc, _ = _search_core(
                data, adj, counts, data[u], L, eps[u],
                pool_ids, pool_dists, pool_exp, visited, touched)
            rid, rd = extract_results(pool_ids, pool_dists, size, k,
                                      np.int32(u))
            out_ids[u, : rid.shape[0]] = rid
            out_dists[u, : rd.shape[0]] = rd
            out_m[u] = rid.shape[0]
            dist_counts[u] = dc


@njit(cache=True)
def bsearch(arr, lo, hi, x):
    """Index of x in the sorted slice arr[lo:hi], or -1."""
    end = hi
    while lo < hi:
        mid = (lo + hi) >> 1
        if arr[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    if lo < end and arr[lo] == x:
        return lo
    return -1


@njit(cache=True)
def sort_pairs(ids, dists, cnt):
    """In-place ascending (dist, id) sort of the first cnt entries."""
    order = np.argsort(dists[:cnt], kind="mergesort")
    tmp_i = np.empty(cnt, dtype=ids.dtype)
    tmp_d = np.empty(cnt, dtype=dists.dtype)
    for t in range(cnt):
        tmp_i[t] = ids[order[t]]
        tmp_d[t] = dists[order[t]]
    ids[:cnt] = tmp_i
    dists[:cnt] = tmp_d
    # mergesort is stable but equal distances must order by id, and the
    # pre-sort id order is arbitrary; fix tie runs by insertion sort.
    i = 0
    while i < cnt:
        j = i + 1
        while j < cnt and dists[j] == dists[i]:
            j += 1
        for a in range(i + 1, j):
            key = ids[a]
            b = a - 1
            while b >= i and ids[b] > key:
                ids[b + 1] = ids[b]
                b -= 1
            ids[b + 1] = key
        i = j
    return


@njit(cache=True)
def sort_triples(ids, dists, flags, cnt):
    """As sort_pairs but carrying a bool payload along."""
    order = np.argsort(dists[:cnt], kind="mergesort")
    tmp_i = np.empty(cnt, dtype=ids.dtype)
    tmp_d = np.empty(cnt, dtype=dists.dtype)
    tmp_f = np.empty(cnt, dtype=flags.dtype)
    for t in range(cnt):
        tmp_i[t] = ids[order[t]]
        tmp_d[t] = dists[order[t]]
        tmp_f[t] = flags[order[t]]
    ids[:cnt] = tmp_i
    dists[:cnt] = tmp_d
    flags[:cnt] = tmp_f
    i = 0
    while i < cnt:
        j = i + 1
        while j < cnt and dists[j] == dists[i]:
            j += 1
        for a in range(i + 1, j):
            ki = ids[a]
            kf = flags[a]
            b = a - 1
            while b >= i and ids[b] > ki:
                ids[b + 1] = ids[b]
                flags[b + 1] = flags[b]
                b -= 1
            ids[b + 1] = ki
            flags[b + 1] = kf
        i = j
    return


# ---------------------------------------------------------------------------
# Pruning
# ---------------------------------------------------------------------------

@njit(cache=True)
def _prune_row(data, u, cand_ids, cand_dists, lo, hi, strategy, cos_alpha, M,
               out_ids, out_dists, counters):
    """Greedy occlusion scan of one candidate slice (ascending (dist, id)).

    strategy 0 keeps the bare dominance rule; strategy 1 additionally
    requires the angle at the kept neighbor to exceed alpha.  A kept
    neighbor at distance zero blocks everything after it, and a candidate
    coinciding with a kept neighbor is always dropped; both cases skip the
    angle test.  counters[0] accumulates distance kernel calls, counters[1]
    angle evaluations.  Returns the kept count.
    """
    kept = 0
    for ci in range(lo, hi):
        if kept == M:
            break
        v = cand_ids[ci]
        if v == u:
            continue
        dv = cand_dists[ci]
        dominated = False
        for kj in range(kept):
            w = out_ids[kj]
            duw = out_dists[kj]
            if duw == 0.0:
                dominated = True
                break
            dwv = squared_l2(data[w], data[v])
            counters[0] += 1
            if dwv == 0.0:
                dominated = True
                break
            if dwv < dv:
                if strategy == 0:
                    dominated = True
                    break
                c = cos_angle_from_sq(duw, dwv, dv)
                counters[1] += 1
                if c < cos_alpha:
                    dominated = True
                    break
        if not dominated:
            out_ids[kept] = v
            out_dists[kept] = dv
            kept += 1
    return kept


@njit(cache=True, parallel=True)
def prune_batch(data, cand_off, cand_counts, cand_ids, cand_dists,
                strategy, cos_alpha, M,
                out_ids, out_dists, out_counts, dist_evals, angle_evals):
    """Prune every node's candidate slice independently (CSR input; slice u
    holds cand_counts[u] live entries starting at cand_off[u])."""
    n = out_ids.shape[0]
    for u in prange(n):
        counters = np.zeros(2, dtype=np.int64)
        kept = _prune_row(data, u, cand_ids, cand_dists,
                          cand_off[u], cand_off[u] + cand_counts[u],
                          strategy, cos_alpha,
                          M, out_ids[u], out_dists[u], counters)
        out_counts[u] = kept
        dist_evals[u] = counters[0]
        angle_evals[u] = counters[1]


@njit(cache=True, parallel=True)
def prune_batch_cached(data, cand_off, cand_counts, cand_ids, cand_dists,
                       cand_old,
                       strategy, cos_alpha, M,
                       pk_off, pk_ids_sorted,
                       dom_off, dom_b, dom_a, have_prev,
                       out_ids, out_dists, out_counts,
                       new_dom_b, new_dom_a, new_dom_counts,
                       dist_evals, angle_evals):
    """Occlusion scan reusing verdicts recorded by the previous iteration.

    Two reuses, both output-preserving:
      * a candidate kept last time skips re-checks against kept neighbors
        that were also kept last time (that exact check already failed);
      * a candidate pruned last time is dropped outright when its recorded
        dominator is already among the currently kept neighbors (dominance
        is a property of the fixed point set).
    Everything else falls through to the normal kernel evaluations.
    Records (kept list via out rows, dominator pairs sorted by candidate id)
    are always emitted for the next iteration.
    """
    n = out_ids.shape[0]
    for u in prange(n):
        counters = np.zeros(2, dtype=np.int64)
        kept = 0
        kept_old = np.zeros(out_ids.shape[1], dtype=np.bool_)
        nrec = 0
        for ci in range(cand_off[u], cand_off[u] + cand_counts[u]):
            if kept == M:
                break
            v = cand_ids[ci]
            if v == u:
                continue
            dv = cand_dists[ci]
            v_in_prev_kept = False
            dom_prev = np.int32(-1)
            if have_prev and cand_old[ci]:
                if bsearch(pk_ids_sorted, pk_off[u], pk_off[u + 1], v) >= 0:
                    v_in_prev_kept = True
                else:
                    pos = bsearch(dom_b, dom_off[u], dom_off[u + 1], v)
                    if pos >= 0:
                        dom_prev = dom_a[pos]
            dominated = False
            dominator = np.int32(-1)
            if dom_prev >= 0:
                for kj in range(kept):
                    if out_ids[u, kj] == dom_prev:
                        dominated = True
                        dominator = dom_prev
                        break
            if not dominated:
                for kj in range(kept):
                    w = out_ids[u, kj]
                    if v_in_prev_kept and kept_old[kj]:
                        continue
                    duw = out_dists[u, kj]
                    if duw == 0.0:
                        dominated = True
                    else:
                        dwv = squared_l2(data[w], data[v])
                        counters[0] += 1
                        if dwv == 0.0:
                            dominated = True
                        elif dwv < dv:
                            if strategy == 0:
                                dominated = True
                            else:
                                c = cos_angle_from_sq(duw, dwv, dv)
                                counters[1] += 1
                                if c < cos_alpha:
                                    dominated = True
                    if dominated:
                        dominator = w
                        break
            if dominated:
                new_dom_b[u, nrec] = v
                new_dom_a[u, nrec] = dominator
                nrec += 1
            else:
                kept_old[kept] = v_in_prev_kept
                out_ids[u, kept] = v
                out_dists[u, kept] = dv
                kept += 1
        out_counts[u] = kept
        new_dom_counts[u] = nrec
        # sort dominator pairs by candidate id for next iteration's lookups
        if nrec > 1:
            order = np.argsort(new_dom_b[u, :nrec], kind="mergesort")
            tb = np.empty(nrec, dtype=np.int32)
            ta = np.empty(nrec, dtype=np.int32)
            for t in range(nrec):
                tb[t] = new_dom_b[u, order[t]]
                ta[t] = new_dom_a[u, order[t]]
            new_dom_b[u, :nrec] = tb
            new_dom_a[u, :nrec] = ta
        dist_evals[u] = counters[0]
        angle_evals[u] = counters[1]


@njit(cache=True)
def scatter_reverse(adj_ids, adj_dists, counts, rev_off, rev_ids, rev_dists):
    """Fill reverse-edge CSR; iterating owners ascending keeps it ordered."""
    n = adj_ids.shape[0]
    fill = np.zeros(n, dtype=np.int64)
    for u in range(n):
        for j in range(counts[u]):
            v = adj_ids[u, j]
            slot = rev_off[v] + fill[v]
            rev_ids[slot] = u
            rev_dists[slot] = adj_dists[u, j]
            fill[v] += 1


@njit(cache=True, parallel=True)
def merge_with_reverse(adj_ids, adj_dists, counts, rev_off, rev_ids, rev_dists,
                       mrg_off, mrg_ids, mrg_dists, mrg_counts):
    """Per node, merge its own edges with its reverse edges into one
    ascending (dist, id) slice, dropping duplicate ids."""
    n = adj_ids.shape[0]
    for u in prange(n):
        rlo = rev_off[u]
        rhi = rev_off[u + 1]
        rcnt = rhi - rlo
        rid = np.empty(rcnt, dtype=np.int32)
        rdi = np.empty(rcnt, dtype=np.float32)
        for t in range(rcnt):
            rid[t] = rev_ids[rlo + t]
            rdi[t] = rev_dists[rlo + t]
        sort_pairs(rid, rdi, rcnt)
        base = mrg_off[u]
        i = 0
        j = 0
        m = 0
        last = np.int32(-1)
        while i < counts[u] or j < rcnt:
            take_own = False
            if j >= rcnt:
                take_own = True
            elif i < counts[u]:
                da = adj_dists[u, i]
                db = rdi[j]
                if da < db or (da == db and adj_ids[u, i] <= rid[j]):
                    take_own = True
            if take_own:
                cid = adj_ids[u, i]
                cdi = adj_dists[u, i]
                i += 1
            else:
                cid = rid[j]
                cdi = rdi[j]
                j += 1
            if cid == last:
                continue
            mrg_ids[base + m] = cid
            mrg_dists[base + m] = cdi
            last = cid
            m += 1
        mrg_counts[u] = m


# ---------------------------------------------------------------------------
# Cached per-node search (reuses distances recorded by the previous pass)
# ---------------------------------------------------------------------------

@njit(cache=True)
def batch_self_search_cached(data, adj, counts, edge_pos, k, L,
                             xp_off, xp_ids, xp_bo, rp_dists,
                             have_prev,
                             out_ids, out_dists, out_m,
                             dist_counts, memo_counts):
    """Per-node searches (entry point = the node itself) with memoisation.

    When the node being expanded was also expanded in u's previous-pass
    search and the edge to a neighbor already existed then, that neighbor's
    distance sits in the previous record and the kernel call is skipped.
    Outputs are bit-identical to the uncached kernel because only the
    arithmetic source changes, never the float32 value.

    Records emitted for the next pass: x_ids lists each node's expansions
    in search order with x_bo giving the start of the expansion's distance
    block inside r_dists; block slot j holds d(u, adj[v, j]) for the row
    adj[v] as it was during this pass.  edge_pos[v, j] maps the current
    edge to its slot in v's previous-pass row (-1 when it is new), so a
    lookup is one indexed load instead of a search.
    """
    n = data.shape[0]
    x_off = np.zeros(n + 1, dtype=np.int64)
    x_buf = np.empty(8 * n, dtype=np.int32)
    b_buf = np.empty(8 * n, dtype=np.int64)
    r_buf = np.empty(32 * n, dtype=np.float32)
    x_n = 0
    r_n = 0
    pool_ids = np.empty(L, dtype=np.int32)
    pool_dists = np.empty(L, dtype=np.float32)
    pool_exp = np.zeros(L, dtype=np.bool_)
    visited = np.zeros(n, dtype=np.uint8)
    touched = np.empty(n, dtype=np.int32)
    dist_of = np.empty(n, dtype=np.float32)
    for u in range(n):
        pool_exp[:] = False
        n_t = 0
        n_dist = 0
        n_memo = 0
        visited[u] = 1
        touched[n_t] = u
        n_t += 1
        d0 = squared_l2(data[u], data[u])
        n_dist += 1
        dist_of[u] = d0
        size = pool_insert(pool_ids, pool_dists, pool_exp, 0, L, u, d0)
        xp_lo = xp_off[u]
        xp_hi = xp_off[u + 1]
        while True:
            idx = first_unexpanded(pool_exp, size, L)
            if idx < 0:
                break
            v = pool_ids[idx]
            pool_exp[idx] = True
            cnt = counts[v]
            if x_n >= x_buf.shape[0]:
                gx = np.empty(x_buf.shape[0] * 2, dtype=np.int32)
                gb = np.empty(x_buf.shape[0] * 2, dtype=np.int64)
                gx[:x_n] = x_buf[:x_n]
                gb[:x_n] = b_buf[:x_n]
                x_buf = gx
                b_buf = gb
            while r_n + cnt > r_buf.shape[0]:
                gr = np.empty(r_buf.shape[0] * 2, dtype=np.float32)
                gr[:r_n] = r_buf[:r_n]
                r_buf = gr
            x_buf[x_n] = v
            b_buf[x_n] = r_n
            x_n += 1
            bo = r_n
            r_n += cnt
            prev_bo = np.int64(-1)
            if have_prev:
                for t in range(xp_lo, xp_hi):
                    if xp_ids[t] == v:
                        prev_bo = xp_bo[t]
                        break
            for j in range(cnt):
                w = adj[v, j]
                if visited[w]:
                    # already offered this query; its distance is on hand
                    r_buf[bo + j] = dist_of[w]
                    continue
                visited[w] = 1
                touched[n_t] = w
                n_t += 1
                if prev_bo >= 0 and edge_pos[v, j] >= 0:
                    dw = rp_dists[prev_bo + edge_pos[v, j]]
                    n_memo += 1
                else:
                    dw = squared_l2(data[w], data[u])
                    n_dist += 1
                dist_of[w] = dw
                r_buf[bo + j] = dw
                size = pool_insert(pool_ids, pool_dists, pool_exp,
                                   size, L, w, dw)
        x_off[u + 1] = x_n
        for t in range(n_t):
            visited[touched[t]] = 0
        rid, rd = extract_results(pool_ids, pool_dists, size, k, np.int32(u))
        out_ids[u, : rid.shape[0]] = rid
        out_dists[u, : rd.shape[0]] = rd
        out_m[u] = rid.shape[0]
        dist_counts[u] = n_dist
        memo_counts[u] = n_memo
    return (x_off, x_buf[:x_n].copy(), b_buf[:x_n].copy(),
            r_buf[:r_n].copy())


@njit(cache=True, parallel=True)
def mark_old_edge_pos(adj, counts, prev_off, prev_ids_sorted, prev_pos,
                      edge_pos):
    """edge_pos[v, j] = position of edge (v, adj[v, j]) in v's previous
    adjacency row, or -1 if the edge is new.  prev_ids_sorted/prev_pos give
    each previous row id-sorted alongside its original position."""
    n = adj.shape[0]
    for v in prange(n):
        for j in range(counts[v]):
            idx = bsearch(
                prev_ids_sorted, prev_off[v], prev_off[v + 1], adj[v, j])
            if idx >= 0:
                edge_pos[v, j] = prev_pos[idx]
            else:
                edge_pos[v, j] = -1


@njit(cache=True, parallel=True)
def mark_fresh(cand_ids, cand_counts, prev_off, prev_ids_sorted, fresh):
    """fresh[u, j] = candidate id absent from node u's previous list."""
    n = cand_ids.shape[0]
    for u in prange(n):
        for j in range(cand_counts[u]):
            fresh[u, j] = bsearch(
                prev_ids_sorted, prev_off[u], prev_off[u + 1],
                cand_ids[u, j]) < 0


# ---------------------------------------------------------------------------
# NN-Descent
# ---------------------------------------------------------------------------

@njit(cache=True)
def row_insert(ids, dists, flags, k0, nid, nd):
    """Insert into a full sorted neighbor row iff strictly closer under
    (dist, id) than the current worst; returns 1 when accepted."""
    last = k0 - 1
    if nd > dists[last] or (nd == dists[last] and nid >= ids[last]):
        return 0
    lo = 0
    hi = k0
    while lo < hi:
        mid = (lo + hi) >> 1
        if dists[mid] < nd or (dists[mid] == nd and ids[mid] < nid):
            lo = mid + 1
        else:
            hi = mid
    if lo < k0 and ids[lo] == nid:
        return 0
    for j in range(last, lo, -1):
        ids[j] = ids[j - 1]
        dists[j] = dists[j - 1]
        flags[j] = flags[j - 1]
    ids[lo] = nid
    dists[lo] = nd
    flags[lo] = True
    return 1


@njit(cache=True, parallel=True)
def knng_init_rows(data, draws, out_ids, out_dists, short):
    """Fill each row with the first k0 distinct draws (self skipped via the
    shift trick), then sort by (dist, id).  Rows that could not reach k0
    distinct ids report a shortfall and are repaired by the caller."""
    n = data.shape[0]
    k0 = out_ids.shape[1]
    for u in prange(n):
        row = out_ids[u]
        cnt = 0
        for t in range(draws.shape[1]):
            if cnt == k0:
                break
            x = draws[u, t]
            if x >= u:
                x += 1
            lo = 0
            hi = cnt
            while lo < hi:
                mid = (lo + hi) >> 1
                if row[mid] < x:
                    lo = mid + 1
                else:
                    hi = mid
            if lo < cnt and row[lo] == x:
                continue
            for b in range(cnt, lo, -1):
                row[b] = row[b - 1]
            row[lo] = np.int32(x)
            cnt += 1
        short[u] = k0 - cnt
        if cnt == k0:
            for j in range(k0):
                out_dists[u, j] = squared_l2(data[row[j]], data[u])
            sort_pairs(row, out_dists[u], k0)


@njit(cache=True)
def scatter_reverse_flags(adj_ids, adj_dists, adj_flags, rev_off,
                          rev_ids, rev_dists, rev_flags):
    n = adj_ids.shape[0]
    k0 = adj_ids.shape[1]
    fill = np.zeros(n, dtype=np.int64)
    for u in range(n):
        for j in range(k0):
            v = adj_ids[u, j]
            slot = rev_off[v] + fill[v]
            rev_ids[slot] = u
            rev_dists[slot] = adj_dists[u, j]
            rev_flags[slot] = adj_flags[u, j]
            fill[v] += 1


@njit(cache=True, parallel=True)
def cap_reverse(rev_off, rev_ids, rev_dists, rev_flags, rcap,
                out_ids, out_dists, out_flags, out_counts):
    """Keep each node's closest rcap reverse edges, (dist, id) order."""
    n = out_ids.shape[0]
    for v in prange(n):
        lo = rev_off[v]
        hi = rev_off[v + 1]
        m = int(hi - lo)
        ri = np.empty(m, dtype=np.int32)
        rd = np.empty(m, dtype=np.float32)
        rf = np.empty(m, dtype=np.bool_)
        for t in range(m):
            ri[t] = rev_ids[lo + t]
            rd[t] = rev_dists[lo + t]
            rf[t] = rev_flags[lo + t]
        sort_triples(ri, rd, rf, m)
        keep = m if m < rcap else rcap
        for t in range(keep):
            out_ids[v, t] = ri[t]
            out_dists[v, t] = rd[t]
            out_flags[v, t] = rf[t]
        out_counts[v] = keep


@njit(cache=True)
def _select_join(f_ids, f_dists, f_flags, fcnt,
                 r_ids, r_dists, r_flags, rcnt,
                 cap_new, cap_old, o_ids, o_new, o_fwdpos):
    """Pick a node's join set: merge its forward and reverse edges in
    (dist, id) order, dropping duplicate ids, taking at most cap_new
    flagged-new and cap_old old entries.  o_fwdpos records the forward-row
    position of entries taken from the forward list (-1 for reverse-only),
    so the caller can clear the sampled-new flags."""
    i = 0
    j = 0
    m = 0
    n_new = 0
    n_old = 0
    last = np.int32(-1)
    while (i < fcnt or j < rcnt) and (n_new < cap_new or n_old < cap_old):
        take_f = False
        if j >= rcnt:
            take_f = True
        elif i < fcnt:
            da = f_dists[i]
            db = r_dists[j]
            if da < db or (da == db and f_ids[i] <= r_ids[j]):
                take_f = True
        if take_f:
            cid = f_ids[i]
            cfl = f_flags[i]
            cpos = i
            i += 1
        else:
            cid = r_ids[j]
            cfl = r_flags[j]
            cpos = -1
            j += 1
        if cid == last:
            continue
        last = cid
        if cfl:
            if n_new < cap_new:
                o_ids[m] = cid
                o_new[m] = True
                o_fwdpos[m] = cpos
                m += 1
                n_new += 1
        else:
            if n_old < cap_old:
                o_ids[m] = cid
                o_new[m] = False
                o_fwdpos[m] = cpos
                m += 1
                n_old += 1
    return m


@njit(cache=True, parallel=True)
def knng_join_round(data, ids, dists, flags,
                    rev_ids, rev_dists, rev_flags, rev_counts,
                    cap_new, cap_old,
                    out_ids, out_dists, out_flags, upd_counts, dist_evals):
    """One NN-Descent round, pull style: each node joins itself against the
    2-hop neighborhood reached through its sampled forward/reverse edges,
    skipping pairs where neither hop is flagged new.  Reads are against the
    frozen previous round (ids/dists/flags); writes go to each node's own
    out row, so rounds are bulk-synchronous and thread-count independent."""
    n, k0 = ids.shape
    cap = cap_new + cap_old
    for u in prange(n):
        seen = np.zeros(n, dtype=np.uint8)
        seen[u] = 1
        br_ids = np.empty(cap, dtype=np.int32)
        br_new = np.empty(cap, dtype=np.bool_)
        br_pos = np.empty(cap, dtype=np.int32)
        tg_ids = np.empty(cap, dtype=np.int32)
        tg_new = np.empty(cap, dtype=np.bool_)
        tg_pos = np.empty(cap, dtype=np.int32)
        nb = _select_join(ids[u], dists[u], flags[u], k0,
                          rev_ids[u], rev_dists[u], rev_flags[u],
                          rev_counts[u], cap_new, cap_old,
                          br_ids, br_new, br_pos)
        # sampled new edges become old for the next round
        for b in range(nb):
            if br_new[b] and br_pos[b] >= 0:
                out_flags[u, br_pos[b]] = False
        upd = 0
        ev = 0
        for b in range(nb):
            v = br_ids[b]
            bnew = br_new[b]
            nt = _select_join(ids[v], dists[v], flags[v], k0,
                              rev_ids[v], rev_dists[v], rev_flags[v],
                              rev_counts[v], cap_new, cap_old,
                              tg_ids, tg_new, tg_pos)
            for t in range(nt):
                if not (bnew or tg_new[t]):
                    continue
                w = tg_ids[t]
                if seen[w]:
                    continue
                seen[w] = 1
                dw = squared_l2(data[u], data[w])
                ev += 1
                upd += row_insert(out_ids[u], out_dists[u], out_flags[u],
                                  k0, w, dw)
        upd_counts[u] = upd
        dist_evals[u] = ev


@njit(cache=True)
def prune_row_single(data, u, off, cnts, ids, dists, strategy, cos_alpha, M,
                     out_ids, out_dists, out_counts, de, ae):
    """One-node wrapper over _prune_row (u need not equal a row index)."""
    counters = np.zeros(2, dtype=np.int64)
    kept = _prune_row(data, u, ids, dists, off[0], off[0] + cnts[0],
                      strategy, cos_alpha, M, out_ids[0], out_dists[0],
                      counters)
    out_counts[0] = kept
    de[0] = counters[0]
    ae[0] = counters[1]


# ---------------------------------------------------------------------------
# Incremental layered insertion
# ---------------------------------------------------------------------------

@njit(cache=True)
def hnsw_insert_all(data, levels, adj3, dst3, cnt2, ef, M,
                    w0_ids, w0_counts, record):
    """Sequential node-by-node layered insertion.

    adj3/dst3/cnt2 are (n_layers, n, M+1) / (n_layers, n) working arrays in
    global ids; rows stay (dist, id) ascending throughout.  Greedy descent
    above the node's level, beam of width ef at and below it, occlusion
    pruning to M, then reverse insertion with a re-prune wherever a row
    overflows.  When record is set, each node's bottom-layer beam pool is
    stored in w0_ids before pruning.  Returns the distance-kernel count.
    """
    n = data.shape[0]
    visited = np.zeros(n, dtype=np.uint8)
    touched = np.empty(n, dtype=np.int64)
    pool_ids = np.empty(ef, dtype=np.int32)
    pool_dists = np.empty(ef, dtype=np.float32)
    pool_exp = np.zeros(ef, dtype=np.bool_)
    cand_ids = np.empty(M + 2, dtype=np.int32)
    cand_dists = np.empty(M + 2, dtype=np.float32)
    counters = np.zeros(2, dtype=np.int64)
    n_dist = 0
    ep = 0
    cur_max = levels[0]
    if record:
        w0_counts[0] = 0
    for u in range(1, n):
        lu = levels[u]
        q = data[u]
        e = ep
        de = squared_l2(data[e], q)
        n_dist += 1
        lev = cur_max
        while lev > lu:
            while True:
                cur = e
                for j in range(cnt2[lev, cur]):
                    v = adj3[lev, cur, j]
                    dv = squared_l2(data[v], q)
                    n_dist += 1
                    if dv < de or (dv == de and v < e):
                        de = dv
                        e = v
                if e == cur:
                    break
            lev -= 1
        lev = min(lu, cur_max)
        while lev >= 0:
            tcount = 0
            size = 0
            visited[e] = 1
            touched[tcount] = e
            tcount += 1
            pool_exp[:] = False
            size = pool_insert(pool_ids, pool_dists, pool_exp, size, ef,
                               e, de)
            while True:
                idx = first_unexpanded(pool_exp, size, ef)
                if idx < 0:
                    break
                v = pool_ids[idx]
                pool_exp[idx] = True
                for j in range(cnt2[lev, v]):
                    w = adj3[lev, v, j]
                    if visited[w]:
                        continue
                    visited[w] = 1
                    touched[tcount] = w
                    tcount += 1
                    dw = squared_l2(data[w], q)
                    n_dist += 1
                    size = pool_insert(pool_ids, pool_dists, pool_exp,
                                       size, ef, w, dw)
            for t in range(tcount):
                visited[touched[t]] = 0
            if lev == 0 and record:
                w0_counts[u] = size
                for t in range(size):
                    w0_ids[u, t] = pool_ids[t]
            counters[0] = 0
            counters[1] = 0
            kept = _prune_row(data, u, pool_ids, pool_dists, 0, size,
                              0, 0.5, M, adj3[lev, u], dst3[lev, u],
                              counters)
            n_dist += counters[0]
            cnt2[lev, u] = kept
            for j in range(kept):
                w = adj3[lev, u, j]
                dw = dst3[lev, u, j]
                c = cnt2[lev, w]
                pos = c
                while pos > 0 and (dst3[lev, w, pos - 1] > dw
                                   or (dst3[lev, w, pos - 1] == dw
                                       and adj3[lev, w, pos - 1] > u)):
                    adj3[lev, w, pos] = adj3[lev, w, pos - 1]
                    dst3[lev, w, pos] = dst3[lev, w, pos - 1]
                    pos -= 1
                adj3[lev, w, pos] = u
                dst3[lev, w, pos] = dw
                c += 1
                if c > M:
                    for t in range(c):
                        cand_ids[t] = adj3[lev, w, t]
                        cand_dists[t] = dst3[lev, w, t]
                    counters[0] = 0
                    counters[1] = 0
                    kw = _prune_row(data, w, cand_ids, cand_dists, 0, c,
                                    0, 0.5, M, adj3[lev, w], dst3[lev, w],
                                    counters)
                    n_dist += counters[0]
                    for t in range(kw, c):
                        adj3[lev, w, t] = EMPTY
                        dst3[lev, w, t] = np.inf
                    cnt2[lev, w] = kw
                else:
                    cnt2[lev, w] = c
            if size > 0:
                e = pool_ids[0]
                de = pool_dists[0]
            lev -= 1
        if lu > cur_max:
            ep = u
            cur_max = lu
    return n_dist
