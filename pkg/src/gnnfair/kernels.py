"""
Hot numeric kernels.

Every kernel exists twice: a loop version compiled with ``numba.njit`` and a
vectorised numpy version. The public names at the bottom of the module are
bound to one or the other at import time (see :mod:`gnnfair._accel`). Both
versions are importable under ``*_nb`` / ``*_np`` so tests and the benchmark
can compare them directly.

Graphs are passed as CSR arrays ``(indptr, indices)`` of an undirected simple
graph, every edge stored in both directions.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

# --------------------------------------------------------------------------
# one-step mean propagation: (D+I)^{-1} (A+I) X


@njit(cache=True)
def propagate_mean_nb(indptr, indices, X):
    n, d = X.shape
    out = np.empty((n, d))
    for i in range(n):
        start = indptr[i]
        stop = indptr[i + 1]
        denom = stop - start + 1.0
        for c in range(d):
            acc = 0.0
            for p in range(start, stop):
                acc += X[indices[p], c]
            out[i, c] = (X[i, c] + acc) / denom
    return out


def propagate_mean_np(indptr, indices, X):
    n = X.shape[0]
    deg = np.diff(indptr)
    sums = np.zeros_like(X, dtype=np.float64)
    nonempty = deg > 0
    if nonempty.any():
        gathered = X[indices]
        sums[nonempty] = np.add.reduceat(gathered, indptr[:-1][nonempty], axis=0)
    return (X + sums) / (deg + 1.0).reshape(n, 1)


# --------------------------------------------------------------------------
# multi-source BFS (hop distance to the nearest source, -1 if unreachable)


@njit(cache=True)
def multi_source_bfs_nb(indptr, indices, sources):
    n = indptr.shape[0] - 1
    dist = np.full(n, -1, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    head = 0
    tail = 0
    for s in sources:
        if dist[s] < 0:
            dist[s] = 0
            queue[tail] = s
            tail += 1
    while head < tail:
        v = queue[head]
        head += 1
        for p in range(indptr[v], indptr[v + 1]):
            w = indices[p]
            if dist[w] < 0:
                dist[w] = dist[v] + 1
                queue[tail] = w
                tail += 1
    return dist


def _gather_neighbors(indptr, indices, frontier):
    """Concatenated neighbour lists of ``frontier`` plus the owning frontier node."""
    starts = indptr[frontier]
    counts = indptr[frontier + 1] - starts
    total = int(counts.sum())
    if total == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty
    offsets = np.repeat(starts - np.cumsum(counts) + counts, counts) + np.arange(total)
    return indices[offsets], np.repeat(frontier, counts)


def multi_source_bfs_np(indptr, indices, sources):
    n = indptr.shape[0] - 1
    dist = np.full(n, -1, dtype=np.int64)
    frontier = np.unique(np.asarray(sources, dtype=np.int64))
    dist[frontier] = 0
    level = 0
    while frontier.size:
        nbrs, _ = _gather_neighbors(indptr, indices, frontier)
        nbrs = np.unique(nbrs[dist[nbrs] < 0])
        level += 1
        dist[nbrs] = level
        frontier = nbrs
    return dist


# --------------------------------------------------------------------------
# harmonic closeness: sum over u != v of 1 / d(v, u)


@njit(cache=True)
def harmonic_closeness_nb(indptr, indices):
    n = indptr.shape[0] - 1
    out = np.zeros(n)
    dist = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    for s in range(n):
        dist[:] = -1
        dist[s] = 0
        queue[0] = s
        head = 0
        tail = 1
        acc = 0.0
        while head < tail:
            v = queue[head]
            head += 1
            for p in range(indptr[v], indptr[v + 1]):
                w = indices[p]
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    acc += 1.0 / dist[w]
                    queue[tail] = w
                    tail += 1
        out[s] = acc
    return out


def harmonic_closeness_np(indptr, indices):
    n = indptr.shape[0] - 1
    out = np.zeros(n)
    for s in range(n):
        dist = multi_source_bfs_np(indptr, indices, np.array([s]))
        reach = dist > 0
        out[s] = np.sum(1.0 / dist[reach])
    return out


# --------------------------------------------------------------------------
# Brandes betweenness, undirected, unnormalised, unordered pairs counted once


@njit(cache=True)
def brandes_betweenness_nb(indptr, indices):
    n = indptr.shape[0] - 1
    bc = np.zeros(n)
    dist = np.empty(n, dtype=np.int64)
    sigma = np.empty(n)
    delta = np.empty(n)
    order = np.empty(n, dtype=np.int64)
    for s in range(n):
        dist[:] = -1
        sigma[:] = 0.0
        delta[:] = 0.0
        dist[s] = 0
        sigma[s] = 1.0
        order[0] = s
        head = 0
        tail = 1
        while head < tail:
            v = order[head]
            head += 1
            for p in range(indptr[v], indptr[v + 1]):
                w = indices[p]
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    order[tail] = w
                    tail += 1
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
        for k in range(tail - 1, 0, -1):
            w = order[k]
            coeff = (1.0 + delta[w]) / sigma[w]
            for p in range(indptr[w], indptr[w + 1]):
                v = indices[p]
                if dist[v] == dist[w] - 1:
                    delta[v] += sigma[v] * coeff
            bc[w] += delta[w]
    return bc / 2.0


def brandes_betweenness_np(indptr, indices):
    n = indptr.shape[0] - 1
    bc = np.zeros(n)
    for s in range(n):
        dist = np.full(n, -1, dtype=np.int64)
        sigma = np.zeros(n)
        dist[s] = 0
        sigma[s] = 1.0
        frontier = np.array([s], dtype=np.int64)
        levels = []  # (parent, child) edges between consecutive levels
        depth = 0
        while frontier.size:
            nbrs, owners = _gather_neighbors(indptr, indices, frontier)
            fresh = nbrs[dist[nbrs] < 0]
            dist[np.unique(fresh)] = depth + 1
            keep = dist[nbrs] == depth + 1
            parents, children = owners[keep], nbrs[keep]
            np.add.at(sigma, children, sigma[parents])
            levels.append((parents, children))
            frontier = np.unique(children)
            depth += 1
        delta = np.zeros(n)
        for parents, children in reversed(levels):
            np.add.at(delta, parents, sigma[parents] * (1.0 + delta[children]) / sigma[children])
        delta[s] = 0.0
        bc += delta
    return bc / 2.0


# --------------------------------------------------------------------------
# PageRank power iteration on the undirected graph, dangling mass spread uniformly


@njit(cache=True)
def pagerank_nb(indptr, indices, damping, tol, max_iter):
    n = indptr.shape[0] - 1
    x = np.full(n, 1.0 / n)
    new = np.empty(n)
    contrib = np.empty(n)
    for it in range(1, max_iter + 1):
        dangling = 0.0
        for i in range(n):
            deg = indptr[i + 1] - indptr[i]
            if deg == 0:
                dangling += x[i]
                contrib[i] = 0.0
            else:
                contrib[i] = x[i] / deg
        base = (1.0 - damping) / n + damping * dangling / n
        err = 0.0
        for i in range(n):
            acc = 0.0
            for p in range(indptr[i], indptr[i + 1]):
                acc += contrib[indices[p]]
            new[i] = base + damping * acc
            err += abs(new[i] - x[i])
        x[:] = new
        if err < tol:
            return x, it
    return x, -1


def pagerank_np(indptr, indices, damping, tol, max_iter):
    n = indptr.shape[0] - 1
    deg = np.diff(indptr)
    dangling_mask = deg == 0
    safe_deg = np.where(dangling_mask, 1, deg)
    nonempty = ~dangling_mask
    starts = indptr[:-1][nonempty]
    x = np.full(n, 1.0 / n)
    for it in range(1, max_iter + 1):
        contrib = np.where(dangling_mask, 0.0, x / safe_deg)
        dangling = x[dangling_mask].sum()
        acc = np.zeros(n)
        if starts.size:
            acc[nonempty] = np.add.reduceat(contrib[indices], starts)
        new = (1.0 - damping) / n + damping * dangling / n + damping * acc
        err = np.abs(new - x).sum()
        x = new
        if err < tol:
            return x, it
    return x, -1


# --------------------------------------------------------------------------
# nearest reference row (L2) for every query row; ties go to the lower index


@njit(cache=True)
def nearest_rows_nb(Q, R):
    nq, d = Q.shape
    nr = R.shape[0]
    best = np.empty(nq)
    arg = np.empty(nq, dtype=np.int64)
    for i in range(nq):
        bi = np.inf
        ai = -1
        for j in range(nr):
            acc = 0.0
            for c in range(d):
                diff = Q[i, c] - R[j, c]
                acc += diff * diff
            if acc < bi:
                bi = acc
                ai = j
        best[i] = np.sqrt(bi)
        arg[i] = ai
    return best, arg


def nearest_rows_np(Q, R, chunk_elems=4_000_000):
    nq, d = Q.shape
    nr = R.shape[0]
    best = np.empty(nq)
    arg = np.empty(nq, dtype=np.int64)
    step = max(1, chunk_elems // max(1, nr * max(d, 1)))
    for lo in range(0, nq, step):
        hi = min(nq, lo + step)
        diff = Q[lo:hi, None, :] - R[None, :, :]
        sq = np.einsum("ijk,ijk->ij", diff, diff)
        a = np.argmin(sq, axis=1)
        arg[lo:hi] = a
        best[lo:hi] = np.sqrt(sq[np.arange(hi - lo), a])
    return best, arg


# --------------------------------------------------------------------------
# margin indicators: out[i, k] = logits[i, k] <= gamma + max_{j != k} logits[i, j]


@njit(cache=True)
def margin_indicators_nb(logits, gamma):
    n, k = logits.shape
    out = np.empty((n, k), dtype=np.bool_)
    for i in range(n):
        top = -np.inf
        second = -np.inf
        top_idx = -1
        for c in range(k):
            v = logits[i, c]
            if v > top:
                second = top
                top = v
                top_idx = c
            elif v > second:
                second = v
        for c in range(k):
            other = second if c == top_idx else top
            out[i, c] = logits[i, c] <= gamma + other
    return out


def margin_indicators_np(logits, gamma):
    n, k = logits.shape
    srt = np.sort(logits, axis=1)
    top, second = srt[:, -1], srt[:, -2]
    top_idx = np.argmax(logits, axis=1)
    other = np.repeat(top[:, None], k, axis=1)
    other[np.arange(n), top_idx] = second
    return logits <= gamma + other


# --------------------------------------------------------------------------

PAIRS = {
    "propagate_mean": (propagate_mean_nb, propagate_mean_np),
    "multi_source_bfs": (multi_source_bfs_nb, multi_source_bfs_np),
    "harmonic_closeness": (harmonic_closeness_nb, harmonic_closeness_np),
    "brandes_betweenness": (brandes_betweenness_nb, brandes_betweenness_np),
    "pagerank": (pagerank_nb, pagerank_np),
    "nearest_rows": (nearest_rows_nb, nearest_rows_np),
    "margin_indicators": (margin_indicators_nb, margin_indicators_np),
}

_pick = 0 if USE_NUMBA else 1

propagate_mean = PAIRS["propagate_mean"][_pick]
multi_source_bfs = PAIRS["multi_source_bfs"][_pick]
harmonic_closeness = PAIRS["harmonic_closeness"][_pick]
brandes_betweenness = PAIRS["brandes_betweenness"][_pick]
pagerank = PAIRS["pagerank"][_pick]
nearest_rows = PAIRS["nearest_rows"][_pick]
margin_indicators = PAIRS["margin_indicators"][_pick]
