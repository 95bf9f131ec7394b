"""Hierarchical navigable small world index over component means.

Layered proximity graph for approximate k-nearest-neighbor queries under the
Euclidean metric. Construction is deterministic for a fixed seed: node levels
come from a seeded geometric assignment with multiplier 1/ln(M), insertion
follows input order, and neighbor selection keeps the plain M nearest
candidates (no pruning heuristic). Distances are compared squared; reported
distances are true Euclidean. After fit the index is frozen and queries are
pure, so concurrent readers are safe.
"""

import hashlib
import struct

import numpy as np
from numba import njit, prange
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .density import means_checksum
from .io import FormatError

INDEX_MAGIC = b"COLDHNSW"
MAX_LEVEL = 48


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _dist2(data, i, q):
    s = 0.0
    for d in range(data.shape[1]):
        t = data[i, d] - q[d]
        s += t * t
    return s


@njit(cache=True, inline="always")
def _heap_push(keys, vals, size, key, val):
    i = size
    keys[i] = key
    vals[i] = val
    while i > 0:
        p = (i - 1) >> 1
        if keys[p] <= keys[i]:
            break
        keys[p], keys[i] = keys[i], keys[p]
        vals[p], vals[i] = vals[i], vals[p]
        i = p
    return size + 1


@njit(cache=True, inline="always")
def _heap_pop(keys, vals, size):
    size -= 1
    keys[0] = keys[size]
    vals[0] = vals[size]
    i = 0
    while True:
        l = 2 * i + 1
        r = l + 1
        m = i
        if l < size and keys[l] < keys[m]:
            m = l
        if r < size and keys[r] < keys[m]:
            m = r
        if m == i:
            break
        keys[m], keys[i] = keys[i], keys[m]
        vals[m], vals[i] = vals[i], vals[m]
        i = m
    return size


@njit(cache=True)
def _greedy_descent(data, nbrs, deg, q, ep):
    """Move to the closest neighbor until no neighbor improves."""
    cur = _dist2(data, ep, q)
    improved = True
    while improved:
        improved = False
        for j in range(deg[ep]):
            e = nbrs[ep, j]
            d = _dist2(data, e, q)
            if d < cur:
                cur = d
                ep = e
                improved = True
    return ep


@njit(cache=True)
def _search_layer(data, nbrs, deg, q, ep, ef, visited, stamp):
    """Beam search on one layer; returns up to ef (d2, id) pairs, unsorted.

    The result set is a max-heap (negated keys) capped at ef; the candidate
    min-heap holds every node accepted into the result at some point.
    """
    n = data.shape[0]
    cand_k = np.empty(n + 1, np.float64)
    cand_v = np.empty(n + 1, np.int32)
    res_k = np.empty(ef + 1, np.float64)
    res_v = np.empty(ef + 1, np.int32)
    cand_n = 0
    res_n = 0

    visited[ep] = stamp
    d0 = _dist2(data, ep, q)
    cand_n = _heap_push(cand_k, cand_v, cand_n, d0, ep)
    res_n = _heap_push(res_k, res_v, res_n, -d0, ep)

    while cand_n > 0:
        cd = cand_k[0]
        c = cand_v[0]
        if res_n >= ef and cd > -res_k[0]:
            break
        cand_n = _heap_pop(cand_k, cand_v, cand_n)
        for j in range(deg[c]):
            e = nbrs[c, j]
            if visited[e] == stamp:
                continue
            visited[e] = stamp
            de = _dist2(data, e, q)
            if res_n < ef or de < -res_k[0]:
                cand_n = _heap_push(cand_k, cand_v, cand_n, de, e)
                res_n = _heap_push(res_k, res_v, res_n, -de, e)
                if res_n > ef:
                    res_n = _heap_pop(res_k, res_v, res_n)

    out_d = np.empty(res_n, np.float64)
    out_i = np.empty(res_n, np.int32)
    for j in range(res_n):
        out_d[j] = -res_k[j]
        out_i[j] = res_v[j]
    return out_d, out_i


@njit(cache=True)
def _sort_by_dist_then_id(d2, ids):
    """Ascending distance, ties broken by ascending id; returns permutation."""
    order = np.argsort(d2)
    i = 0
    n = len(order)
    while i < n:
        j = i + 1
        while j < n and d2[order[j]] == d2[order[i]]:
            j += 1
        # insertion sort of ids within the tied run
        for a in range(i + 1, j):
            key = order[a]
            b = a - 1
            while b >= i and ids[order[b]] > ids[key]:
                order[b + 1] = order[b]
                b -= 1
            order[b + 1] = key
        i = j
    return order


@njit(cache=True)
def _prune_neighbors(data, nbrs, deg, node, cap):
    """Keep the cap nearest links of an overflowing node (ties: lower id)."""
    m = deg[node]
    d2 = np.empty(m, np.float64)
    ids = np.empty(m, np.int32)
    for j in range(m):
        ids[j] = nbrs[node, j]
        d2[j] = _dist2(data, ids[j], data[node])
    order = _sort_by_dist_then_id(d2, ids)
    kept = np.empty(cap, np.int32)
    for j in range(cap):
        kept[j] = ids[order[j]]
    for j in range(cap):
        nbrs[node, j] = kept[j]
    deg[node] = cap


@njit(cache=True)
def _build_graph(data, levels, nbrs, deg, m_param, ef_construction):
    """Insert all nodes in input order; returns the final entry point id."""
    n = data.shape[0]
    entry = 0
    max_level = levels[0]
    visited = np.zeros(n, np.int64)
    stamp = 0
    for i in range(1, n):
        q = data[i]
        lvl = levels[i]
        ep = entry
        for lc in range(max_level, lvl, -1):
            ep = _greedy_descent(data, nbrs[lc], deg[lc], q, ep)
        top = min(lvl, max_level)
        for lc in range(top, -1, -1):
            stamp += 1
            d2, ids = _search_layer(data, nbrs[lc], deg[lc], q, ep, ef_construction, visited, stamp)
            order = _sort_by_dist_then_id(d2, ids)
            cap = 2 * m_param if lc == 0 else m_param
            n_sel = min(m_param, len(order))
            for s in range(n_sel):
                v = ids[order[s]]
                nbrs[lc][i, deg[lc][i]] = v
                deg[lc][i] += 1
                nbrs[lc][v, deg[lc][v]] = i
                deg[lc][v] += 1
                if deg[lc][v] > cap:
                    _prune_neighbors(data, nbrs[lc], deg[lc], v, cap)
            ep = ids[order[0]]
        if lvl > max_level:
            max_level = lvl
            entry = i
    return entry, max_level


@njit(cache=True, parallel=True)
def _batch_query(data, nbrs, deg, entry, max_level, queries, k, ef):
    p = queries.shape[0]
    n = data.shape[0]
    out_ids = np.empty((p, k), np.int32)
    out_d2 = np.empty((p, k), np.float64)
    for qi in prange(p):
        q = queries[qi]
        visited = np.zeros(n, np.int64)
        ep = entry
        for lc in range(max_level, 0, -1):
            ep = _greedy_descent(data, nbrs[lc], deg[lc], q, ep)
        d2, ids = _search_layer(data, nbrs[0], deg[0], q, ep, ef, visited, 1)
        order = _sort_by_dist_then_id(d2, ids)
        found = len(order)
        for j in range(k):
            if j < found:
                out_ids[qi, j] = ids[order[j]]
                out_d2[qi, j] = d2[order[j]]
            else:
                # beam exhausted before k results (disconnected stragglers);
                # caller repairs these rows exactly
                out_ids[qi, j] = -1
                out_d2[qi, j] = np.inf
    return out_ids, out_d2


# ---------------------------------------------------------------------------
# estimator
# ---------------------------------------------------------------------------


class HnswIndex(BaseEstimator):
    """Approximate k-NN index over latent means.

    Parameters follow the usual HNSW naming: ``M`` is the max link count per
    node per layer (doubled at layer 0), ``ef_construction`` the construction
    beam width, ``ef_search`` the default query beam width.
    """

    def __init__(self, M=16, ef_construction=200, ef_search=200, seed=0):
        self.M = M
        self.ef_construction = ef_construction
        self.ef_search = ef_search
        self.seed = seed

    def fit(self, X):
        X = check_array(X, dtype=np.float64)
        n = X.shape[0]
        rng = np.random.default_rng(self.seed)
        m_l = 1.0 / np.log(self.M)
        levels = np.minimum(
            np.floor(-np.log(rng.random(n)) * m_l).astype(np.int32), MAX_LEVEL
        )
        n_layers = int(levels.max()) + 1
        cap = 2 * self.M
        self.data_ = np.ascontiguousarray(X)
        self.levels_ = levels
        # one extra slot so a link can be added before pruning back to cap
        self.neighbors_ = np.full((n_layers, n, cap + 1), -1, np.int32)
        self.degrees_ = np.zeros((n_layers, n), np.int32)
        if n == 1:
            self.entry_, self.max_level_ = 0, int(levels[0])
        else:
            self.entry_, self.max_level_ = _build_graph(
                self.data_, levels, self.neighbors_, self.degrees_, self.M, self.ef_construction
            )
        self.checksum_ = means_checksum(self.data_)
        return self

    @property
    def n_points_(self):
        return self.data_.shape[0]

    def _resolve_ef(self, k, ef_search):
        if ef_search is None:
            return max(k, self.ef_search)
        if ef_search < k:
            raise ValueError(f"ef_search={ef_search} must be >= k={k}")
        return ef_search

    def kneighbors(self, g, k, ef_search=None):
        """Approximate k nearest stored points to g: (ids, distances)."""
        ids, d2 = self.kneighbors_batch(np.asarray(g, dtype=np.float64)[None, :], k, ef_search, return_dist=True)
        return ids[0], np.sqrt(d2[0])

    def kneighbors_batch(self, queries, k, ef_search=None, return_dist=False):
        check_is_fitted(self, "data_")
        queries = check_array(queries, dtype=np.float64)
        if queries.shape[1] != self.data_.shape[1]:
            raise ValueError("query dimension does not match index")
        if not 1 <= k <= self.n_points_:
            raise ValueError(f"k={k} out of range [1, {self.n_points_}]")
        ef = self._resolve_ef(k, ef_search)
        ids, d2 = _batch_query(
            self.data_, self.neighbors_, self.degrees_,
            self.entry_, self.max_level_, np.ascontiguousarray(queries), k, ef,
        )
        short = np.nonzero(ids[:, -1] < 0)[0]
        for qi in short:
            exact_ids, exact_d = brute_force_knn(self.data_, queries[qi], k)
            ids[qi] = exact_ids
            d2[qi] = exact_d**2
        if return_dist:
            return ids, d2
        return ids

    # -- persistence --------------------------------------------------------

    def save(self, path):
        check_is_fitted(self, "data_")
        n_layers, n, cap = self.neighbors_.shape
        with open(path, "wb") as fh:
            fh.write(INDEX_MAGIC)
            fh.write(struct.pack(
                "<IIIIIIIii", n, self.data_.shape[1], n_layers, cap,
                self.M, self.ef_construction, self.seed, self.entry_, self.max_level_,
            ))
            fh.write(bytes.fromhex(self.checksum_))
            fh.write(self.levels_.astype("<i4").tobytes())
            fh.write(self.degrees_.astype("<i4").tobytes())
            fh.write(self.neighbors_.astype("<i4").tobytes())
            fh.write(self.data_.astype("<f8").tobytes())

    @classmethod
    def load(cls, path, expected_means=None):
        """Load an index; rejects the file if its checksum does not match
        ``expected_means`` (when given)."""
        with open(path, "rb") as fh:
            if fh.read(8) != INDEX_MAGIC:
                raise FormatError(f"{path}: bad magic")
            hdr = fh.read(struct.calcsize("<IIIIIIIii"))
            n, d, n_layers, cap, m_param, ef_c, seed, entry, max_level = struct.unpack("<IIIIIIIii", hdr)
            checksum = fh.read(32).hex()
            levels = np.frombuffer(fh.read(4 * n), dtype="<i4").copy()
            degrees = np.frombuffer(fh.read(4 * n_layers * n), dtype="<i4").reshape(n_layers, n).copy()
            neighbors = np.frombuffer(fh.read(4 * n_layers * n * cap), dtype="<i4").reshape(n_layers, n, cap).copy()
            data = np.frombuffer(fh.read(8 * n * d), dtype="<f8").reshape(n, d).copy()
        if expected_means is not None and means_checksum(expected_means) != checksum:
            raise FormatError(f"{path}: checksum does not match the given encodings")
        index = cls(M=m_param, ef_construction=ef_c, seed=seed)
        index.data_ = np.ascontiguousarray(data)
        index.levels_ = levels
        index.degrees_ = degrees
        index.neighbors_ = neighbors
        index.entry_ = entry
        index.max_level_ = max_level
        index.checksum_ = checksum
        return index


def brute_force_knn(means, g, k):
    """Exact k nearest by full scan; ascending distance, ties by ascending id."""
    means = np.asarray(means, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    n = means.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range [1, {n}]")
    d2 = np.sum((means - g) ** 2, axis=1)
    order = np.lexsort((np.arange(n), d2))[:k]
    return order, np.sqrt(d2[order])


def recall_at_k(index, means, queries, k, ef_search=None):
    """Mean fraction of true k-nearest ids recovered by the index."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if len(queries) == 0:
        raise ValueError("queries must be nonempty")
    approx = index.kneighbors_batch(queries, k, ef_search=ef_search)
    hits = 0
    for qi, q in enumerate(queries):
        exact_ids, _ = brute_force_knn(means, q, k)
        hits += len(set(approx[qi].tolist()) & set(exact_ids.tolist()))
    return hits / (k * len(queries))
