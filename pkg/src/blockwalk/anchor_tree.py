"""Anchor trees under a Bregman divergence.

Construction runs in phases: grow ceil(sqrt(n)) anchors (each a pivot point
with members sorted by decreasing divergence to it), agglomerate the anchors
into a binary skeleton by cheapest merge cost, then recurse inside every
multi-point anchor until all leaves are singletons. Stealing during the
growing phase prunes with a threshold below which a member provably cannot be
closer to the new pivot, generalizing the Euclidean halfway rule.

Every node stores four additive statistics (sum of generator values, sum of
x'grad(x), coordinate sums, gradient sums) that later decouple per-block
divergence sums into O(1) evaluations. The vector statistics keep the
offset+sparse decomposition of the smoothed data.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .divergence import (
    DivergenceSpec,
    DomainError,
    _grad_inv_terms,
    _grad_terms,
    _phi_terms,
    _xgrad_terms,
    bregman_divergence,
    grad_phi,
    grad_phi_inv,
    ov_divergence,
    ov_grad,
    ov_grad_inv,
    ov_phi,
    ov_xdotgrad,
)
from .vectors import OffsetVec

__all__ = [
    "Anchor",
    "NodeStats",
    "ClusterTree",
    "steal_threshold",
    "grow_anchors",
    "merge_cost",
    "agglomerate_anchors",
    "AggloTree",
    "build_cluster_tree",
    "node_stats",
    "bregman_information",
]


# ---------------------------------------------------------------------------
# Per-dataset workspace: domain validation + cached per-row scalars
# ---------------------------------------------------------------------------


class _Workspace:
    def __init__(self, data, spec):
        if spec.dim != data.dim:
            raise ValueError("spec.dim does not match data dimension")
        self.data = data
        self.spec = spec
        self.eps = data.epsilon
        self.dim = data.dim
        self.csr = data.csr()
        self.nnz_row = data.nnz_per_row()
        self.row_sum = data.row_sums()
        self._validate_domain()
        vals = self.csr.data
        smoothed = vals + self.eps
        idx = self.csr.indices
        phi_parts = _phi_terms(spec, smoothed, idx)
        xg_parts = _xgrad_terms(spec, smoothed, idx)
        self.phi_row = self._row_reduce(phi_parts) + (
            self.dim - self.nnz_row
        ) * self._base_term(_phi_terms, "generator")
        self.s2_row = self._row_reduce(xg_parts) + (
            self.dim - self.nnz_row
        ) * self._base_term(_xgrad_terms, "x'grad(x)")

    def _row_reduce(self, parts):
        out = np.zeros(self.data.n_rows)
        np.add.at(out, np.repeat(np.arange(self.data.n_rows), self.nnz_row), parts)
        return out

    def _base_term(self, fn, what):
        if np.all(self.nnz_row == self.dim):
            return 0.0
        if self.spec.kind == "mahalanobis":
            if self.eps != 0.0:
                raise DomainError(
                    "mahalanobis does not support a smoothing offset; use epsilon=0"
                )
            return 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            out = float(fn(self.spec, np.array([self.eps]))[0])
        if not np.isfinite(out):
            bad = int(np.argmax(self.nnz_row < self.dim))
            raise DomainError(
                f"{self.spec.kind} {what} undefined for row {bad} with implicit "
                f"coordinate value {self.eps}; increase the smoothing offset"
            )
        return out

    def _validate_domain(self):
        kind = self.spec.kind
        smoothed = self.csr.data + self.eps
        if kind in ("gid", "kl", "itakura-saito") and self.eps == 0.0:
            short = self.nnz_row < self.dim
            if np.any(short):
                i = int(np.argmax(short))
                row_idx, _ = self.data.base.row(i)
                j = int(np.setdiff1d(np.arange(self.dim), row_idx)[0])
                raise DomainError(
                    f"{kind} requires positive inputs after smoothing; "
                    f"row {i} column {j} is zero with epsilon=0",
                    (i, j),
                )
        if kind == "logistic":
            if self.eps <= 0.0 and np.any(self.nnz_row < self.dim):
                i = int(np.argmax(self.nnz_row < self.dim))
                raise DomainError(
                    f"logistic requires entries in (0,1); row {i} has an implicit "
                    f"coordinate at {self.eps}",
                    i,
                )
            bad = (smoothed <= 0.0) | (smoothed >= 1.0)
            if np.any(bad):
                k = int(np.argmax(bad))
                raise DomainError(
                    f"logistic requires entries in (0,1); found {smoothed[k]}"
                )
        if kind == "kl":
            totals = self.row_sum + self.eps * self.dim
            off = np.abs(totals - 1.0)
            if np.any(off > 1e-6):
                i = int(np.argmax(off))
                raise DomainError(
                    f"kl requires simplex rows; row {i} sums to {totals[i]:.6g}", i
                )

    def row_ov(self, i):
        return self.data.row(int(i))

    def _gather(self, rows):
        """Flat (columns, values, lengths) of the sparse parts of `rows`,
        without constructing an intermediate sparse matrix."""
        indptr = self.csr.indptr
        starts = indptr[rows].astype(np.int64)
        lens = indptr[rows + 1].astype(np.int64) - starts
        total = int(lens.sum())
        if total == 0:
            return np.empty(0, np.int64), np.empty(0), lens
        prefix = np.zeros(rows.size, dtype=np.int64)
        np.cumsum(lens[:-1], out=prefix[1:])
        flat = np.arange(total, dtype=np.int64) + np.repeat(starts - prefix, lens)
        return self.csr.indices[flat], self.csr.data[flat], lens

    def mean_of_rows(self, rows):
        cols, vals, _ = self._gather(rows)
        acc = np.bincount(cols, weights=vals, minlength=self.dim)
        nz = np.nonzero(acc)[0]
        return OffsetVec(self.dim, self.eps, nz.astype(np.int64), acc[nz] / rows.size)

    def pivot_kernel(self, pivot):
        """Precompute the pieces of d(x_i, pivot) shared across rows."""
        g = ov_grad(self.spec, pivot)
        const = -ov_phi(self.spec, pivot) + ov_xdotgrad(self.spec, pivot)
        gdense = np.zeros(self.dim)
        gdense[g.idx] = g.val
        return g.base, g.val_sum, gdense, const

    def div_to_pivot(self, rows, kernel):
        g_base, g_val_sum, gdense, const = kernel
        cols, vals, lens = self._gather(rows)
        seg = np.repeat(np.arange(rows.size), lens)
        dots = np.bincount(seg, weights=vals * gdense[cols], minlength=rows.size)
        xg = (
            self.eps * g_base * self.dim
            + self.eps * g_val_sum
            + g_base * self.row_sum[rows]
            + dots
        )
        return self.phi_row[rows] + const - xg


# ---------------------------------------------------------------------------
# Anchors and the growing phase
# ---------------------------------------------------------------------------


@dataclass
class Anchor:
    """Pivot point with members sorted by nonincreasing divergence to it."""

    pivot: OffsetVec
    pivot_row: int
    members: np.ndarray
    dists: np.ndarray

    @property
    def radius(self):
        return float(self.dists[0]) if self.dists.size else 0.0

    @property
    def size(self):
        return int(self.members.size)

    def pivot_dense(self):
        return self.pivot.to_dense()


def steal_threshold(spec, p_curr, p_new):
    """No-steal bound between two pivots.

    Returns (threshold, minimizer): any point with divergence to p_curr at or
    below the threshold is provably at least as close to p_curr as to p_new.
    """
    p_curr = np.asarray(p_curr, dtype=np.float64)
    p_new = np.asarray(p_new, dtype=np.float64)
    mid = 0.5 * (grad_phi(spec, p_curr) + grad_phi(spec, p_new))
    ystar = grad_phi_inv(spec, mid)
    thr = 0.5 * (
        bregman_divergence(spec, ystar, p_curr) + bregman_divergence(spec, ystar, p_new)
    )
    return float(thr), ystar


def _union_values(pa, pb):
    if pa.idx.size == pb.idx.size and np.array_equal(pa.idx, pb.idx):
        return pa.idx, pa.base + pa.val, pb.base + pb.val
    u = np.union1d(pa.idx, pb.idx)
    va = np.full(u.size, pa.base)
    va[np.searchsorted(u, pa.idx)] = pa.base + pa.val
    vb = np.full(u.size, pb.base)
    vb[np.searchsorted(u, pb.idx)] = pb.base + pb.val
    return u, va, vb


@lru_cache(maxsize=4096)
def _scalar_threshold(kind, sigma, base_a, base_b):
    spec = DivergenceSpec(kind, 1, sigma=sigma if kind == "sq-euclidean" else 1.0)
    pa = OffsetVec(1, 0.0, np.array([0]), np.array([base_a]))
    pb = OffsetVec(1, 0.0, np.array([0]), np.array([base_b]))
    mid = OffsetVec.combine(ov_grad(spec, pa), 0.5, ov_grad(spec, pb), 0.5)
    ystar = ov_grad_inv(spec, mid)
    return 0.5 * (ov_divergence(spec, ystar, pa) + ov_divergence(spec, ystar, pb))


def _steal_threshold_ov(spec, pa, pb):
    # fused evaluation on the support union; off-union coordinates sit at the
    # two baselines and contribute one cached scalar term each
    u, va, vb = _union_values(pa, pb)
    ga = _grad_terms(spec, va, u)
    gb = _grad_terms(spec, vb, u)
    y = _grad_inv_terms(spec, 0.5 * (ga + gb), u)
    phi_y = _phi_terms(spec, y, u)
    da = phi_y - _phi_terms(spec, va, u) - (y - va) * ga
    db = phi_y - _phi_terms(spec, vb, u) - (y - vb) * gb
    thr = 0.5 * float(np.sum(da + db))
    imp = pa.dim - u.size
    if imp > 0:
        thr += imp * _scalar_threshold(spec.kind, spec.sigma, pa.base, pb.base)
    return thr


def _thresholds_dense(spec, donors, new_pivot):
    """No-steal thresholds of every donor pivot against one new pivot, on
    dense pivot rows (small-dimension fast path)."""
    g_new = _grad_terms(spec, new_pivot[None, :])
    g_don = _grad_terms(spec, donors)
    y = _grad_inv_terms(spec, 0.5 * (g_don + g_new))
    phi_y = _phi_terms(spec, y).sum(axis=1)
    phi_don = _phi_terms(spec, donors).sum(axis=1)
    phi_new = _phi_terms(spec, new_pivot[None, :]).sum()
    da = phi_y - phi_don - np.einsum("ij,ij->i", y - donors, g_don)
    db = phi_y - phi_new - (y - new_pivot[None, :]) @ g_new[0]
    return 0.5 * (da + db)


def _sorted_by_dist(rows, dists):
    order = np.lexsort((rows, -dists))
    return rows[order], dists[order]


DENSE_DIM_CAP = 4096  # below this, pivot math runs on dense rows


def _grow(ws, scope, m, use_pruning):
    n = scope.size
    if m < 1 or m > n:
        raise ValueError(f"anchor count m={m} must be in 1..{n}")
    dense_ok = ws.dim <= DENSE_DIM_CAP
    first = int(scope.min())
    pivot = ws.row_ov(first)
    d0 = ws.div_to_pivot(scope, ws.pivot_kernel(pivot))
    members, dists = _sorted_by_dist(scope.copy(), d0)
    anchors = [Anchor(pivot, first, members, dists)]
    pivot_rows = [pivot.to_dense()] if dense_ok else None
    while len(anchors) < m:
        # the farthest member over all anchors becomes the next pivot;
        # ties resolved to the lowest row index (member lists sort that way)
        donor_i = 0
        for k, a in enumerate(anchors[1:], start=1):
            best = anchors[donor_i]
            if a.radius > best.radius or (
                a.radius == best.radius and a.members[0] < best.members[0]
            ):
                donor_i = k
        new_row = int(anchors[donor_i].members[0])
        new_pivot = ws.row_ov(new_row)
        kernel = ws.pivot_kernel(new_pivot)
        new_dense = new_pivot.to_dense() if dense_ok else None
        if use_pruning and dense_ok:
            thresholds = _thresholds_dense(ws.spec, np.stack(pivot_rows), new_dense)
        stolen_rows, stolen_d = [], []
        for k, a in enumerate(anchors):
            if use_pruning:
                thr = (
                    thresholds[k]
                    if dense_ok
                    else _steal_threshold_ov(ws.spec, a.pivot, new_pivot)
                )
                cut = int(np.searchsorted(-a.dists, -thr, side="left"))
            else:
                cut = a.members.size
            if k == donor_i:
                cut = max(cut, 1)
            if cut == 0:
                continue
            cand = a.members[:cut]
            dn = ws.div_to_pivot(cand, kernel)
            take = dn < a.dists[:cut]
            if k == donor_i:
                take[0] = True  # the chosen pivot always moves
            if take.any():
                stolen_rows.append(cand[take])
                stolen_d.append(dn[take])
                keep = np.ones(a.members.size, dtype=bool)
                keep[:cut] = ~take
                a.members = a.members[keep]
                a.dists = a.dists[keep]
        rows = np.concatenate(stolen_rows)
        dd = np.concatenate(stolen_d)
        rows, dd = _sorted_by_dist(rows, dd)
        anchors.append(Anchor(new_pivot, new_row, rows, dd))
        if dense_ok:
            pivot_rows.append(new_dense)
    return anchors


def grow_anchors(data, spec, m, scope=None, use_pruning=True):
    """Grow m anchors over the (smoothed) data; every point lands with the
    pivot minimizing its divergence among all m pivots."""
    ws = _Workspace(data, spec)
    if scope is None:
        scope = np.arange(data.n_rows, dtype=np.int64)
    return _grow(ws, scope, m, use_pruning)


# ---------------------------------------------------------------------------
# Agglomeration
# ---------------------------------------------------------------------------


def _merge_cost_ov(spec, na, pa, nb, pb):
    # equals na*d(pa, c) + nb*d(pb, c) with c the weighted mean: the gradient
    # terms cancel at the mean, leaving a difference of generator sums
    nt = na + nb
    c = OffsetVec.combine(pa, na / nt, pb, nb / nt)
    return (
        na * ov_phi(spec, pa) + nb * ov_phi(spec, pb) - nt * ov_phi(spec, c),
        c,
    )


def merge_cost(spec, size_a, pivot_a, size_b, pivot_b):
    """Cost of replacing two clusters by their size-weighted union."""
    pa = pivot_a if isinstance(pivot_a, OffsetVec) else OffsetVec.from_dense(pivot_a)
    pb = pivot_b if isinstance(pivot_b, OffsetVec) else OffsetVec.from_dense(pivot_b)
    cost, _ = _merge_cost_ov(spec, size_a, pa, size_b, pb)
    return float(cost)


@dataclass
class AggloTree:
    """Binary merge tree; entries 0..k-1 are the input items in order."""

    sizes: list
    pivots: list
    left: list
    right: list
    root: int
    merges: list  # (i, j, cost) in merge order

    def leaf_count(self):
        return sum(1 for l in self.left if l < 0)

    def inorder_leaves(self):
        out, stack = [], [self.root]
        while stack:
            t = stack.pop()
            if self.left[t] < 0:
                out.append(t)
            else:
                stack.append(self.right[t])
                stack.append(self.left[t])
        return out


def _agglomerate_items(spec, sizes, pivots):
    k = len(sizes)
    sizes = list(int(s) for s in sizes)
    pivots = list(pivots)
    left = [-1] * k
    right = [-1] * k
    merges = []
    if k == 1:
        return AggloTree(sizes, pivots, left, right, 0, merges)
    if pivots[0].dim <= DENSE_DIM_CAP:
        return _agglomerate_dense(spec, sizes, pivots, left, right, merges)
    phis = [ov_phi(spec, p) for p in pivots]

    def pair_cost(i, j):
        nt = sizes[i] + sizes[j]
        c = OffsetVec.combine(pivots[i], sizes[i] / nt, pivots[j], sizes[j] / nt)
        return sizes[i] * phis[i] + sizes[j] * phis[j] - nt * ov_phi(spec, c), c

    alive = set(range(k))
    heap = []
    for i in range(k):
        for j in range(i + 1, k):
            cost, _ = pair_cost(i, j)
            heapq.heappush(heap, (cost, i, j))
    while len(alive) > 1:
        cost, i, j = heapq.heappop(heap)
        if i not in alive or j not in alive:
            continue
        _, c = pair_cost(i, j)
        t = len(sizes)
        sizes.append(sizes[i] + sizes[j])
        pivots.append(c)
        phis.append(ov_phi(spec, c))
        left.append(i)
        right.append(j)
        merges.append((i, j, float(cost)))
        alive.discard(i)
        alive.discard(j)
        for u in alive:
            c2, _ = pair_cost(t, u)
            heapq.heappush(heap, (c2, min(t, u), max(t, u)))
        alive.add(t)
    return AggloTree(sizes, pivots, left, right, len(sizes) - 1, merges)


def _agglomerate_dense(spec, sizes, pivots, left, right, merges):
    """Same greedy merge, with costs evaluated on dense pivot rows."""
    k = len(sizes)
    rows = [p.to_dense() for p in pivots]

    def phi_of(mat):
        return _phi_terms(spec, mat).sum(axis=1)

    phis = list(phi_of(np.stack(rows)))

    def costs_against(i, others):
        si = float(sizes[i])
        so = np.array([sizes[u] for u in others], dtype=np.float64)
        ro = np.stack([rows[u] for u in others])
        nt = si + so
        c = (si * rows[i][None, :] + so[:, None] * ro) / nt[:, None]
        other_phis = np.array([phis[u] for u in others])
        return si * phis[i] + so * other_phis - nt * phi_of(c)

    alive = set(range(k))
    heap = []
    for i in range(k):
        others = list(range(i + 1, k))
        if others:
            cc = costs_against(i, others)
            for j, c in zip(others, cc):
                heapq.heappush(heap, (float(c), i, j))
    while len(alive) > 1:
        cost, i, j = heapq.heappop(heap)
        if i not in alive or j not in alive:
            continue
        t = len(sizes)
        nt = sizes[i] + sizes[j]
        merged = (sizes[i] * rows[i] + sizes[j] * rows[j]) / nt
        sizes.append(nt)
        rows.append(merged)
        phis.append(float(_phi_terms(spec, merged[None, :]).sum()))
        pivots.append(OffsetVec.from_dense(merged))
        left.append(i)
        right.append(j)
        merges.append((i, j, float(cost)))
        alive.discard(i)
        alive.discard(j)
        others = sorted(alive)
        if others:
            cc = costs_against(t, others)
            for u, c in zip(others, cc):
                heapq.heappush(heap, (float(c), min(t, u), max(t, u)))
        alive.add(t)
    return AggloTree(sizes, pivots, left, right, len(sizes) - 1, merges)


def agglomerate_anchors(anchors, spec):
    """Iteratively merge the anchor pair with the smallest merge cost."""
    if not anchors:
        raise ValueError("agglomerate_anchors needs at least one anchor")
    return _agglomerate_items(
        spec, [a.size for a in anchors], [a.pivot for a in anchors]
    )


# ---------------------------------------------------------------------------
# Cluster tree
# ---------------------------------------------------------------------------


@dataclass
class NodeStats:
    """Additive subtree sums: generator values, x'grad(x), coordinates,
    gradients."""

    s1: float
    s2: float
    s3: OffsetVec
    s4: OffsetVec

    def add(self, other):
        return NodeStats(
            self.s1 + other.s1,
            self.s2 + other.s2,
            self.s3.add(other.s3),
            self.s4.add(other.s4),
        )


class ClusterTree:
    """Binary hierarchy over the rows; leaves are singletons.

    Nodes are indexed so children precede parents; each node's members form a
    contiguous range of `perm`. The pivot of a node is its member mean.
    `data` is optional: a deserialized tree keeps its statistics but not the
    rows they were built from.
    """

    def __init__(self, data, spec, left, right, size, start, end, perm, stats):
        self.data = data
        self.spec = spec
        self.left = left
        self.right = right
        self.size = size
        self.start = start
        self.end = end
        self.perm = perm
        self.stats = stats
        self.n_points = int(perm.size)
        self.n_nodes = int(left.size)
        self.root = self.n_nodes - 1
        self.parent = np.full(self.n_nodes, -1, dtype=np.int64)
        inner = np.nonzero(left >= 0)[0]
        self.parent[left[inner]] = inner
        self.parent[right[inner]] = inner
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for nid in range(self.n_nodes - 2, -1, -1):
            depth[nid] = depth[self.parent[nid]] + 1
        self.depth = depth
        self.levels = [
            np.nonzero(depth == lv)[0] for lv in range(int(depth.max()) + 1)
        ]
        leaf_ids = np.nonzero(left < 0)[0]
        self.leaf_of_row = np.empty(self.n_points, dtype=np.int64)
        self.leaf_of_row[perm[start[leaf_ids]]] = leaf_ids

    def is_leaf(self, nid):
        return self.left[nid] < 0

    def sibling(self, nid):
        p = self.parent[nid]
        if p < 0:
            raise ValueError("root has no sibling")
        return int(self.right[p] if self.left[p] == nid else self.left[p])

    def subtree_rows(self, nid):
        return self.perm[self.start[nid] : self.end[nid]]

    def pivot(self, nid):
        s3 = self.stats[nid].s3
        n = self.size[nid]
        return OffsetVec(s3.dim, s3.base / n, s3.idx, s3.val / n)

    def node_stats(self, nid):
        return self.stats[nid]

    def bregman_information(self, nid):
        n = self.size[nid]
        return self.stats[nid].s1 / n - ov_phi(self.spec, self.pivot(nid))


def node_stats(tree, nid):
    """Stored statistics of a node; O(1)."""
    return tree.node_stats(nid)


def bregman_information(tree, nid, spec=None):
    """Mean divergence of a node's members to the node mean, from stats."""
    return tree.bregman_information(nid)


def build_cluster_tree(data, spec, use_pruning=True):
    """Grow-and-agglomerate recursively down to singleton leaves."""
    ws = _Workspace(data, spec)
    n_rows = data.n_rows
    left, right, size, start, end = [], [], [], [], []
    perm = np.empty(n_rows, dtype=np.int64)

    def add_node(l, r, s, a, b):
        left.append(l)
        right.append(r)
        size.append(s)
        start.append(a)
        end.append(b)
        return len(left) - 1

    def build_scope(scope, offset):
        n = scope.size
        if n == 1:
            perm[offset] = scope[0]
            return add_node(-1, -1, 1, offset, offset + 1)
        m = min(math.isqrt(n - 1) + 1, n)  # ceil(sqrt(n)), capped at n
        anchors = _grow(ws, scope, m, use_pruning)
        sizes = [a.size for a in anchors]
        means = [ws.mean_of_rows(a.members) for a in anchors]
        local = _agglomerate_items(spec, sizes, means)
        node_of = {}
        cur = offset
        for ai in local.inorder_leaves():
            node_of[ai] = build_scope(anchors[ai].members, cur)
            cur += anchors[ai].size
        for t in range(len(anchors), len(local.sizes)):
            lc, rc = node_of[local.left[t]], node_of[local.right[t]]
            if start[rc] < start[lc]:
                lc, rc = rc, lc
            node_of[t] = add_node(lc, rc, size[lc] + size[rc], start[lc], end[rc])
        return node_of[local.root]

    build_scope(np.arange(n_rows, dtype=np.int64), 0)

    left = np.asarray(left, dtype=np.int64)
    right = np.asarray(right, dtype=np.int64)
    size = np.asarray(size, dtype=np.int64)
    start = np.asarray(start, dtype=np.int64)
    end = np.asarray(end, dtype=np.int64)

    stats = [None] * left.size
    for nid in range(left.size):
        if left[nid] < 0:
            row = int(perm[start[nid]])
            s3 = ws.row_ov(row)
            stats[nid] = NodeStats(
                float(ws.phi_row[row]), float(ws.s2_row[row]), s3, ov_grad(spec, s3)
            )
        else:
            stats[nid] = stats[left[nid]].add(stats[right[nid]])

    return ClusterTree(data, spec, left, right, size, start, end, perm, stats)
