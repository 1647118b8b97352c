"""Block partitions of the transition matrix over a cluster tree.

A block (A, B) ties every transition probability from a row in subtree A to a
column in subtree B to one shared parameter. A valid partition tiles all
off-diagonal ordered pairs exactly once with non-overlapping subtree pairs.
The coarsest partition pairs every non-root node with its sibling (2(N-1)
blocks); the finest pairs every ordered leaf pair (N(N-1) blocks); refining
any block keeps validity.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Block",
    "BlockPartition",
    "PartitionCheck",
    "coarsest_partition",
    "finest_partition",
    "refine_partition",
    "validate_partition",
    "auto_refine",
]


@dataclass(frozen=True)
class Block:
    a: int  # row-side subtree
    b: int  # column-side subtree


class BlockPartition:
    """Ordered list of blocks, stored as parallel node-id arrays."""

    def __init__(self, a, b, label="custom"):
        self.a = np.asarray(a, dtype=np.int64)
        self.b = np.asarray(b, dtype=np.int64)
        if self.a.shape != self.b.shape:
            raise ValueError("block arrays must have equal length")
        self.label = label

    @property
    def n_blocks(self):
        return int(self.a.size)

    def blocks(self):
        return [Block(int(x), int(y)) for x, y in zip(self.a, self.b)]

    def index_of(self, block):
        hits = np.nonzero((self.a == block.a) & (self.b == block.b))[0]
        if hits.size == 0:
            raise ValueError(f"block ({block.a}, {block.b}) not in partition")
        return int(hits[0])

    def row_block_lists(self, tree):
        """Per-row lists of covering block indices (test-scale helper)."""
        out = [[] for _ in range(tree.n_points)]
        for k in range(self.n_blocks):
            for r in tree.subtree_rows(int(self.a[k])):
                out[r].append(k)
        return out

    def __repr__(self):
        return f"BlockPartition({self.label}, {self.n_blocks} blocks)"


def coarsest_partition(tree):
    """Every non-root node blocked with its sibling."""
    if tree.n_points < 2:
        raise ValueError("coarsest partition requires at least 2 points")
    a, b = [], []
    for nid in range(tree.n_nodes):
        if nid == tree.root:
            continue
        a.append(nid)
        b.append(tree.sibling(nid))
    return BlockPartition(a, b, label="coarsest")


def finest_partition(tree, cap=2048):
    """All ordered leaf pairs; exact once optimized. Guarded to test scale."""
    n = tree.n_points
    if n < 2:
        raise ValueError("finest partition requires at least 2 points")
    if n > cap:
        raise ValueError(f"finest partition refused for N={n} > cap={cap}")
    leaves = [nid for nid in range(tree.n_nodes) if tree.is_leaf(nid)]
    leaves.sort(key=lambda nid: tree.start[nid])
    a, b = [], []
    for x in leaves:
        for y in leaves:
            if x != y:
                a.append(x)
                b.append(y)
    return BlockPartition(a, b, label="finest")


def refine_partition(p, block, tree, side=None):
    """Split one block along a non-leaf side; block count grows by one."""
    k = p.index_of(block)
    a, b = int(p.a[k]), int(p.b[k])
    if side is None:
        side = "a" if not tree.is_leaf(a) else "b"
    if side == "a":
        if tree.is_leaf(a):
            raise ValueError("cannot refine: chosen A side is a leaf")
        repl = [(int(tree.left[a]), b), (int(tree.right[a]), b)]
    elif side == "b":
        if tree.is_leaf(b):
            raise ValueError("cannot refine: chosen B side is a leaf")
        repl = [(a, int(tree.left[b])), (a, int(tree.right[b]))]
    else:
        raise ValueError("side must be 'a', 'b' or None")
    new_a = np.concatenate([p.a[:k], [r[0] for r in repl], p.a[k + 1 :]])
    new_b = np.concatenate([p.b[:k], [r[1] for r in repl], p.b[k + 1 :]])
    return BlockPartition(new_a, new_b, label="refined")


@dataclass
class PartitionCheck:
    ok: bool
    problem: str | None = None

    def __bool__(self):
        return self.ok


def validate_partition(p, tree, cap=4096):
    """Exhaustive O(N^2) coverage check; names the first violation."""
    n = tree.n_points
    if n > cap:
        raise ValueError(f"validation refused for N={n} > cap={cap}")
    for k in range(p.n_blocks):
        a, b = int(p.a[k]), int(p.b[k])
        if not (0 <= a < tree.n_nodes and 0 <= b < tree.n_nodes):
            return PartitionCheck(False, f"block {k}: node id out of range")
        # contiguous ranges: subtrees overlap iff one range contains the other
        if not (tree.end[a] <= tree.start[b] or tree.end[b] <= tree.start[a]):
            return PartitionCheck(
                False, f"block {k}: sides ({a}, {b}) are overlapping subtrees"
            )
    cover = np.zeros((n, n), dtype=np.int32)
    for k in range(p.n_blocks):
        ra = tree.subtree_rows(int(p.a[k]))
        rb = tree.subtree_rows(int(p.b[k]))
        cover[np.ix_(ra, rb)] += 1
    off = ~np.eye(n, dtype=bool)
    if np.any(cover[off] != 1):
        flat = np.where(off & (cover != 1))
        i, j = int(flat[0][0]), int(flat[1][0])
        word = "uncovered" if cover[i, j] == 0 else f"covered {cover[i, j]} times"
        return PartitionCheck(False, f"ordered pair ({i}, {j}) {word}")
    if np.any(np.diag(cover) != 0):
        i = int(np.argmax(np.diag(cover) != 0))
        return PartitionCheck(False, f"diagonal pair ({i}, {i}) covered")
    return PartitionCheck(True)


def auto_refine(p, tree, rounds):
    """Refinement policy: split the block with the largest |A|*|B| (ties to
    the lowest node ids), on its larger side (ties to the A side)."""
    for _ in range(rounds):
        prod = tree.size[p.a] * tree.size[p.b]
        order = np.lexsort((p.b, p.a, -prod))
        chosen = None
        for k in order:
            a, b = int(p.a[k]), int(p.b[k])
            if not (tree.is_leaf(a) and tree.is_leaf(b)):
                chosen = k
                break
        if chosen is None:
            break  # already the finest
        a, b = int(p.a[chosen]), int(p.b[chosen])
        if tree.is_leaf(a):
            side = "b"
        elif tree.is_leaf(b):
            side = "a"
        else:
            side = "a" if tree.size[a] >= tree.size[b] else "b"
        p = refine_partition(p, Block(a, b), tree, side=side)
    return p
