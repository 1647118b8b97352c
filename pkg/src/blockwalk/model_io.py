"""Versioned model container.

One .npz archive holds everything needed to re-apply and re-audit a fitted
transition model: the tree (flat per-node records: children, size, member
range, statistics), the block partition, the block parameters, the cached
per-block divergence sums, the bound report, the divergence spec and the row
ids. Layout is versioned through the embedded JSON header; writers emit
arrays in a fixed order so identical models produce identical bytes.
"""
from __future__ import annotations

import json

import numpy as np

from .anchor_tree import ClusterTree, NodeStats
from .divergence import DivergenceSpec
from .partition import BlockPartition
from .propagation import TransitionModel
from .variational import BlockParams, BoundReport
from .vectors import OffsetVec

__all__ = ["save_model", "load_model", "reevaluate_bound"]

FORMAT_NAME = "blockwalk-model"
FORMAT_VERSION = 1


def _pack_sparse(vecs):
    ptr = np.zeros(len(vecs) + 1, dtype=np.int64)
    for i, v in enumerate(vecs):
        ptr[i + 1] = ptr[i] + v.idx.size
    idx = np.concatenate([v.idx for v in vecs]) if vecs else np.empty(0, np.int64)
    val = np.concatenate([v.val for v in vecs]) if vecs else np.empty(0, np.float64)
    base = np.array([v.base for v in vecs])
    return ptr, idx, val, base


def _unpack_sparse(dim, ptr, idx, val, base):
    out = []
    for i in range(ptr.size - 1):
        lo, hi = ptr[i], ptr[i + 1]
        out.append(OffsetVec(dim, base[i], idx[lo:hi], val[lo:hi]))
    return out


def save_model(path, model, report, ids, extras=None):
    """Serialize a TransitionModel plus its BoundReport to `path` (.npz)."""
    tree = model.tree
    spec = model.spec
    meta = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "n_points": tree.n_points,
        "spec": {
            "kind": spec.kind,
            "dim": spec.dim,
            "sigma": spec.sigma,
            "epsilon": spec.epsilon,
            "has_covariance": spec.covariance_diag is not None,
        },
        "partition_label": model.partition.label,
        "bound": {
            "ell": report.ell,
            "constant": report.constant,
            "entropy_term": report.entropy_term,
        },
        "optimizer": {
            "converged": model.params.converged,
            "residual": model.params.residual,
            "sweeps": model.params.sweeps,
        },
        "ids": list(ids),
        "extras": extras or {},
    }
    s3 = _pack_sparse([st.s3 for st in tree.stats])
    s4 = _pack_sparse([st.s4 for st in tree.stats])
    arrays = {
        "meta": np.frombuffer(
            json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8
        ),
        "tree_left": tree.left,
        "tree_right": tree.right,
        "tree_size": tree.size,
        "tree_start": tree.start,
        "tree_end": tree.end,
        "tree_perm": tree.perm,
        "stat_s1": np.array([st.s1 for st in tree.stats]),
        "stat_s2": np.array([st.s2 for st in tree.stats]),
        "stat_s3_ptr": s3[0],
        "stat_s3_idx": s3[1],
        "stat_s3_val": s3[2],
        "stat_s3_base": s3[3],
        "stat_s4_ptr": s4[0],
        "stat_s4_idx": s4[1],
        "stat_s4_val": s4[2],
        "stat_s4_base": s4[3],
        "block_a": model.partition.a,
        "block_b": model.partition.b,
        "q": model.params.values,
        "log_q": model.params.log_values,
        "d_ab": report.d_ab,
        "covariance_diag": (
            spec.covariance_diag
            if spec.covariance_diag is not None
            else np.empty(0)
        ),
    }
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path):
    """Load a serialized model; returns (TransitionModel, BoundReport, meta)."""
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode("utf-8"))
        if meta.get("format") != FORMAT_NAME:
            raise ValueError(f"{path}: not a {FORMAT_NAME} file")
        if meta.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported version {meta.get('version')}")
        sp = meta["spec"]
        spec = DivergenceSpec(
            sp["kind"],
            sp["dim"],
            sigma=sp["sigma"],
            covariance_diag=z["covariance_diag"] if sp["has_covariance"] else None,
            epsilon=sp["epsilon"],
        )
        s3 = _unpack_sparse(
            sp["dim"], z["stat_s3_ptr"], z["stat_s3_idx"], z["stat_s3_val"], z["stat_s3_base"]
        )
        s4 = _unpack_sparse(
            sp["dim"], z["stat_s4_ptr"], z["stat_s4_idx"], z["stat_s4_val"], z["stat_s4_base"]
        )
        s1 = z["stat_s1"]
        s2 = z["stat_s2"]
        stats = [NodeStats(float(s1[i]), float(s2[i]), s3[i], s4[i]) for i in range(s1.size)]
        tree = ClusterTree(
            None,
            spec,
            z["tree_left"],
            z["tree_right"],
            z["tree_size"],
            z["tree_start"],
            z["tree_end"],
            z["tree_perm"],
            stats,
        )
        partition = BlockPartition(z["block_a"], z["block_b"], meta["partition_label"])
        params = BlockParams(
            values=z["q"],
            log_values=z["log_q"],
            converged=meta["optimizer"]["converged"],
            residual=meta["optimizer"]["residual"],
            sweeps=meta["optimizer"]["sweeps"],
        )
        report = BoundReport(
            ell=meta["bound"]["ell"],
            constant=meta["bound"]["constant"],
            d_ab=z["d_ab"],
            entropy_term=meta["bound"]["entropy_term"],
        )
    return TransitionModel(tree, partition, params, spec), report, meta


def reevaluate_bound(model, report):
    """Recompute the bound from the serialized pieces (cached block sums,
    constant, parameters); audits the stored ell."""
    ncells = (
        model.tree.size[model.partition.a] * model.tree.size[model.partition.b]
    ).astype(np.float64)
    q = model.params.values
    entropy = float(np.sum(ncells * q * model.params.log_values))
    return report.constant - float(report.d_ab @ q) - entropy
