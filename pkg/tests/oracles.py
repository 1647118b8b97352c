"""Independent test oracles.

These deliberately avoid the library's fast paths: block divergence sums come
from dense brute-force double sums, and the block parameters come from a
plain projected-gradient ascent on the concave objective over the explicit
constraint matrix. They exist to certify the decoupled statistics and the
dual-Newton optimizer against a second route.
"""
import numpy as np
from scipy.linalg import cho_factor, cho_solve

from blockwalk.divergence import pairwise_divergences


def brute_block_sums(tree, partition, spec, data):
    """D per block as the literal double sum over dense rows."""
    dense = data.to_dense()
    out = np.empty(partition.n_blocks)
    for k in range(partition.n_blocks):
        ra = tree.subtree_rows(int(partition.a[k]))
        rb = tree.subtree_rows(int(partition.b[k]))
        out[k] = pairwise_divergences(spec, dense[ra], dense[rb]).sum()
    return out


def projected_ascent_q(tree, partition, spec, data, max_iters=500, grad_tol=1e-12):
    """Maximize -D'q - sum n_B q log q subject to the per-row constraints by
    ascent steps projected onto the constraint subspace.

    Starts from the always-feasible uniform point q = 1/(N-1). The ascent
    direction is scaled by the objective's exact (diagonal) curvature, with
    the projection taken in the same metric, so the steps stay well-posed
    despite block parameters spanning many orders of magnitude. Returns
    (q, objective_value) with the objective excluding the additive constant.
    """
    n = data.n_rows
    nblocks = partition.n_blocks
    dvec = brute_block_sums(tree, partition, spec, data)
    na = tree.size[partition.a].astype(float)
    nb = tree.size[partition.b].astype(float)
    ncells = na * nb
    m = np.zeros((n, nblocks))
    for k in range(nblocks):
        m[tree.subtree_rows(int(partition.a[k])), k] = nb[k]

    def value(q):
        return float(-dvec @ q - np.sum(ncells * q * np.log(q)))

    q = np.full(nblocks, 1.0 / (n - 1))
    fq = value(q)
    for _ in range(max_iters):
        grad = -dvec - ncells * (1.0 + np.log(q))
        # curvature of -sum n q log q is n/q; project in the scaled metric
        p = q / ncells
        mpmt = (m * p) @ m.T
        mu = cho_solve(cho_factor(mpmt), m @ (p * grad))
        direction = p * (grad - m.T @ mu)
        slope = float(grad @ direction)
        if slope <= grad_tol * max(1.0, abs(fq)):
            break
        t = 1.0
        improved = False
        for _ in range(80):
            trial = q + t * direction
            if np.all(trial > 0):
                ft = value(trial)
                if ft >= fq + 1e-4 * t * slope:
                    q, fq = trial, ft
                    improved = True
                    break
            t *= 0.5
        if not improved:
            break
    return q, fq


def closed_form_propagation(p_matrix, y0, alpha):
    """(1 - alpha) (I - alpha M)^-1 y0; valid when alpha^T is negligible."""
    n = p_matrix.shape[0]
    return (1.0 - alpha) * np.linalg.solve(np.eye(n) - alpha * p_matrix, y0)
