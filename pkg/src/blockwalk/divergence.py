"""Bregman divergence bundle.

Each divergence kind is defined by its strictly convex generator applied
coordinatewise: the generator value, its gradient, the gradient inverse, and
the induced divergence d(x, y) = phi(x) - phi(y) - (x - y)' grad(y). The first
argument of a divergence is always the datapoint, the second the kernel
center. One-dimensional textbook definitions (logistic, itakura-saito,
relative entropy) are summed over coordinates.

Three evaluation layers share the same kernels: scalars/dense vectors (public
API), dense row batches (exact baselines), and OffsetVec inputs (cluster
statistics, where off-support coordinates sit at a common baseline).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import expit, gammaln, xlogy

from .vectors import OffsetVec

__all__ = [
    "KINDS",
    "COUNT_KINDS",
    "DivergenceSpec",
    "DomainError",
    "phi",
    "grad_phi",
    "grad_phi_inv",
    "bregman_divergence",
    "log_carrier",
    "phi_rows",
    "grad_rows",
    "pairwise_divergences",
    "ov_phi",
    "ov_grad",
    "ov_grad_inv",
    "ov_xdotgrad",
    "ov_divergence",
    "ov_log_carrier",
]

KINDS = ("sq-euclidean", "mahalanobis", "gid", "kl", "itakura-saito", "logistic")

# Kinds whose domain requires (near-)positive coordinates and that therefore
# interact with count smoothing.
COUNT_KINDS = ("gid", "kl", "itakura-saito")


class DomainError(ValueError):
    """Input outside the divergence domain; carries the offending index."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class DivergenceSpec:
    """Divergence kind plus its parameters and the data dimension."""

    kind: str
    dim: int
    sigma: float = 1.0
    covariance_diag: np.ndarray | None = field(default=None)
    epsilon: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown divergence kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim must be a positive integer")
        if self.kind == "sq-euclidean" and not self.sigma > 0:
            raise ValueError("sigma must be > 0 for sq-euclidean")
        if self.kind == "mahalanobis":
            if self.covariance_diag is None:
                raise ValueError("mahalanobis requires covariance_diag")
            cov = np.asarray(self.covariance_diag, dtype=np.float64)
            if cov.shape != (self.dim,):
                raise ValueError("covariance_diag must have length dim")
            if not np.all(cov > 0):
                raise ValueError("covariance_diag entries must be > 0")
            object.__setattr__(self, "covariance_diag", cov)
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")

    @property
    def weights(self):
        """Coordinate weights 1/Sigma_jj (mahalanobis only)."""
        return 1.0 / self.covariance_diag


# ---------------------------------------------------------------------------
# Domain checks
# ---------------------------------------------------------------------------


def _first_bad(mask):
    return int(np.argmax(mask))


def _check_domain(spec, x, strict, name="x"):
    """Reject coordinates outside the domain (strict = relative interior)."""
    kind = spec.kind
    if kind in ("gid", "kl"):
        bad = (x < 0) | (x <= 0 if strict else np.zeros_like(x, bool))
        if np.any(bad):
            j = _first_bad(bad)
            bound = "positive" if strict else "nonnegative"
            raise DomainError(
                f"{kind} requires {bound} entries; {name}[{j}] = {x[j]}", j
            )
    elif kind == "itakura-saito":
        bad = x <= 0
        if np.any(bad):
            j = _first_bad(bad)
            raise DomainError(
                f"itakura-saito requires positive entries; {name}[{j}] = {x[j]}", j
            )
    elif kind == "logistic":
        bad = (x <= 0) | (x >= 1)
        if np.any(bad):
            j = _first_bad(bad)
            raise DomainError(
                f"logistic requires entries in (0,1); {name}[{j}] = {x[j]}", j
            )
    # sq-euclidean / mahalanobis: all of R^d


def _as_vector(spec, x, name="x"):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (spec.dim,):
        raise ValueError(f"{name} must have shape ({spec.dim},), got {x.shape}")
    return x


# ---------------------------------------------------------------------------
# Elementwise kernels. `idx` selects coordinates (mahalanobis weights only).
# ---------------------------------------------------------------------------


def _phi_terms(spec, t, idx=None):
    kind = spec.kind
    if kind == "sq-euclidean":
        return t * t / (2.0 * spec.sigma**2)
    if kind == "mahalanobis":
        w = spec.weights if idx is None else spec.weights[idx]
        return w * t * t
    if kind in ("gid", "kl"):
        return xlogy(t, t) - t
    if kind == "itakura-saito":
        return -np.log(t) - 1.0
    return xlogy(t, t) + xlogy(1.0 - t, 1.0 - t)  # logistic


def _grad_terms(spec, t, idx=None):
    kind = spec.kind
    if kind == "sq-euclidean":
        return t / spec.sigma**2
    if kind == "mahalanobis":
        w = spec.weights if idx is None else spec.weights[idx]
        return 2.0 * w * t
    if kind in ("gid", "kl"):
        return np.log(t)
    if kind == "itakura-saito":
        return -1.0 / t
    return np.log(t) - np.log1p(-t)  # logistic


def _grad_inv_terms(spec, u, idx=None):
    kind = spec.kind
    if kind == "sq-euclidean":
        return spec.sigma**2 * u
    if kind == "mahalanobis":
        cov = spec.covariance_diag if idx is None else spec.covariance_diag[idx]
        return 0.5 * cov * u
    if kind in ("gid", "kl"):
        return np.exp(u)
    if kind == "itakura-saito":
        return -1.0 / u
    return expit(u)  # logistic


def _xgrad_terms(spec, t, idx=None):
    """Per-coordinate t * grad(t); gid's t*log(t) extends to 0 by limit."""
    if spec.kind in ("gid", "kl"):
        return xlogy(t, t)
    if spec.kind == "itakura-saito":
        return np.full_like(t, -1.0)
    return t * _grad_terms(spec, t, idx)


def _check_grad_range(spec, u, name="u"):
    if spec.kind == "itakura-saito":
        bad = u >= 0
        if np.any(bad):
            j = _first_bad(bad)
            raise DomainError(
                f"itakura-saito gradient range is negative; {name}[{j}] = {u[j]}", j
            )


# ---------------------------------------------------------------------------
# Public pointwise API
# ---------------------------------------------------------------------------


def phi(spec, x):
    """Generator value. gid/kl admit zero coordinates via the x*log(x) limit."""
    x = _as_vector(spec, x)
    _check_domain(spec, x, strict=False)
    return float(np.sum(_phi_terms(spec, x)))


def grad_phi(spec, x):
    """Generator gradient; requires x in the relative interior of the domain."""
    x = _as_vector(spec, x)
    _check_domain(spec, x, strict=True)
    return _grad_terms(spec, x)


def grad_phi_inv(spec, u):
    """Unique x with grad_phi(x) = u; rejects u outside the gradient range."""
    u = _as_vector(spec, u, name="u")
    _check_grad_range(spec, u)
    return _grad_inv_terms(spec, u)


def bregman_divergence(spec, x, y):
    """d(x, y) = phi(x) - phi(y) - (x - y)' grad(y); x datapoint, y center."""
    x = _as_vector(spec, x)
    y = _as_vector(spec, y, name="y")
    _check_domain(spec, x, strict=False)
    _check_domain(spec, y, strict=True, name="y")
    g = _grad_terms(spec, y)
    return float(
        np.sum(_phi_terms(spec, x)) - np.sum(_phi_terms(spec, y)) - np.dot(x - y, g)
    )


def log_carrier(spec, x):
    """Log base measure of the matching exponential family at x.

    Combined with phi this supplies the per-point additive constant of the
    kernel-density likelihood: counts get -sum log(x_j!), Gaussian kinds fold
    the normalizer (constant in phi + carrier), the rest carry 1.
    """
    x = _as_vector(spec, x)
    kind = spec.kind
    if kind in ("gid", "kl"):
        return float(-np.sum(gammaln(x + 1.0)))
    if kind == "sq-euclidean":
        d = spec.dim
        return float(-0.5 * d * np.log(2.0 * np.pi * spec.sigma**2)) - float(
            np.sum(_phi_terms(spec, x))
        )
    if kind == "mahalanobis":
        d = spec.dim
        const = -0.5 * d * np.log(2.0 * np.pi) - 0.5 * np.sum(
            np.log(spec.covariance_diag / 2.0)
        )
        return float(const) - float(np.sum(_phi_terms(spec, x)))
    return 0.0  # itakura-saito, logistic


# ---------------------------------------------------------------------------
# Dense row batches (exact baselines, brute-force oracles)
# ---------------------------------------------------------------------------


def _check_rows(spec, X, strict, name="X"):
    kind = spec.kind
    if kind in ("gid", "kl"):
        bad = X <= 0 if strict else X < 0
    elif kind == "itakura-saito":
        bad = X <= 0
    elif kind == "logistic":
        bad = (X <= 0) | (X >= 1)
    else:
        return
    if np.any(bad):
        i, j = np.unravel_index(int(np.argmax(bad)), X.shape)
        raise DomainError(
            f"{kind} domain violated at {name}[{i}, {j}] = {X[i, j]}", (int(i), int(j))
        )


def phi_rows(spec, X):
    X = np.asarray(X, dtype=np.float64)
    _check_rows(spec, X, strict=False)
    return _phi_terms(spec, X).sum(axis=1)


def grad_rows(spec, X):
    X = np.asarray(X, dtype=np.float64)
    _check_rows(spec, X, strict=True)
    return _grad_terms(spec, X)


def carrier_rows(spec, X):
    X = np.asarray(X, dtype=np.float64)
    kind = spec.kind
    if kind in ("gid", "kl"):
        return -gammaln(X + 1.0).sum(axis=1)
    if kind == "sq-euclidean":
        const = -0.5 * spec.dim * np.log(2.0 * np.pi * spec.sigma**2)
        return const - _phi_terms(spec, X).sum(axis=1)
    if kind == "mahalanobis":
        const = -0.5 * spec.dim * np.log(2.0 * np.pi) - 0.5 * np.sum(
            np.log(spec.covariance_diag / 2.0)
        )
        return const - _phi_terms(spec, X).sum(axis=1)
    return np.zeros(X.shape[0])


def pairwise_divergences(spec, X, Y):
    """Matrix of d(x_i, y_j) for dense row stacks X (n,d) and Y (m,d)."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    _check_rows(spec, X, strict=False)
    _check_rows(spec, Y, strict=True, name="Y")
    px = _phi_terms(spec, X).sum(axis=1)
    py = _phi_terms(spec, Y).sum(axis=1)
    G = _grad_terms(spec, Y)
    yg = np.einsum("ij,ij->i", Y, G)
    return px[:, None] - py[None, :] + yg[None, :] - X @ G.T


# ---------------------------------------------------------------------------
# OffsetVec layer. Off-support coordinates sit at `base`; a full-support
# vector has no implicit coordinates and its mapped base is pinned to 0.
# ---------------------------------------------------------------------------


@lru_cache(maxsize=4096)
def _scalar_base_value(kind, sigma, base, fn_name):
    spec = DivergenceSpec(kind, 1, sigma=sigma if kind == "sq-euclidean" else 1.0)
    fn = {
        "_phi_terms": _phi_terms,
        "_grad_terms": _grad_terms,
        "_grad_inv_terms": _grad_inv_terms,
        "_xgrad_terms": _xgrad_terms,
    }[fn_name]
    with np.errstate(divide="ignore", invalid="ignore"):
        return float(fn(spec, np.array([base]))[0])


def _scalar_base(spec, fn, base, what):
    """Map the baseline through a scalar kernel, requiring a finite result."""
    if spec.kind == "mahalanobis":
        if base != 0.0:
            raise DomainError(
                "mahalanobis statistics require a zero baseline "
                "(smoothing offsets are not supported for this kind)"
            )
        return 0.0
    out = _scalar_base_value(spec.kind, spec.sigma, float(base), fn.__name__)
    if not np.isfinite(out):
        raise DomainError(
            f"{spec.kind} {what} undefined at off-support value {base} "
            "(increase the smoothing offset)"
        )
    return out


def ov_phi(spec, v):
    imp = v.dim - v.nnz
    t = v.base + v.val
    out = float(np.sum(_phi_terms(spec, t, v.idx)))
    if imp > 0:
        out += imp * _scalar_base(spec, _phi_terms, v.base, "generator")
    return out


def ov_xdotgrad(spec, v):
    imp = v.dim - v.nnz
    t = v.base + v.val
    out = float(np.sum(_xgrad_terms(spec, t, v.idx)))
    if imp > 0:
        out += imp * _scalar_base(spec, _xgrad_terms, v.base, "x'grad(x)")
    return out


def ov_grad(spec, v):
    imp = v.dim - v.nnz
    t = v.base + v.val
    base_g = _scalar_base(spec, _grad_terms, v.base, "gradient") if imp > 0 else 0.0
    return OffsetVec(v.dim, base_g, v.idx, _grad_terms(spec, t, v.idx) - base_g)


def ov_grad_inv(spec, v):
    imp = v.dim - v.nnz
    t = v.base + v.val
    _check_grad_range(spec, t)
    if imp > 0:
        _check_grad_range(spec, np.array([v.base]), name="base")
        base_o = _scalar_base(spec, _grad_inv_terms, v.base, "gradient inverse")
    else:
        base_o = 0.0
    return OffsetVec(v.dim, base_o, v.idx, _grad_inv_terms(spec, t, v.idx) - base_o)


def ov_divergence(spec, x, y):
    """d(x, y) for OffsetVec arguments."""
    g = ov_grad(spec, y)
    return ov_phi(spec, x) - ov_phi(spec, y) - x.dot(g) + ov_xdotgrad(spec, y)


def ov_log_carrier(spec, v):
    kind = spec.kind
    if kind in ("gid", "kl"):
        imp = v.dim - v.nnz
        out = float(-np.sum(gammaln(v.base + v.val + 1.0)))
        if imp > 0:
            out += imp * float(-gammaln(v.base + 1.0))
        return out
    if kind == "sq-euclidean":
        const = -0.5 * v.dim * np.log(2.0 * np.pi * spec.sigma**2)
        return float(const) - ov_phi(spec, v)
    if kind == "mahalanobis":
        const = -0.5 * v.dim * np.log(2.0 * np.pi) - 0.5 * np.sum(
            np.log(spec.covariance_diag / 2.0)
        )
        return float(const) - ov_phi(spec, v)
    return 0.0
