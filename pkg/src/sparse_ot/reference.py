"""Discrete OT oracles: exact assignment, log-domain Sinkhorn, and the
elastic-cost (l1) entropic map used as a sparse-displacement baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ShapeError
from .penalty import prox_l1

MAX_ASSIGNMENT = 512


@dataclass
class Coupling:
    matrix: np.ndarray
    row_marg: np.ndarray
    col_marg: np.ndarray
    f: np.ndarray
    g: np.ndarray
    epsilon: float
    iterations: int
    marginal_error: float

    def marginal_residual(self):
        return max(np.abs(self.matrix.sum(axis=1) - self.row_marg).max(),
                   np.abs(self.matrix.sum(axis=0) - self.col_marg).max())

    def cost(self, C):
        return float((self.matrix * C).sum())


def _clouds(a, b):
    a = np.ascontiguousarray(np.atleast_2d(np.asarray(a, dtype=np.float64)))
    b = np.ascontiguousarray(np.atleast_2d(np.asarray(b, dtype=np.float64)))
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    return a, b


def exact_assignment_w2(a, b):
    """Optimal matching of two equal-size clouds under 0.5 |x - y|^2.

    Returns ``(mean cost, perm)`` with ``a[i]`` matched to ``b[perm[i]]``.
    """
    a, b = _clouds(a, b)
    if len(a) != len(b):
        raise ShapeError(f"assignment needs equal sizes, got {len(a)} and {len(b)}")
    if len(a) > MAX_ASSIGNMENT:
        raise ValueError(f"n={len(a)} exceeds the assignment oracle limit of {MAX_ASSIGNMENT}")
    C = kernels.sq_euclidean_cost(a, b)
    perm = kernels.hungarian(C)
    return float(C[np.arange(len(a)), perm].mean()), perm


def sinkhorn(a, b, epsilon=1e-3, max_iters=100_000, tol=1e-8, a_weights=None, b_weights=None):
    """Entropic OT between uniform (or weighted) clouds, in the log domain."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    a, b = _clouds(a, b)
    wa = np.full(len(a), 1.0 / len(a)) if a_weights is None else np.asarray(a_weights, float)
    wb = np.full(len(b), 1.0 / len(b)) if b_weights is None else np.asarray(b_weights, float)
    C = kernels.sq_euclidean_cost(a, b)
    return sinkhorn_cost_matrix(C, wa, wb, epsilon, max_iters, tol)


def sinkhorn_cost_matrix(C, wa, wb, epsilon, max_iters=100_000, tol=1e-8, scaling=0.5):
    """Sinkhorn on a given cost matrix.

    Small epsilon converges slowly from cold potentials, so epsilon is
    annealed geometrically (factor ``scaling``) from the cost scale down to
    the target, warm-starting each stage.  ``scaling=None`` disables this.
    """
    C = np.ascontiguousarray(C, dtype=np.float64)
    la, lb = np.log(wa), np.log(wb)
    f, g = np.zeros(C.shape[0]), np.zeros(C.shape[1])
    total = 0
    if scaling:
        eps = max(float(C.max()), float(epsilon))
        while eps > epsilon and total < max_iters:
            f, g, it, _ = kernels.sinkhorn_log(C, la, lb, eps, min(100, max_iters - total), float(tol), f, g)
            total += it
            eps *= scaling
    f, g, it, err = kernels.sinkhorn_log(C, la, lb, float(epsilon), max(1, int(max_iters) - total), float(tol), f, g)
    it += total
    P = np.exp((f[:, None] + g[None, :] - C) / epsilon + la[:, None] + lb[None, :])
    return Coupling(P, wa, wb, f, g, float(epsilon), int(it), float(err))


def elastic_cost(a, b, lam):
    """0.5 |x - y|^2 + lam |y - x|_1 for all pairs."""
    a, b = _clouds(a, b)
    C = kernels.sq_euclidean_cost(a, b)
    if lam:
        C = C + lam * np.abs(a[:, None, :] - b[None, :, :]).sum(axis=2)
    return C


def gibbs_weights(x, ys, g, lam, epsilon, log_b=None):
    """softmax_j((g_j - c(x, y_j)) / epsilon + log b_j) for each row of ``x``."""
    x = np.atleast_2d(x)
    c = elastic_cost(x, ys, lam)
    logits = (g[None, :] - c) / epsilon
    if log_b is not None:
        logits = logits + log_b[None, :]
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


def elastic_map_l1(x, ys, lam, epsilon, coupling):
    """Entropic map under the l1 elastic cost.

    T(x) = x - prox_{lam l1}(x - sum_j p_j(x) (y_j + lam sign(x - y_j)))

    ``coupling`` is the Sinkhorn solution for the elastic cost; its target
    potential ``g`` defines the Gibbs weights.  Accepts one point or a batch.
    """
    if coupling is None or coupling.g is None:
        raise ValueError("Sinkhorn dual potentials are required")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X, ys = _clouds(x, ys)
    if len(coupling.g) != len(ys):
        raise ShapeError(f"dual potential has {len(coupling.g)} entries for {len(ys)} targets")
    p = gibbs_weights(X, ys, coupling.g, lam, epsilon, np.log(coupling.col_marg))
    out = np.empty_like(X)
    for i, xi in enumerate(X):
        pull = ys + lam * np.sign(xi[None, :] - ys)
        out[i] = xi - prox_l1(xi - p[i] @ pull, lam)
    return out[0] if single else out


def fit_elastic_l1(xs, ys, lam, epsilon=1e-3, max_iters=100_000, tol=1e-8):
    """Sinkhorn for the elastic cost, then the map applied to ``xs``."""
    C = elastic_cost(xs, ys, lam)
    n, m = C.shape
    cp = sinkhorn_cost_matrix(C, np.full(n, 1.0 / n), np.full(m, 1.0 / m), epsilon, max_iters, tol)
    return elastic_map_l1(xs, ys, lam, epsilon, cp), cp
