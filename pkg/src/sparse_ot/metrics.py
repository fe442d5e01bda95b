"""Sparsity / residue metrics and the combined evaluation score."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .penalty import Penalty


@dataclass
class EvalReport:
    spa: float
    res: float
    eval_score: float
    dim_mean: float
    lam: float
    iteration: int

    def as_dict(self):
        return asdict(self)


def _cloud(a, name="cloud"):
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if a.size == 0 or len(a) == 0:
        raise ValueError(f"{name} is empty")
    return a


def spa(disp, tau):
    """Mean penalty of the displacement rows."""
    disp = _cloud(disp, "displacements")
    return float(Penalty.from_config(tau).value(disp).mean())


def random_directions(d, n_proj, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n_proj, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sliced_w2(a, b, n_proj=128, seed=0):
    """Sliced squared 2-Wasserstein distance between two point clouds.

    The larger cloud is subsampled (deterministically from ``seed``) to the
    size of the smaller one; in 1-D the result is the exact squared W2.
    """
    a = _cloud(a, "a")
    b = _cloud(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[1] == 0:
        raise ValueError("clouds have dimension 0")
    rng = np.random.default_rng(seed)
    n = min(len(a), len(b))
    if len(a) > n:
        a = a[np.sort(rng.choice(len(a), n, replace=False))]
    if len(b) > n:
        b = b[np.sort(rng.choice(len(b), n, replace=False))]
    if a.shape[1] == 1:
        dirs = np.ones((1, 1))
    else:
        dirs = random_directions(a.shape[1], n_proj, seed)
    return float(kernels.sliced_sq_w2(np.ascontiguousarray(a), np.ascontiguousarray(b), dirs))


class RunningBounds:
    """Expanding min/max window used to normalise a metric."""

    def __init__(self):
        self.lo = math.inf
        self.hi = -math.inf

    def update(self, v):
        self.lo = min(self.lo, v)
        self.hi = max(self.hi, v)
        return self

    def normalise(self, v):
        if not self.hi > self.lo:
            return 0.0
        return (v - self.lo) / (self.hi - self.lo)

    def as_tuple(self):
        return (self.lo, self.hi)


def eval_score(spa_v, res_v, a, norm):
    """``a * n(spa) + (1 - a) * n(res)`` with min-max normalisation.

    ``norm`` maps ``"spa"``/``"res"`` to ``RunningBounds`` or ``(lo, hi)``.
    """
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"trade-off weight must lie in [0, 1], got {a}")

    def n(key, v):
        bounds = norm[key]
        if isinstance(bounds, RunningBounds):
            return bounds.normalise(v)
        lo, hi = bounds
        if lo > hi:
            raise ValueError(f"bounds for {key} have lo > hi")
        return 0.0 if hi == lo else (v - lo) / (hi - lo)

    return a * n("spa", spa_v) + (1.0 - a) * n("res", res_v)


def displacement_dim(disp, threshold=1e-2):
    """Mean count of coordinates with |displacement| above ``threshold``."""
    disp = _cloud(disp, "displacements")
    return float((np.abs(disp) > threshold).sum(axis=1).mean())


def selected_genes(disp, k):
    """Indices of the ``k`` coordinates with the largest mean |displacement|."""
    disp = _cloud(disp, "displacements")
    score = np.abs(disp).mean(axis=0)
    return np.sort(np.argsort(-score, kind="stable")[:k])


def gene_overlap(disp, truth_idx):
    """Fraction of ground-truth coordinates among the top-|truth| selected ones."""
    disp = _cloud(disp, "displacements")
    truth = np.unique(np.asarray(truth_idx, dtype=int))
    if truth.size == 0:
        raise ValueError("truth index set is empty")
    if truth.size > disp.shape[1]:
        raise ValueError(f"{truth.size} truth indices but only {disp.shape[1]} coordinates")
    chosen = selected_genes(disp, truth.size)
    return len(np.intersect1d(chosen, truth)) / truth.size


def evaluate_map(g, ys, xs, tau, *, lam=0.0, iteration=0, a=0.5, norm=None,
                 n_proj=128, seed=0, threshold=1e-2):
    """Spa/Res/dim for the map grad g applied to Q-side points ``ys``.

    Residue compares the pushforward of ``ys`` with the P-side cloud ``xs``.
    """
    from .trainer import transport

    T = transport(g, ys)
    disp = T - ys
    s = spa(disp, tau)
    r = sliced_w2(T, xs, n_proj, seed)
    e = eval_score(s, r, a, norm) if norm is not None else float("nan")
    return EvalReport(s, r, e, displacement_dim(disp, threshold), lam, iteration)
