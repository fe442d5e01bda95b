"""Simulated-annealing control of the sparsity intensity lambda.

Two drivers share the proposal/acceptance rules:

* ``anneal_low_dim`` trades sparsity against residue through a weighted,
  min-max normalised score and accepts proposals Metropolis-style.
* ``anneal_high_dim`` first raises lambda until the mean displacement
  dimensionality meets a target ``l``, then lowers it while the target
  still holds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .trainer import (DualPair, Record, Trajectory, as_sampler, init_pair, run_iters, transport)

MIN_LAMBDA = 1e-8


@dataclass
class AnnealConfig:
    lambda0: float = 1e-3
    tem0: float = 1.0
    tem_min: float = 0.15
    decay: float = 0.95
    radius: float = 3.0
    r_low: float = 0.05
    n_ini: int = 20_000
    n_tr: int = 2_000
    n_sm: int = 2_000
    mode: str = "low"
    a: float = 0.5
    l: float | None = None
    seed: int = 0
    accept_sign: str = "min"
    n_proj: int = 128
    threshold: float = 1e-2
    eval_size: int = 1024

    def __post_init__(self):
        if self.mode not in ("low", "high"):
            raise ValueError("mode must be 'low' or 'high'")
        if not (0 < self.decay < 1):
            raise ValueError("decay must lie in (0, 1)")
        if self.tem0 <= 0 or self.tem_min <= 0:
            raise ValueError("temperatures must be positive")
        if not (0 < self.r_low <= 1) or self.radius <= 0:
            raise ValueError("need radius > 0 and r_low in (0, 1]")
        if min(self.n_ini, self.n_tr, self.n_sm) < 1:
            raise ValueError("n_ini, n_tr and n_sm must be >= 1")
        if self.lambda0 < 0:
            raise ValueError("lambda0 must be nonnegative")
        if self.mode == "low" and not 0 <= self.a <= 1:
            raise ValueError("trade-off weight a must lie in [0, 1]")
        if self.mode == "high" and (self.l is None or self.l < 1):
            raise ValueError("high-dimensional mode needs a target l >= 1")
        if self.accept_sign not in ("min", "paper"):
            raise ValueError("accept_sign must be 'min' or 'paper'")

    def n_outer(self):
        """Number of temperature steps before tem drops to tem_min."""
        if self.tem0 <= self.tem_min:
            return 0
        n = 0
        tem = self.tem0
        while tem > self.tem_min:
            tem *= self.decay
            n += 1
        return n


@dataclass
class AnnealState:
    lam: float
    tem: float
    best_eval: float = math.inf
    trajectory: Trajectory = field(default_factory=Trajectory)
    phase: str = "sparsify"
    lam_trace: list = field(default_factory=list)
    tem_trace: list = field(default_factory=list)
    accept_trace: list = field(default_factory=list)


def search_radius(tem, radius, r_low):
    return max(r_low, math.exp(-radius * (1.0 - tem)))


def propose(tem, lam, mode, constraint_met, rng, *, radius=3.0, r_low=0.05):
    """New intensity ``lam * (1 + u)`` with ``u`` drawn inside the current radius.

    Low-dimensional mode draws ``u`` in (-R, R); high-dimensional mode only
    increases lambda until the constraint is met and only decreases it after.
    """
    if lam <= 0:
        raise ValueError(f"lambda must be positive to propose from it, got {lam}")
    R = search_radius(tem, radius, r_low)
    if mode == "low":
        u = rng.uniform(-R, R)
    elif not constraint_met:
        u = rng.uniform(0.0, R)
    else:
        u = rng.uniform(-R, 0.0)
    return max(lam * (1.0 + u), MIN_LAMBDA)


def accept(eval_new, eval_old, tem, rng, sign="min"):
    """Metropolis rule for a minimised score.

    ``sign="paper"`` flips the rule for comparison runs: any increase is
    accepted and a decrease only with probability exp(delta / tem).
    """
    if tem <= 0:
        raise ValueError("temperature must be positive")
    delta = eval_new - eval_old
    if sign == "paper":
        if delta > 0:
            return True
        return rng.random() < math.exp(delta / tem)
    if delta < 0:
        return True
    return rng.random() < math.exp(-delta / tem)


# --------------------------------------------------------------------------


class _Evaluator:
    """Fixed evaluation clouds and metric plumbing for one annealing run."""

    def __init__(self, sampler_P, sampler_Q, tau, cfg):
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
        self.ys = self._cloud(sampler_Q, rng, cfg.eval_size)
        self.xs = self._cloud(sampler_P, rng, cfg.eval_size)
        self.tau = tau
        self.cfg = cfg
        self.bounds = {"spa": metrics.RunningBounds(), "res": metrics.RunningBounds()}

    @staticmethod
    def _cloud(sampler, rng, n):
        X = getattr(sampler, "X", None)
        if X is not None:
            if len(X) <= n:
                return X
            return X[np.sort(rng.choice(len(X), n, replace=False))]
        return np.asarray(sampler(rng, n))

    def measure(self, pair, update=True):
        T = transport(pair.g, self.ys)
        disp = T - self.ys
        spa = metrics.spa(disp, self.tau)
        res = metrics.sliced_w2(T, self.xs, self.cfg.n_proj, self.cfg.seed)
        dim = metrics.displacement_dim(disp, self.cfg.threshold)
        if update:
            self.bounds["spa"].update(spa)
            self.bounds["res"].update(res)
        return {"spa": spa, "res": res, "dim": dim}

    def score(self, m):
        return metrics.eval_score(m["spa"], m["res"], self.cfg.a, self.bounds)


def _warmup(pair, sp, sq, train_cfg, cfg, ev, traj, lam):
    def monitor(p, lam_):
        m = ev.measure(p)
        return {"spa": m["spa"], "res": m["res"], "dim": m["dim"]}

    run_iters(pair, sp, sq, train_cfg, cfg.n_ini, lam, traj, monitor)
    m = ev.measure(pair)
    return m


def _record(pair, lam, m, ev=None, accepted=None, obj=float("nan")):
    score = ev.score(m) if ev is not None else float("nan")
    return Record(pair.iteration, lam, obj, m["spa"], m["res"], score, m["dim"], accepted)


def _append(traj, rec):
    if traj.records and rec.iter <= traj.records[-1].iter:
        traj.records[-1] = rec
    else:
        traj.append(rec)


def anneal_low_dim(sampler_P, sampler_Q, train_cfg, cfg, pair=None):
    """Adaptive-lambda training balancing sparsity and residue.

    Returns ``(pair, trajectory)``; ``trajectory.summary`` holds the final
    lambda, residue, dimensionality and the accepted-lambda trace.
    """
    sp, sq = as_sampler(sampler_P), as_sampler(sampler_Q)
    if pair is None:
        pair = init_pair(_dim_of(sq), train_cfg)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[0])
    ev = _Evaluator(sp, sq, train_cfg.penalty, cfg)
    traj = Trajectory()
    state = AnnealState(cfg.lambda0, cfg.tem0)

    m_old = _warmup(pair, sp, sq, train_cfg, cfg, ev, traj, cfg.lambda0)
    state.best_eval = ev.score(m_old)
    _append(traj, _record(pair, state.lam, m_old, ev))
    lam = cfg.lambda0 if cfg.lambda0 > 0 else MIN_LAMBDA
    state.lam = lam
    best_so_far = []
    while state.tem > cfg.tem_min:
        lam_new = propose(state.tem, state.lam, "low", None, rng, radius=cfg.radius, r_low=cfg.r_low)
        last = run_iters(pair, sp, sq, train_cfg, cfg.n_tr, lam_new)
        m_new = ev.measure(pair)
        e_new, e_old = ev.score(m_new), ev.score(m_old)
        ok = accept(e_new, e_old, state.tem, rng, cfg.accept_sign)
        state.tem_trace.append(state.tem)
        state.lam_trace.append(lam_new)
        state.accept_trace.append(ok)
        rec = _record(pair, lam_new, m_new, ev, ok, last["obj"])
        if ok:
            state.lam = lam_new
            m_old = m_new
        else:
            run_iters(pair, sp, sq, train_cfg, cfg.n_sm, state.lam)
        state.best_eval = min(state.best_eval, e_new if ok else e_old)
        best_so_far.append(state.best_eval)
        _append(traj, rec)
        state.tem *= cfg.decay

    final = ev.measure(pair, update=False)
    traj.summary = {
        "mode": "low",
        "final_lambda": state.lam,
        "final_dim": final["dim"],
        "final_res": final["res"],
        "final_spa": final["spa"],
        "phase_boundaries": [cfg.n_ini],
        "lambda_trace": state.lam_trace,
        "tem_trace": state.tem_trace,
        "accept_trace": state.accept_trace,
        "best_eval_trace": best_so_far,
    }
    return pair, traj


def anneal_high_dim(sampler_P, sampler_Q, train_cfg, cfg, pair=None):
    """Adaptive-lambda training under a displacement-dimensionality target.

    Phase 1 raises lambda (always adopting the proposal) while the mean
    dimensionality is above ``l``.  Phase 2 lowers lambda and keeps a
    proposal only if the map still satisfies ``dim <= l``; rejected
    proposals roll the networks back.  Returns the feasible state with the
    smallest residue, or the lowest-dimensional state if ``l`` was never met.
    """
    sp, sq = as_sampler(sampler_P), as_sampler(sampler_Q)
    if pair is None:
        pair = init_pair(_dim_of(sq), train_cfg)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[0])
    ev = _Evaluator(sp, sq, train_cfg.penalty, cfg)
    traj = Trajectory()
    l = float(cfg.l)
    lam = cfg.lambda0 if cfg.lambda0 > 0 else MIN_LAMBDA
    state = AnnealState(lam, cfg.tem0)

    m = _warmup(pair, sp, sq, train_cfg, cfg, ev, traj, lam)
    _append(traj, _record(pair, lam, m))
    best = _Best(l)
    best.offer(pair, lam, m)

    while m["dim"] > l and state.tem > cfg.tem_min:
        lam_new = propose(state.tem, state.lam, "high", False, rng, radius=cfg.radius, r_low=cfg.r_low)
        last = run_iters(pair, sp, sq, train_cfg, cfg.n_tr, lam_new)
        m = ev.measure(pair)
        state.lam_trace.append(lam_new)
        state.tem_trace.append(state.tem)
        state.accept_trace.append(True)
        state.lam = lam_new
        best.offer(pair, lam_new, m)
        _append(traj, _record(pair, lam_new, m, accepted=True, obj=last["obj"]))
        state.tem *= cfg.decay
    boundary = pair.iteration
    n_phase1 = len(state.lam_trace)
    state.phase = "refine"

    while state.tem > cfg.tem_min:
        lam_new = propose(state.tem, state.lam, "high", True, rng, radius=cfg.radius, r_low=cfg.r_low)
        snapshot = pair.copy()
        last = run_iters(pair, sp, sq, train_cfg, cfg.n_tr, lam_new)
        m = ev.measure(pair)
        ok = m["dim"] <= l
        state.lam_trace.append(lam_new)
        state.tem_trace.append(state.tem)
        state.accept_trace.append(ok)
        _append(traj, _record(pair, lam_new, m, accepted=ok, obj=last["obj"]))
        best.offer(pair, lam_new, m)
        if ok:
            state.lam = lam_new
        else:
            it = pair.iteration
            pair = snapshot
            # keep iteration numbers increasing across rollbacks
            pair.iteration = it
        state.tem *= cfg.decay

    final_pair, final_lam, final_m = best.result()
    final_pair.iteration = pair.iteration
    traj.summary = {
        "mode": "high",
        "target_dim": l,
        "feasible": best.feasible is not None,
        "final_lambda": final_lam,
        "final_dim": final_m["dim"],
        "final_res": final_m["res"],
        "final_spa": final_m["spa"],
        "phase_boundaries": [cfg.n_ini, boundary],
        "n_phase1": n_phase1,
        "lambda_trace": state.lam_trace,
        "tem_trace": state.tem_trace,
        "accept_trace": state.accept_trace,
    }
    return final_pair, traj


class _Best:
    """Tracks the best feasible state (lowest residue) and the lowest-dim state."""

    def __init__(self, l):
        self.l = l
        self.feasible = None
        self.lowest = None

    def offer(self, pair, lam, m):
        if m["dim"] <= self.l and (self.feasible is None or m["res"] < self.feasible[2]["res"]):
            self.feasible = (pair.copy(), lam, m)
        if self.lowest is None or m["dim"] < self.lowest[2]["dim"]:
            self.lowest = (pair.copy(), lam, m)

    def result(self):
        return self.feasible if self.feasible is not None else self.lowest


def _dim_of(sampler):
    d = getattr(sampler, "dim", None)
    if d is None:
        d = np.asarray(sampler(np.random.default_rng(0), 1)).shape[1]
    return d
