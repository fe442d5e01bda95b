"""Minimax training of the dual potentials (f, g).

g minimises and f maximises

    V(f, g) + lam * E_Q tau(grad g(Y) - Y),
    V(f, g) = -E_P f(X) - E_Q [<Y, grad g(Y)> - f(grad g(Y))],

so ``grad g`` transports Q onto P.  Both potentials are ICNNs; their z-path
weights are clipped at zero after every optimizer step.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import icnn, kernels
from .errors import NumericalError, ShapeError
from .penalty import Penalty


@dataclass
class TrainConfig:
    batch_size: int = 128
    lr_f: float = 1e-4
    lr_g: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    inner_steps: int = 10
    total_iters: int = 1000
    lam: float = 0.0
    penalty: Penalty = field(default_factory=Penalty)
    seed: int = 0
    log_every: int = 100
    widths: list | None = None
    activation: str = "softplus"
    quadratic: float = 1.0
    quadratic_f: float = 0.1
    init_scale: float = 1.0

    def __post_init__(self):
        self.penalty = Penalty.from_config(self.penalty)
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be >= 1")
        if self.total_iters < 0:
            raise ValueError("total_iters must be >= 0")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.lr_f < 0 or self.lr_g < 0:
            raise ValueError("learning rates must be nonnegative")
        if self.quadratic < 0 or self.quadratic_f < 0:
            raise ValueError("quadratic heads must be nonnegative to keep the potentials convex")

    def replace(self, **kw):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return TrainConfig(**d)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)

    def copy(self):
        return AdamState(self.m.copy(), self.v.copy(), self.t)


@dataclass
class DualPair:
    f: icnn.IcnnNet
    g: icnn.IcnnNet
    opt_f: AdamState
    opt_g: AdamState
    rng: np.random.Generator
    iteration: int = 0

    def __post_init__(self):
        if self.f.input_dim != self.g.input_dim:
            raise ShapeError("f and g must share the input dimension")
        self._mask_f = self.f.nonneg_mask()
        self._mask_g = self.g.nonneg_mask()

    @property
    def dim(self):
        return self.g.input_dim

    def copy(self):
        rng = np.random.Generator(type(self.rng.bit_generator)())
        rng.bit_generator.state = self.rng.bit_generator.state
        return DualPair(self.f.copy(), self.g.copy(), self.opt_f.copy(), self.opt_g.copy(), rng, self.iteration)


def init_pair(d, cfg):
    """Fresh pair with f, g initialised from independent streams of ``cfg.seed``."""
    widths = cfg.widths or icnn.default_widths(d)
    ss = np.random.SeedSequence(cfg.seed)
    sf, sg, sb = ss.spawn(3)
    # f gets only a weak head: a q-strongly convex f caps the map's Lipschitz constant at 1/q
    f = icnn.init(d, widths, cfg.activation, sf, scale=cfg.init_scale, quadratic=cfg.quadratic_f)
    g = icnn.init(d, widths, cfg.activation, sg, scale=cfg.init_scale, quadratic=cfg.quadratic)
    return DualPair(f, g, AdamState.zeros(f.theta.size), AdamState.zeros(g.theta.size),
                    np.random.default_rng(sb))


# --------------------------------------------------------------------------
# samplers


class EmpiricalSampler:
    """Uniform minibatches (without replacement) from a fixed point cloud."""

    def __init__(self, X):
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        if self.X.ndim != 2 or len(self.X) == 0:
            raise ShapeError("point cloud must be a nonempty (n, d) array")

    @property
    def dim(self):
        return self.X.shape[1]

    def __call__(self, rng, n):
        replace = n > len(self.X)
        return self.X[rng.choice(len(self.X), size=n, replace=replace)]


def as_sampler(src):
    if isinstance(src, np.ndarray):
        return EmpiricalSampler(src)
    if callable(src):
        return src
    raise TypeError("sampler must be an (n, d) array or a callable (rng, n) -> array")


# --------------------------------------------------------------------------
# objective pieces


def estimate_c(xs, ys):
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
    return 0.5 * ((xs * xs).sum(axis=1).mean() + (ys * ys).sum(axis=1).mean())


def transport(g, ys):
    """Row-wise grad g(y): the image of the Q-side points."""
    return icnn.input_grad(g, ys)


def displacement(g, ys):
    ys = np.asarray(ys, dtype=np.float64)
    return transport(g, ys) - ys


def dual_objective(pair, xs, ys, lam, tau):
    """Batch estimate of V(f, g) + lam * E tau(grad g(y) - y), without C."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
    d = pair.dim
    if xs.shape[1] != d or ys.shape[1] != d:
        raise ShapeError(f"batches must have dimension {d}")
    u = transport(pair.g, ys)
    fx = icnn.evaluate(pair.f, xs)
    fu = icnn.evaluate(pair.f, u)
    val = -fx.mean() - ((ys * u).sum(axis=1) - fu).mean()
    if lam:
        val += lam * tau.value(u - ys).mean()
    if not np.isfinite(val):
        raise NumericalError("non-finite dual objective", iteration=pair.iteration, lam=lam)
    return float(val)


def full_objective(pair, xs, ys, lam, tau):
    """Objective plus the constant C, i.e. the regularised W2^2 estimate."""
    return dual_objective(pair, xs, ys, lam, tau) + estimate_c(xs, ys)


def _layer_of(net, idx):
    for i in range(net.n_layers - 1, -1, -1):
        if idx >= net.layout[i, 1]:
            return i
    return 0


def _bad_layer(net):
    bad = np.flatnonzero(~np.isfinite(net.theta))
    return _layer_of(net, int(bad[0])) if bad.size else "n/a"


def _check_grad(net, grad, pair, lam, who):
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise NumericalError(f"non-finite gradient for {who}", iteration=pair.iteration,
                             layer=_layer_of(net, bad), lam=lam)


def g_gradient(pair, ys, lam, tau):
    """Parameter gradient of the g-player loss on batch ``ys``; also returns the loss."""
    g, f = pair.g, pair.f
    B = len(ys)
    out = {}

    def cotangent(G):
        u = G + g.quadratic * ys if g.quadratic else G
        if not np.all(np.isfinite(u)):
            raise NumericalError("non-finite transported points", iteration=pair.iteration,
                                 layer=_bad_layer(g), lam=lam)
        fu, gf = icnn.value_and_grad(f, u)
        V = gf - ys
        loss = (fu - (ys * u).sum(axis=1)).mean()
        if lam:
            disp = u - ys
            V += lam * tau.grad(disp)
            loss += lam * tau.value(disp).mean()
        out["loss"] = loss
        return V / B

    _, grad = kernels.icnn_mixed_step(g.theta, g.layout, g.input_dim, g.act_code, ys, cotangent)
    return grad, out["loss"]


def f_gradient(pair, xs, ys):
    """Gradient of mean f(x) - mean f(grad g(y)); descending it is ascent on V."""
    f, g = pair.f, pair.g
    u = transport(g, ys)
    Z = np.concatenate([xs, u])
    w = np.concatenate([np.full(len(xs), 1.0 / len(xs)), np.full(len(u), -1.0 / len(u))])
    grad = kernels.icnn_param_grad(f.theta, f.layout, f.input_dim, f.act_code, Z, w)
    fx = kernels.icnn_values(f.theta, f.layout, f.input_dim, f.act_code, xs)
    if f.quadratic:
        fx = fx + 0.5 * f.quadratic * (xs * xs).sum(axis=1)
    return grad, fx.mean()


def _adam(net, state, grad, lr, cfg, mask):
    state.t += 1
    kernels.adam_update(net.theta, grad, state.m, state.v, state.t, lr, cfg.beta1, cfg.beta2, 1e-8, mask)


def train_step(pair, sampler_P, sampler_Q, cfg, lam=None):
    """``inner_steps`` descent updates on g, then one ascent update on f.

    Mutates and returns ``pair``.  The returned objective is the last g-loss
    minus the f-side term, i.e. the minibatch value of the regularised V.
    """
    lam = cfg.lam if lam is None else lam
    tau = cfg.penalty
    rng = pair.rng
    B = cfg.batch_size
    for _ in range(cfg.inner_steps):
        ys = sampler_Q(rng, B)
        grad, g_loss = g_gradient(pair, ys, lam, tau)
        _check_grad(pair.g, grad, pair, lam, "g")
        if cfg.lr_g:
            _adam(pair.g, pair.opt_g, grad, cfg.lr_g, cfg, pair._mask_g)
    xs = sampler_P(rng, B)
    ys = sampler_Q(rng, B)
    grad, fx_mean = f_gradient(pair, xs, ys)
    _check_grad(pair.f, grad, pair, lam, "f")
    if cfg.lr_f:
        _adam(pair.f, pair.opt_f, grad, cfg.lr_f, cfg, pair._mask_f)
    pair.iteration += 1
    obj = float(g_loss - fx_mean)
    if not np.isfinite(obj):
        raise NumericalError("non-finite objective", iteration=pair.iteration, lam=lam)
    return pair, {"iter": pair.iteration, "obj": obj}


# --------------------------------------------------------------------------
# trajectories


@dataclass
class Record:
    iter: int
    lam: float
    obj: float
    spa: float = float("nan")
    res: float = float("nan")
    eval: float = float("nan")
    dim: float = float("nan")
    accepted: bool | None = None

    def to_json(self):
        d = {"iter": self.iter, "lambda": self.lam, "obj": self.obj, "spa": self.spa,
             "res": self.res, "eval": self.eval, "dim": self.dim}
        # unset metrics are written as null to keep the file strict JSON
        d = {k: (None if isinstance(v, float) and v != v else v) for k, v in d.items()}
        if self.accepted is not None:
            d["accepted"] = self.accepted
        return d

    @classmethod
    def from_json(cls, d):
        def num(key):
            v = d.get(key)
            return float("nan") if v is None else float(v)

        return cls(int(d["iter"]), num("lambda"), num("obj"), num("spa"), num("res"), num("eval"), num("dim"),
                   d.get("accepted"))


@dataclass
class Trajectory:
    records: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def append(self, rec):
        if self.records and rec.iter <= self.records[-1].iter:
            raise ValueError(f"trajectory iterations must increase ({rec.iter} after {self.records[-1].iter})")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r.to_json()) + "\n")

    @classmethod
    def read_jsonl(cls, path):
        traj = cls()
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    traj.append(Record.from_json(json.loads(line)))
        return traj


# --------------------------------------------------------------------------
# driver

Monitor = Callable[[DualPair, float], dict]


def run_iters(pair, sampler_P, sampler_Q, cfg, n, lam, traj=None, monitor=None, log_every=None):
    """Advance ``pair`` by ``n`` train steps at intensity ``lam``."""
    log_every = log_every or cfg.log_every
    last = None
    for _ in range(n):
        _, last = train_step(pair, sampler_P, sampler_Q, cfg, lam)
        if traj is not None and log_every and pair.iteration % log_every == 0:
            extra = monitor(pair, lam) if monitor else {}
            traj.append(Record(pair.iteration, lam, last["obj"], **extra))
    return last


def fit(sampler_P, sampler_Q, cfg, monitor=None, pair=None):
    """Train for ``cfg.total_iters`` steps at constant ``cfg.lam``."""
    sampler_P = as_sampler(sampler_P)
    sampler_Q = as_sampler(sampler_Q)
    if pair is None:
        d = getattr(sampler_Q, "dim", None)
        if d is None:
            d = np.asarray(sampler_Q(np.random.default_rng(0), 1)).shape[1]
        pair = init_pair(d, cfg)
    traj = Trajectory()
    run_iters(pair, sampler_P, sampler_Q, cfg, cfg.total_iters, cfg.lam, traj, monitor)
    return pair, traj
