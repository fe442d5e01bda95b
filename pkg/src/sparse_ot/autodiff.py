"""A small reverse-mode tape over dense numpy arrays.

Nodes are appended in evaluation order, so the tape is already topologically
sorted and ``backward`` is a single reverse sweep.  Supported primitives are
the handful an ICNN needs: affine maps, plain matmuls, elementwise
activations (and their derivatives, so gradient graphs can themselves be
differentiated once), products, sums, scaling and inner products.

This engine is the readable reference; training uses the fused kernels in
:mod:`sparse_ot.kernels`, which are tested against it.
"""
from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .kernels import LEAK


def _sigmoid(a):
    e = np.exp(-np.abs(a))
    r = 1.0 / (1.0 + e)
    return np.where(a >= 0, r, e * r)


def _softplus(a):
    return np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))


# name -> (value, derivative-name or callable)
_ACT = {
    "softplus": (_softplus, lambda a: _sigmoid(a)),
    "sigmoid": (_sigmoid, lambda a: _sigmoid(a) * (1.0 - _sigmoid(a))),
    "relu": (lambda a: np.maximum(a, 0.0), lambda a: (a > 0).astype(float)),
    "step": (lambda a: (a > 0).astype(float), lambda a: np.zeros_like(a)),
    "leaky_softplus": (lambda a: LEAK * a + (1 - LEAK) * _softplus(a),
                       lambda a: LEAK + (1 - LEAK) * _sigmoid(a)),
    "leaky_softplus_prime": (lambda a: LEAK + (1 - LEAK) * _sigmoid(a),
                             lambda a: (1 - LEAK) * _sigmoid(a) * (1.0 - _sigmoid(a))),
    "identity": (lambda a: a, lambda a: np.ones_like(a)),
}

# activation -> the activation computing its derivative
DERIVATIVE = {
    "softplus": "sigmoid",
    "relu": "step",
    "leaky_softplus": "leaky_softplus_prime",
}


class Node:
    __slots__ = ("op", "inputs", "value", "grad", "meta", "index")

    def __init__(self, op, inputs, value, meta=None):
        self.op = op
        self.inputs = inputs
        self.value = value
        self.grad = None
        self.meta = meta
        self.index = -1

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Node({self.op}, shape={self.shape})"


class Tape:
    def __init__(self):
        self.nodes = []
        self.root = None
        self.params = {}
        self.input = None

    def _push(self, op, inputs, value, meta=None):
        for x in inputs:
            if x.index < 0 or self.nodes[x.index] is not x:
                raise ValueError("input node does not belong to this tape")
        node = Node(op, tuple(inputs), value, meta)
        node.index = len(self.nodes)
        self.nodes.append(node)
        return node

    # -- primitives -------------------------------------------------------

    def var(self, value, name=None):
        return self._push("var", (), np.array(value, dtype=np.float64), name)

    def affine(self, x, W, b=None, where=""):
        """``x @ W.T + b``; ``x`` is (in,) or (B, in), ``W`` is (out, in)."""
        if x.shape[-1] != W.shape[1]:
            raise ShapeError(f"{where or 'affine'}: input width {x.shape[-1]} != weight columns {W.shape[1]}")
        val = x.value @ W.value.T
        inputs = (x, W)
        if b is not None:
            val = val + b.value
            inputs = (x, W, b)
        return self._push("affine", inputs, val)

    def matmul(self, x, W):
        """``x @ W`` (no transpose)."""
        return self._push("matmul", (x, W), x.value @ W.value)

    def act(self, x, name):
        fn, _ = _ACT[name]
        return self._push("act", (x,), fn(x.value), name)

    def add(self, a, b):
        return self._push("add", (a, b), a.value + b.value)

    def sub(self, a, b):
        return self._push("sub", (a, b), a.value - b.value)

    def mul(self, a, b):
        return self._push("mul", (a, b), a.value * b.value)

    def scale(self, a, c):
        return self._push("scale", (a,), c * a.value, float(c))

    def sum(self, a):
        return self._push("sum", (a,), np.asarray(a.value.sum()))

    def inner(self, a, b):
        return self._push("inner", (a, b), np.asarray((a.value * b.value).sum()))

    def rowwise(self, x, fn, dfn):
        """Per-row scalar function of the last axis, e.g. a penalty."""
        return self._push("rowwise", (x,), np.asarray(fn(x.value)), dfn)

    # -- reverse sweep ----------------------------------------------------

    def backward(self, root=None):
        root = self.root if root is None else root
        if root is None or np.size(root.value) != 1:
            raise ValueError("backward needs a scalar root node")
        for n in self.nodes:
            n.grad = None
        root.grad = np.ones_like(root.value)
        for n in reversed(self.nodes[:root.index + 1]):
            if n.grad is None or not n.inputs:
                continue
            for x, gx in zip(n.inputs, _vjp(n)):
                if gx is None:
                    continue
                x.grad = gx if x.grad is None else x.grad + gx
        for n in self.nodes[:root.index + 1]:
            if n.grad is not None and not np.all(np.isfinite(n.grad)):
                raise FloatingPointError(f"non-finite adjoint at node {n.index} ({n.op})")
        return root


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _vjp(n):
    g = n.grad
    op = n.op
    if op == "affine":
        x, W = n.inputs[0], n.inputs[1]
        gx = g @ W.value
        gW = np.outer(g, x.value) if x.value.ndim == 1 else g.T @ x.value
        out = [gx, gW]
        if len(n.inputs) == 3:
            out.append(g if g.ndim == 1 else g.sum(axis=0))
        return out
    if op == "matmul":
        x, W = n.inputs
        gx = g @ W.value.T
        gW = np.outer(x.value, g) if x.value.ndim == 1 else x.value.T @ g
        return [gx, gW]
    if op == "act":
        _, d = _ACT[n.meta]
        return [g * d(n.inputs[0].value)]
    if op == "add":
        a, b = n.inputs
        return [_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)]
    if op == "sub":
        a, b = n.inputs
        return [_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)]
    if op == "mul":
        a, b = n.inputs
        return [_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)]
    if op == "scale":
        return [n.meta * g]
    if op == "sum":
        return [np.broadcast_to(g, n.inputs[0].shape).copy()]
    if op == "inner":
        a, b = n.inputs
        return [g * b.value, g * a.value]
    if op == "rowwise":
        x = n.inputs[0]
        return [np.asarray(g)[..., None] * n.meta(x.value)]
    raise ValueError(f"unknown op {op}")


# --------------------------------------------------------------------------
# ICNN on the tape


def param_nodes(tape, net, prefix=""):
    """Leaf nodes for every weight block of ``net``; names like ``Wy0``, ``Wz1``."""
    nodes = {}
    for i in range(net.n_layers):
        nodes[f"{prefix}Wy{i}"] = tape.var(net.Wy(i).copy(), f"{prefix}Wy{i}")
        nodes[f"{prefix}b{i}"] = tape.var(net.b(i).copy(), f"{prefix}b{i}")
        if i:
            nodes[f"{prefix}Wz{i}"] = tape.var(net.Wz(i).copy(), f"{prefix}Wz{i}")
    tape.params.update(nodes)
    return nodes


def _check_input(net, y):
    if np.shape(y.value)[-1] != net.input_dim:
        raise ShapeError(f"layer 0: input has dimension {np.shape(y.value)[-1]}, net expects {net.input_dim}")


def build_forward(tape, net, P, y, prefix=""):
    """Append the ICNN recursion for input node ``y``; returns (output, pre-activations)."""
    _check_input(net, y)
    pres = []
    z = None
    for i in range(net.n_layers):
        a = tape.affine(y, P[f"{prefix}Wy{i}"], P[f"{prefix}b{i}"], where=f"layer {i}")
        if i:
            a = tape.add(a, tape.affine(z, P[f"{prefix}Wz{i}"], where=f"layer {i}"))
        pres.append(a)
        z = tape.act(a, net.activation)
    # z has trailing width 1: (1,) for a vector input, (B, 1) for a batch
    out = z
    if net.quadratic:
        sq = tape.mul(y, y)
        half = tape.scale(sq, 0.5 * net.quadratic)
        ones = tape.var(np.ones((net.input_dim, 1)))
        out = tape.add(out, tape.matmul(half, ones))
    return out, pres


def build_input_grad(tape, net, P, y, pres, prefix=""):
    """Append nodes computing grad_y of the ICNN as a differentiable graph."""
    dname = DERIVATIVE[net.activation]
    L = net.n_layers
    delta = tape.act(pres[L - 1], dname)
    G = tape.matmul(delta, P[f"{prefix}Wy{L - 1}"])
    for i in range(L - 1, 0, -1):
        back = tape.matmul(delta, P[f"{prefix}Wz{i}"])
        delta = tape.mul(back, tape.act(pres[i - 1], dname))
        G = tape.add(G, tape.matmul(delta, P[f"{prefix}Wy{i - 1}"]))
    if net.quadratic:
        G = tape.add(G, tape.scale(y, net.quadratic))
    return G


def forward(net, y):
    """Evaluate ``net`` at a single input vector; returns (value, tape)."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise ShapeError("forward takes a single input vector")
    tape = Tape()
    P = param_nodes(tape, net)
    tape.input = tape.var(y, "y")
    out, _ = build_forward(tape, net, P, tape.input)
    tape.root = tape.sum(out)
    return float(tape.root.value), tape


def grad_params(tape, root=None):
    """Gradients of a scalar root with respect to every parameter node."""
    tape.backward(root)
    return {k: (n.grad if n.grad is not None else np.zeros_like(n.value)) for k, n in tape.params.items()}


def flatten_grads(net, grads, prefix=""):
    """Arrange a ``grad_params`` dict like ``net.theta``."""
    from . import kernels

    flat = np.zeros_like(net.theta)
    L = kernels.Layers(flat, net.layout, net.input_dim)
    for i in range(net.n_layers):
        L.Wy[i][...] = grads[f"{prefix}Wy{i}"]
        L.b[i][...] = grads[f"{prefix}b{i}"]
        if i:
            L.Wz[i][...] = grads[f"{prefix}Wz{i}"]
    return flat


def grad_input(net, y):
    """grad_y net(y) by a reverse sweep to the input node."""
    _, tape = forward(net, y)
    tape.backward()
    g = tape.input.grad
    return np.zeros(net.input_dim) if g is None else g
