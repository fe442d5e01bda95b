"""Input convex neural networks.

The network computes

    z_1     = act(Wy_0 y + b_0)
    z_{i+1} = act(Wz_i z_i + Wy_i y + b_i),   i = 1..k-1
    h(y)    = z_k  (+ quadratic / 2 * |y|^2)

and is convex in ``y`` whenever every ``Wz_i`` is entrywise nonnegative and
the activation is convex and nondecreasing.  Parameters are stored in one
flat vector so optimizers and kernels can work on a single array.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ShapeError

ACTIVATIONS = {
    "softplus": kernels.ACT_SOFTPLUS,
    "relu": kernels.ACT_RELU,
    "leaky_softplus": kernels.ACT_LEAKY_SOFTPLUS,
}

MAGIC = b"ICNNv\x00\x00\x00"
FORMAT_VERSION = 1


def default_widths(d):
    h = 64 if d <= 10 else 128
    return [h, h, 1]


def build_layout(input_dim, widths):
    """Row per layer: (width, offset_Wy, offset_b, offset_Wz)."""
    rows = []
    off = 0
    prev = None
    for i, w in enumerate(widths):
        o_wy = off
        off += w * input_dim
        o_b = off
        off += w
        if i == 0:
            o_wz = -1
        else:
            o_wz = off
            off += w * prev
        rows.append((w, o_wy, o_b, o_wz))
        prev = w
    return np.asarray(rows, dtype=np.int64), off


@dataclass
class IcnnNet:
    input_dim: int
    widths: list
    activation: str = "softplus"
    quadratic: float = 0.0
    theta: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.widths = [int(w) for w in self.widths]
        if self.input_dim <= 0 or not self.widths or min(self.widths) <= 0:
            raise ShapeError("input_dim and all widths must be positive")
        if self.widths[-1] != 1:
            raise ShapeError(f"final width must be 1, got {self.widths[-1]}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; choose from {sorted(ACTIVATIONS)}")
        self.layout, n = build_layout(self.input_dim, self.widths)
        if self.theta is None:
            self.theta = np.zeros(n)
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if self.theta.shape != (n,):
            raise ShapeError(f"expected {n} parameters, got {self.theta.shape}")

    @property
    def n_layers(self):
        return len(self.widths)

    @property
    def act_code(self):
        return ACTIVATIONS[self.activation]

    def Wy(self, i):
        w, o, _, _ = self.layout[i]
        return self.theta[o:o + w * self.input_dim].reshape(w, self.input_dim)

    def b(self, i):
        w, _, o, _ = self.layout[i]
        return self.theta[o:o + w]

    def Wz(self, i):
        if i == 0:
            raise IndexError("layer 0 has no z-path weights")
        w, _, _, o = self.layout[i]
        wp = self.widths[i - 1]
        return self.theta[o:o + w * wp].reshape(w, wp)

    def nonneg_mask(self):
        """Boolean mask over ``theta`` selecting every Wz entry."""
        mask = np.zeros(self.theta.size, dtype=bool)
        for i in range(1, self.n_layers):
            w, _, _, o = self.layout[i]
            mask[o:o + w * self.widths[i - 1]] = True
        return mask

    def copy(self):
        return IcnnNet(self.input_dim, list(self.widths), self.activation, self.quadratic, self.theta.copy())

    def _check(self, Y):
        Y = np.asarray(Y, dtype=np.float64)
        single = Y.ndim == 1
        Y = np.atleast_2d(Y)
        if Y.shape[1] != self.input_dim:
            raise ShapeError(f"layer 0: input has dimension {Y.shape[1]}, net expects {self.input_dim}")
        return np.ascontiguousarray(Y), single

    def __call__(self, Y):
        return evaluate(self, Y)


def init(input_dim, widths=None, activation="softplus", seed=0, *, scale=1.0, quadratic=0.0):
    """Random ICNN.  Wy ~ U(-s, s), Wz ~ |U(-s, s)|, s = scale / sqrt(fan_in), b = 0."""
    if widths is None:
        widths = default_widths(input_dim)
    net = IcnnNet(int(input_dim), list(widths), activation, float(quadratic))
    rng = np.random.default_rng(seed)
    for i, w in enumerate(net.widths):
        fan_in = input_dim + (net.widths[i - 1] if i > 0 else 0)
        s = scale / np.sqrt(fan_in)
        net.Wy(i)[...] = rng.uniform(-s, s, size=(w, input_dim))
        if i > 0:
            net.Wz(i)[...] = np.abs(rng.uniform(-s, s, size=(w, net.widths[i - 1])))
    return net


def evaluate(net, Y):
    """Potential value(s); a 1-D input returns a float."""
    Y, single = net._check(Y)
    vals = kernels.icnn_values(net.theta, net.layout, net.input_dim, net.act_code, Y)
    if net.quadratic:
        vals = vals + 0.5 * net.quadratic * (Y * Y).sum(axis=1)
    return float(vals[0]) if single else vals


def value_and_grad(net, Y):
    """Values and input gradients for a batch ``Y`` of shape (B, d)."""
    Y, single = net._check(Y)
    vals, G = kernels.icnn_value_and_input_grad(net.theta, net.layout, net.input_dim, net.act_code, Y)
    if net.quadratic:
        vals = vals + 0.5 * net.quadratic * (Y * Y).sum(axis=1)
        G = G + net.quadratic * Y
    if single:
        return float(vals[0]), G[0]
    return vals, G


def input_grad(net, Y):
    return value_and_grad(net, Y)[1]


def project(net):
    """Clip every Wz entry at zero; Wy and b are left alone.  Returns a new net."""
    out = net.copy()
    project_(out)
    return out


def project_(net):
    np.maximum(net.theta, 0.0, out=net.theta, where=net.nonneg_mask())
    return net


def is_convex_probe(net, trials=1000, seed=0, *, spread=3.0, atol=1e-9):
    """Sampled check of f(t a + (1-t) b) <= t f(a) + (1-t) f(b) + atol."""
    rng = np.random.default_rng(seed)
    a = rng.normal(scale=spread, size=(trials, net.input_dim))
    b = rng.normal(scale=spread, size=(trials, net.input_dim))
    t = rng.uniform(size=(trials, 1))
    mid = evaluate(net, t * a + (1 - t) * b)
    chord = t[:, 0] * evaluate(net, a) + (1 - t[:, 0]) * evaluate(net, b)
    return bool(np.all(mid <= chord + atol))


# --------------------------------------------------------------------------
# persistence: binary weights + JSON sidecar with shapes


def _sidecar(path):
    path = Path(path)
    return path.with_suffix(path.suffix + ".json")


def save(net, path):
    path = Path(path)
    act = net.activation.encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIII", FORMAT_VERSION, net.input_dim, len(net.widths), len(act)))
        fh.write(struct.pack(f"<{len(net.widths)}I", *net.widths))
        fh.write(act)
        fh.write(struct.pack("<dQ", net.quadratic, net.theta.size))
        fh.write(net.theta.astype("<f8").tobytes())
    shapes = {"version": FORMAT_VERSION, "input_dim": net.input_dim, "widths": net.widths,
              "activation": net.activation, "quadratic": net.quadratic,
              "layers": []}
    for i in range(net.n_layers):
        layer = {"Wy": list(net.Wy(i).shape), "b": [net.widths[i]]}
        if i > 0:
            layer["Wz"] = list(net.Wz(i).shape)
        shapes["layers"].append(layer)
    _sidecar(path).write_text(json.dumps(shapes, indent=1))


def load(path):
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not an ICNN checkpoint")
    pos = 8
    version, d, nl, nact = struct.unpack_from("<IIII", raw, pos)
    pos += 16
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    widths = list(struct.unpack_from(f"<{nl}I", raw, pos))
    pos += 4 * nl
    act = raw[pos:pos + nact].decode()
    pos += nact
    quad, n = struct.unpack_from("<dQ", raw, pos)
    pos += 16
    theta = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).astype(np.float64)
    side = _sidecar(path)
    if side.exists():
        meta = json.loads(side.read_text())
        if meta.get("version") != version or meta.get("widths") != widths or meta.get("input_dim") != d:
            raise ShapeError(f"{path}: sidecar shapes do not match weight file")
    return IcnnNet(d, widths, act, quad, theta)
