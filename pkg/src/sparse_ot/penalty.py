"""Sparsity penalties on displacement vectors.

All functions act on the last axis: a vector gives a scalar, a (n, d) batch
gives one value per row.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("l1", "stvs", "sl0")
DEFAULT_GAMMA = 100.0
DEFAULT_XI = 1.0


@dataclass(frozen=True)
class Penalty:
    kind: str = "l1"
    gamma: float = DEFAULT_GAMMA
    xi: float = DEFAULT_XI

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown penalty {self.kind!r}; expected one of {KINDS}")
        if self.kind == "stvs" and not self.gamma > 0:
            raise ValueError("stvs needs gamma > 0")
        if self.kind == "sl0" and not self.xi > 0:
            raise ValueError("sl0 needs xi > 0")

    @classmethod
    def from_config(cls, spec):
        """Build from ``"l1"`` or a mapping like ``{"kind": "stvs", "gamma": 10}``."""
        if isinstance(spec, Penalty):
            return spec
        if isinstance(spec, str):
            return cls(spec)
        spec = dict(spec)
        kind = spec.pop("kind", spec.pop("name", "l1"))
        unknown = set(spec) - {"gamma", "xi"}
        if unknown:
            raise KeyError(f"unknown penalty keys {sorted(unknown)}; valid keys are gamma, xi")
        return cls(kind, **{k: float(v) for k, v in spec.items()})

    def to_config(self):
        out = {"kind": self.kind}
        if self.kind == "stvs":
            out["gamma"] = self.gamma
        if self.kind == "sl0":
            out["xi"] = self.xi
        return out

    def value(self, z):
        return value(self, z)

    def grad(self, z):
        return grad(self, z)


def _finite(z):
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("penalty input contains NaN or Inf")
    return z


def value(p, z):
    z = _finite(z)
    if p.kind == "l1":
        return np.abs(z).sum(axis=-1)
    if p.kind == "sl0":
        return (-np.expm1(-z * z / (2.0 * p.xi ** 2))).sum(axis=-1)
    # stvs, taken on |z| so the penalty is even and nonnegative
    s = np.arcsinh(np.abs(z) / (2.0 * p.gamma))
    return p.gamma ** 2 * (s - 0.5 * np.expm1(-2.0 * s)).sum(axis=-1)


def grad(p, z):
    z = _finite(z)
    if p.kind == "l1":
        return np.sign(z)
    if p.kind == "sl0":
        return z / p.xi ** 2 * np.exp(-z * z / (2.0 * p.xi ** 2))
    u = np.abs(z) / (2.0 * p.gamma)
    root = np.sqrt(1.0 + u * u)
    # exp(-2 asinh u) = (root - u)^2
    return np.sign(z) * p.gamma * (1.0 + (root - u) ** 2) / (2.0 * root)


def prox_l1(v, t):
    """Soft threshold: argmin_u 0.5 |u - v|^2 + t |u|_1."""
    if t < 0:
        raise ValueError(f"threshold must be nonnegative, got {t}")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)
