"""Synthetic generators and point-cloud persistence (CSV and a small binary format)."""
from __future__ import annotations

import csv
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

MAGIC = b"SOTM"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")
BINARY_SUFFIXES = (".bin", ".sotm")


def gen_eight_gaussians(n, radius=5.0, std=0.5, seed=0):
    """Source N(0, std^2 I) at the origin, target an equal mixture of eight modes on a circle."""
    if n < 8:
        raise ValueError(f"need n >= 8, got {n}")
    rng = np.random.default_rng(seed)
    source = rng.normal(scale=std, size=(n, 2))
    k = np.arange(n) % 8
    rng.shuffle(k)
    ang = 2 * np.pi * k / 8
    centers = radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    target = centers + rng.normal(scale=std, size=(n, 2))
    return source, target


def eight_centers(radius=5.0):
    ang = 2 * np.pi * np.arange(8) / 8
    return radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 1000
    d: int = 200
    k: int = 20
    effect: float = 5.0
    noise_sigma: float = 0.03
    jitter: float = 0.1
    base_scale: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.k <= self.d:
            raise ValueError(f"need 1 <= k <= d, got k={self.k}, d={self.d}")
        if self.n < 2:
            raise ValueError(f"need n >= 2, got {self.n}")
        if not self.effect > 0:
            raise ValueError("effect must be positive")
        if not self.base_scale > 0:
            raise ValueError("base_scale must be positive")
        if self.noise_sigma < 0 or self.jitter < 0:
            raise ValueError("noise_sigma and jitter must be nonnegative")

    def to_config(self):
        return asdict(self)


def gen_synthetic_perturbation(spec):
    """Control and perturbed cells with ``k`` shifted genes.

    Both sides draw genes independently from ``base_scale * |N(0, 1)|``.
    Perturbed cells get ``effect + N(0, jitter^2)`` on the truth genes and
    ``N(0, noise_sigma^2)`` on every other gene.  Returns
    ``(control, perturbed, truth_idx)``.

    The base scale matters more than it looks.  Control and perturbed cells
    are separate draws, so each untouched gene still has an empirical mean gap
    of about ``sqrt((2 * var + noise_sigma^2) / n)``, and a map that matches
    the two clouds exactly has to move that gene by the gap.  Keep the gap
    below the dimensionality threshold if the truth set should be recoverable.
    """
    if isinstance(spec, dict):
        spec = SyntheticSpec(**spec)
    rng = np.random.default_rng(spec.seed)
    truth = np.sort(rng.choice(spec.d, spec.k, replace=False))
    control = spec.base_scale * np.abs(rng.normal(size=(spec.n, spec.d)))
    perturbed = spec.base_scale * np.abs(rng.normal(size=(spec.n, spec.d)))
    shift = rng.normal(scale=spec.noise_sigma, size=(spec.n, spec.d)) if spec.noise_sigma else np.zeros((spec.n, spec.d))
    shift[:, truth] = spec.effect + rng.normal(scale=spec.jitter, size=(spec.n, spec.k))
    return control, perturbed + shift, truth


# --------------------------------------------------------------------------
# persistence


def _check_finite(X, where):
    bad = ~np.isfinite(X)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise ValueError(f"{where}: non-finite entry at row {r}, column {c}")


def save_matrix(X, path, columns=None):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    _check_finite(X, str(path))
    path = Path(path)
    if path.suffix in BINARY_SUFFIXES:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, X.shape[0], X.shape[1]))
            fh.write(np.ascontiguousarray(X, dtype="<f8").tobytes())
        return path
    columns = list(columns) if columns is not None else [f"x{j}" for j in range(X.shape[1])]
    if len(columns) != X.shape[1]:
        raise ValueError(f"{len(columns)} column names for {X.shape[1]} columns")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in X:
            w.writerow([format(v, ".17g") for v in row])
    return path


def load_matrix(path):
    path = Path(path)
    if path.suffix in BINARY_SUFFIXES:
        return _load_binary(path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        width = len(header)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != width:
                raise ValueError(f"{path}:{line}: expected {width} fields, found {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError as e:
                raise ValueError(f"{path}:{line}: {e}") from None
            if any(v != v for v in vals):
                raise ValueError(f"{path}:{line}: NaN entry")
            rows.append(vals)
    X = np.array(rows, dtype=np.float64).reshape(len(rows), width)
    _check_finite(X, str(path))
    return X


def _load_binary(path):
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, n, d = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a matrix file")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    body = raw[_HEADER.size:]
    if len(body) != 8 * n * d:
        raise ValueError(f"{path}: expected {n}x{d} values, found {len(body) // 8}")
    X = np.frombuffer(body, dtype="<f8").reshape(n, d).astype(np.float64)
    _check_finite(X, str(path))
    return X
