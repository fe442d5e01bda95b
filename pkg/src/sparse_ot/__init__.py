"""Displacement-sparse neural optimal transport.

Input-convex potentials trained by a minimax dual, a sparsity penalty on the
displacement grad g(y) - y, and a simulated-annealing controller for the
penalty weight.  Exact and entropic solvers are included as oracles.
"""
from . import autodiff, controller, data, icnn, kernels, metrics, penalty, reference, trainer
from ._accel import backend_name
from .controller import AnnealConfig, anneal_high_dim, anneal_low_dim
from .errors import NumericalError, ShapeError
from .icnn import IcnnNet
from .penalty import Penalty
from .trainer import DualPair, TrainConfig, Trajectory, displacement, fit, transport

__version__ = "0.1.0"

__all__ = [
    "autodiff", "controller", "data", "icnn", "kernels", "metrics", "penalty", "reference", "trainer",
    "AnnealConfig", "anneal_high_dim", "anneal_low_dim", "backend_name",
    "NumericalError", "ShapeError", "IcnnNet", "Penalty",
    "DualPair", "TrainConfig", "Trajectory", "displacement", "fit", "transport",
]
