"""Finite Markov chain certification and stochastic-approximation convergence experiments.

Submodules: :mod:`rlsa.markov` (chain analysis), :mod:`rlsa.mdp` (models and
fixed-point solvers), :mod:`rlsa.trajectory` (seeded sampling),
:mod:`rlsa.algorithms` (TD and Q-learning updates), :mod:`rlsa.sa` (Lyapunov,
anchors, noise decomposition), :mod:`rlsa.harness` (multi-seed experiments)
and :mod:`rlsa.cli`.
"""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
