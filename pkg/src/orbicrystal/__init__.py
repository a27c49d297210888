"""Orbifold melting crystal models and their integrable structure.

Exact evaluation of the two orbifold crystal partition functions,
machine verification of the quantum-torus shift symmetries and of the
tau-function correspondences behind them, and construction of the
initial Toda Lax operators together with their bi-graded / rational
factorizations.
"""

from .scalars import Context, QSeries, Jet, JetSpec, qpow

__all__ = ["Context", "QSeries", "Jet", "JetSpec", "qpow"]
__version__ = "0.1.0"
