"""Sparse two-class linear discriminant analysis.

Feature selection by constrained l1 minimization followed by an LDA refit,
plus the simulation and real-data harness around it.
"""

__version__ = "0.1.0"
