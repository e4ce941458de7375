"""Doubly periodic SU(n+1) Chern-Simons-Higgs vortex condensates by constrained minimization."""

__version__ = "0.1.0"
