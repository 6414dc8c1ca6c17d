"""Hierarchical MILP planning with cyclic-horizon tube MPC tracking."""

__version__ = "0.1.0"
