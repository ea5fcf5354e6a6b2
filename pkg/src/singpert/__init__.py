"""Simulation and certificate checking for singularly perturbed systems with
state-dependent perturbation functions."""

__version__ = "0.1.0"
