"""Simulation of probabilistic honest-node-set construction for light clients."""

__version__ = "0.1.0"
