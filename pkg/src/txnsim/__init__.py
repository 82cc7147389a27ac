"""Discrete-event simulation of distributed transactions on random networks."""

__version__ = "0.1.0"
