"""Learning dynamics and equilibrium analysis for finite-recall repeated games."""

__version__ = "0.1.0"
