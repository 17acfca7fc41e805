"""Multiobjective unit commitment: cost/emission frontiers with McCormick liftings."""

__version__ = "0.1.0"
