"""Numerical laboratory for quantum measurement and decoherence models."""
