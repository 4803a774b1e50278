"""Numerical upscaling of divergence-form elliptic operators with rough
coefficients using a-harmonic coordinates."""

__version__ = "0.1.0"
