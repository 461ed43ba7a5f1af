"""Forced mean curvature flow coupled to surface reaction-diffusion.

Evolving surface finite elements of degree 1 or 2 in space, linearly
implicit BDF methods of order 1 to 5 in time.
"""
__version__ = "0.1.0"
