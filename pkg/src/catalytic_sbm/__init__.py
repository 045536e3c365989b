"""Particle approximations and numerical checks for catalytic super-Brownian motion."""

__version__ = "0.1.0"
