"""Stokes flow through many small spheres and its Brinkman limit."""

__version__ = "0.1.0"
