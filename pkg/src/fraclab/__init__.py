"""
fraclab: numerical laboratory for the perturbed fractional Schrödinger equation
and its exterior inverse problem.
"""

from __future__ import annotations

__version__ = "0.1.0"

__all__ = ["__version__"]
