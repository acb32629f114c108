"""Schrödinger bridges as Schrödinger equations with a complex potential.

Solve classical bridges by Fortet iteration, map ``(rho, S)`` to wave
functions by the Madelung transform, evaluate the complex potentials and
check every optimality PDE and identity by finite-difference residuals.
"""

__version__ = "0.1.0"
