"""Variational solver for frozen planet orbits of the 1-D n-electron atom.

The package discretizes the action functional of n mutually repelling
electrons on a half-line attracted by a fixed nucleus, finds brake-symmetric
periodic orbits by Newton/continuation and by a linking min-max deformation
flow, and verifies the lemma-level invariants of the underlying variational
theory (energy windows, kinetic bounds, concavity, convergence of the
repulsion-damped family to folded Kepler brakes).
"""

__version__ = "0.1.0"
