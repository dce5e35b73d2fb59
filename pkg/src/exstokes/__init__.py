"""Coupled mixed-FEM/BEM solvers for the exterior 3D Stokes problem.

Dual-mixed stress-velocity-vorticity discretization of a cube annulus coupled
to hydrodynamic layer potentials on the exterior boundary, with four coupling
formulations, a verification harness, and a batch CLI.
"""

__version__ = "0.1.0"
