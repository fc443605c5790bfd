"""Conforming finite elements for the gradgrad complex on tetrahedra.

Submodules are imported on demand (``from ggfem import eb``) so that the
command-line entry point can configure thread pools before numpy loads.
"""

__version__ = "0.1.0"

__all__ = ["poly", "exact", "forms", "mesh", "local_spaces", "dofs", "complex", "eb", "verification", "report", "cli"]
