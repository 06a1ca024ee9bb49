"""Five-field finite element solver for large-strain poroelasticity coupled
with immune-system chemotaxis (oedema formation in soft tissue)."""

from . import assembly, biology, constitutive, fem, io, linalg, linear_biot, \
    mesh, mms, solver

__all__ = ["assembly", "biology", "constitutive", "fem", "io", "linalg",
           "linear_biot", "mesh", "mms", "solver"]
__version__ = "0.1.0"
