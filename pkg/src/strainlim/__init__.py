"""Finite element simulator for strain-limiting viscoelastic solids."""

from . import constitutive, diagnostics, driver, dynamics, fespace, scenarios, symtensor

__all__ = [
    "constitutive",
    "diagnostics",
    "driver",
    "dynamics",
    "fespace",
    "scenarios",
    "symtensor",
]
