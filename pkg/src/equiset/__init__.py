"""Equivariant layers for sets of symmetric elements.

Subpackages: permgroup (groups and orbits), equimap (layer bases), tensor
(reverse-mode autodiff), dss (set layers), train (signal benchmark), cli.
"""

from .backend import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
