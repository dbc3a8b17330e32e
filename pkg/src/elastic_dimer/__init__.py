"""Subwavelength resonances of a closely spaced elastic sphere dimer.

Boundary element tooling for the static and quasi-static Lame system, the
rigid-motion capacity matrices, resonance asymptotics, gap gradient blow-up,
plane-wave scattering and an independent MFS cross-check.
"""

__version__ = "0.1.0"

from .geometry import DimerConfig, DimerGeometry, SurfaceMesh, build_sphere_dimer, build_single_sphere
from .kernels import ContrastParams, ElasticMedium

__all__ = [
    "__version__",
    "ContrastParams",
    "DimerConfig",
    "DimerGeometry",
    "ElasticMedium",
    "SurfaceMesh",
    "build_single_sphere",
    "build_sphere_dimer",
]
