"""Hybrid finite volume schemes for anisotropic advection-diffusion problems
on general polygonal meshes: a standard hybrid scheme with upwind/centred/
Scharfetter-Gummel advective fluxes, an exponential-fitting scheme, and a
nonlinear positivity-preserving scheme, with static condensation, adaptive
implicit time stepping, and the long-time/positivity/accuracy experiment
drivers exposed through the `hfv` command line tool.
"""

from .mesh import Mesh, MeshError, generate, load_mesh, read_polymesh, tag_boundary

__all__ = [
    "Mesh",
    "MeshError",
    "generate",
    "load_mesh",
    "read_polymesh",
    "tag_boundary",
]

__version__ = "1.0.0"
