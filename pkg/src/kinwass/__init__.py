"""Kinetic-Wasserstein stability laboratory for Vlasov-Poisson dynamics.

Modules:
    growth     growth functions, Osgood antiderivatives, constants
    transport  discrete optimal transport with split phase-space costs
    kinetic    the implicit anisotropic distance quantity D_p
    vlasov     particle-in-cell solver on the torus (optionally magnetized)
    stability  bound assembly, twin experiments, proof-level probes
    cli        deterministic command-line entry points
"""

from . import cli, growth, kinetic, stability, svgplot, transport, vlasov
from ._kernels import USE_NUMBA

__version__ = "0.1.0"

__all__ = ["growth", "transport", "kinetic", "vlasov", "stability",
           "svgplot", "cli", "USE_NUMBA", "__version__"]
