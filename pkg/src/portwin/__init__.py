"""Pore-scale incompressible flow on block-structured adaptive grids.

Simulates slow flow through sphere-packed specimens, streams live field
windows to viewers under a byte budget, and derives Darcy permeability
from the pressure drop across the specimen.
"""

__version__ = "0.1.0"
