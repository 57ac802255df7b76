"""Polyhedral cones, their face lattices, conic intrinsic volumes and
Monte Carlo checks of kinematic formulas."""

from .cone import Cone, MoreauPair, halfspace, orthant, ray
from .faces import Face, FaceLattice, enumerate_faces
from .numerics import Rng

__all__ = ["Cone", "MoreauPair", "Face", "FaceLattice", "enumerate_faces", "Rng", "orthant", "ray", "halfspace"]
__version__ = "0.1.0"
