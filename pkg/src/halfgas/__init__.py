"""Hard-sphere gas in the half-space {x.e1 > 0} with specular wall reflection.

Event-driven N-sphere dynamics, closed-form point-particle transport,
collision-tree Monte Carlo for the hierarchy of marginals, and the seeded
experiment drivers that check the quantitative geometric estimates behind
the low-density limit.
"""

from .geometry import Configuration, Cylinder
from .cutoffs import CutoffParams

__all__ = ["Configuration", "Cylinder", "CutoffParams"]

__version__ = "0.1.0"
