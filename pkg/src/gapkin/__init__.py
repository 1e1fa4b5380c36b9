"""gapkin: collisionless kinetic transport in bounded convex domains with
diffuse wall reflection, plus the boundary-operator spectral toolkit used to
verify rebound vanishing, kernel decay, the spectral gap, and exponential
relaxation to the invariant density."""

__version__ = "0.1.0"
