"""First-order scattering-map expansions for the planar restricted three-body problem."""
__version__ = "0.1.0"
