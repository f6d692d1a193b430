"""Near-miss trajectory synthesis with a map-conditioned latent-variable model."""
__version__ = "0.1.0"
