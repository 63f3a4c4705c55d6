"""Cox-regularised variational autoencoder and HazardWalk latent traversal."""

__version__ = "0.1.0"
