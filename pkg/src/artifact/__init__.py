"""Parameter estimation for mixtures of spherical Gaussians."""

__version__ = "0.1.0"
