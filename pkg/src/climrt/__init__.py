"""ClimRT: latent-interframe interpolation and location-continuity tracking at desk scale."""

__version__ = "0.1.0"
