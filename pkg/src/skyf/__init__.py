"""Discrete chiral-skyrmion energy workbench on bounded planar domains."""

from skyf.grid import GridDomain, MagnetizationField, ModelParams, build_domain, random_field

__version__ = "0.1.0"

__all__ = ["GridDomain", "MagnetizationField", "ModelParams", "build_domain", "random_field", "__version__"]
