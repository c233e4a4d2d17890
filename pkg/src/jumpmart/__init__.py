"""Numerical toolkit for discontinuous martingales on embedded submanifolds."""
from .geometry import DomainError, EmbeddedManifold, sphere, torus
from .paths import CadlagPath, PathEnsemble, TimeGrid

__all__ = ["DomainError", "EmbeddedManifold", "sphere", "torus", "CadlagPath", "PathEnsemble", "TimeGrid"]
__version__ = "0.1.0"
