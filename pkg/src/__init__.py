from . import functions

__all__ = ["functions"]
