"""Goal-oriented skill extraction and skill-based policy learning."""
__all__ = ["__version__"]
__version__ = "0.1.0"
