"""Physics-constrained layout optimization for reconstructed 3D scenes."""

__version__ = "0.1.0"
