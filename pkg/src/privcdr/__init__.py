"""Privacy-preserving multi-modal cross-domain recommendation."""

__version__ = "0.1.0"
