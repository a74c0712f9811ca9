"""DEC Hodge-Laplacian spectral toolkit for eigenvalue and eigenform estimates."""

__version__ = "0.1.0"
