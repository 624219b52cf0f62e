"""Dense non-uniform fog synthesis and removal toolkit."""

from .backend import KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
