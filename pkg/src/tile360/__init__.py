"""Tile-based adaptive streaming toolkit for 360-degree video."""

__version__ = "0.1.0"

from ._kernels import BACKEND as KERNEL_BACKEND  # noqa: F401
