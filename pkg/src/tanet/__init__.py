"""Threshold attention kernels, composite blocks, and benchmarks."""

from tanet._backend import KERNEL_BACKEND, available_backends

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "available_backends", "__version__"]
