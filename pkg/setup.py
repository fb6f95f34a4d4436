"""Build script for the compiled kernel extension.

The extension is optional at runtime: if it is absent (or fails to build),
the package falls back to the NumPy kernel implementations.
"""

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover - source dist without Cython
    cythonize = None

extensions = [
    Extension(
        "tanet._backend._ckern",
        ["src/tanet/_backend/_ckern.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(
    ext_modules=cythonize(extensions, language_level=3) if cythonize else [],
)
