"""Build script: compiles the optional speedup kernels.

The package is fully functional without the compiled extension; the
pure numpy fallbacks in tile360._kernels._pure are selected at import
when the extension is missing (or when TILE360_PURE_PYTHON=1 is set).
"""

from setuptools import setup

try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/tile360/_kernels/_speedups.pyx"],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
    include_dirs = [numpy.get_include()]
except ImportError:
    ext_modules = []
    include_dirs = []

setup(ext_modules=ext_modules, include_dirs=include_dirs)
