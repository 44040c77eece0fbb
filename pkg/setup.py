"""Build script for the optional compiled kernels.

The Cython extension is optional: when it cannot be built the package falls
back to the pure-Python implementation in ``eqsearch._kernels_py``.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("EQSEARCH_NO_EXT", "0") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "eqsearch._kernels",
                    ["src/eqsearch/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
