"""Build script for the optional compiled kernels.

The package works without the extension: panosphere._kernels falls back to a
NumPy implementation when the compiled module is missing (or when
PANOSPHERE_BACKEND=python is set).  Set PANOSPHERE_NO_EXT=1 to skip building
the extension entirely.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("PANOSPHERE_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "panosphere._kernels._pairwise",
                    ["src/panosphere/_kernels/_pairwise.pyx"],
                    # no FMA contraction: both backends must round identically
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                    optional=True,
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
