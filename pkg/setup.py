"""Build script for the optional compiled kernels.

The package works without the extension; ``grn.kernels`` falls back to the
numpy implementation when ``grn._kernels`` cannot be imported.
"""
import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover
    cythonize = None

extra = ["/O2"] if os.name == "nt" else ["-O3"]

ext_modules = []
if cythonize is not None and not os.environ.get("GRN_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "grn._kernels",
                ["src/grn/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=extra,
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
