"""Build script: compiles the optional convolution kernel extension.

The package works without the extension (a numpy fallback is selected at
import time); compilation failures therefore only emit a warning.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext = Extension(
        "tomlab.nn._kernels_cy",
        ["src/tomlab/nn/_kernels_cy.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    ext_modules = cythonize([ext], language_level=3)
except Exception as exc:  # pragma: no cover - build-environment dependent
    sys.stderr.write(f"warning: building without compiled kernels ({exc})\n")

setup(ext_modules=ext_modules)
