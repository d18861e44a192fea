"""Build script: compiles the optional Cython kernel core.

The package is fully functional without the extension (the numpy fallback is
selected at import time), so a failed compile downgrades to a warning instead
of breaking the install.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "cidg.kernels._core",
                ["src/cidg/kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - build-env dependent
    sys.stderr.write(f"cidg: skipping Cython kernel build ({exc}); numpy fallback will be used\n")

setup(ext_modules=ext_modules)
