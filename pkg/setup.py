"""Build script for the optional compiled scan kernel.

The package works without the extension (a NumPy fallback is selected at
import time); building it just makes long simulations much faster.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "sdesem._scan",
                ["src/sdesem/_scan.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # keep scalar accumulation order reproducible against the
                # NumPy reference backend (no fused multiply-add contraction)
                extra_compile_args=["-O2", "-ffp-contract=off"],
            )
        ],
        language_level=3,
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
