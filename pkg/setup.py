"""Build script for the compiled kernel extension.

The package works without the extension (a NumPy fallback is selected at
import time), but the Monte Carlo and bootstrap paths are an order of
magnitude faster with it. Set FHSAE_SKIP_EXTENSION=1 to force a pure-Python
install on machines without a C toolchain.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("FHSAE_SKIP_EXTENSION"):
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "fhsae._fhcore",
                ["src/fhsae/_fhcore.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
