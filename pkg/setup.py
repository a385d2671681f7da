"""Build script for the compiled transport-solver core.

The extension is optional: if it fails to build, the package falls back to
the pure-Python solver in atlasae._flow._pure at import time.
"""

from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "atlasae._flow._core",
                sources=["src/atlasae/_flow/_core.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
