"""Builds the optional compiled convolution kernels.

The package works without the extension (a numpy fallback is selected at
import time), so a failed compile only costs speed.
"""

import os

from setuptools import Extension, setup


def make_extensions():
    if os.environ.get("DEFOG_SKIP_EXT"):
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "defog._ckernels",
        sources=["src/defog/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level="3")


setup(ext_modules=make_extensions())
