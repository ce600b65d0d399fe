"""Build hook for the optional compiled kernels.

The package works without a C compiler: if the extension cannot be built,
``triobs.kernels`` falls back to the numpy implementation at import time.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "triobs._ckernels",
                sources=["src/triobs/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3", "boundscheck": False,
                             "wraparound": False, "cdivision": True},
    )
except ImportError:  # no Cython/numpy at build time: pure-Python install
    ext_modules = []

setup(ext_modules=ext_modules)
