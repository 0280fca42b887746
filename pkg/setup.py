import os

from setuptools import setup

# The compiled kernels are optional: without Cython (or with
# RICHUNET_NO_EXT=1) the package installs pure-Python and selects the
# numpy kernel backend at import time.
ext_modules = []
if os.environ.get("RICHUNET_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "richunet.kernels._cpu",
                    ["src/richunet/kernels/_cpu.pyx"],
                    # IEEE semantics stay intact: no -ffast-math, so
                    # inf/nan propagation matches the numpy backend
                    extra_compile_args=["-O3", "-march=native", "-funroll-loops"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
