"""Build script for the optional compiled kernels.

The package works without the extension; ``proplab.kernels`` falls back to
the numpy implementations when ``proplab._ckernels`` cannot be imported.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("PROPLAB_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "proplab._ckernels",
                    sources=["src/proplab/_ckernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    optional=True,
                )
            ],
            language_level=3,
        )
    except Exception as exc:  # missing Cython, or scipy's BLAS declarations
        print(f"proplab: building without the compiled kernels ({exc})")
        ext_modules = []

setup(ext_modules=ext_modules)
