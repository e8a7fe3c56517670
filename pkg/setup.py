"""Optional compiled kernels.

`pip install -e .` builds the Cython extensions when Cython and a C compiler
are available.  Set DECOMPDUAL_NO_EXT=1 to skip them; the package then runs on
the pure-Python kernels.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("DECOMPDUAL_NO_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools.extension import Extension

        extensions = [
            Extension(
                name="decompdual._kernels._ckernels",
                sources=["src/decompdual/_kernels/_ckernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ]
        ext_modules = cythonize(extensions, language_level=3, quiet=True)
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
