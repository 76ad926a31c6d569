"""Build hook for the optional compiled LRU kernel.

The package works without it (``specleak.cache.lru`` falls back to Python);
a missing compiler or Cython only costs speed.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("SPECLEAK_NO_EXT", "") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension("specleak.cache._lru", ["src/specleak/cache/_lru.pyx"],
                       include_dirs=[numpy.get_include()],
                       define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")])],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
