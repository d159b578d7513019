import os

from setuptools import setup

ext_modules = []
if not os.environ.get("RELAY_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "relay._kernels",
                    ["src/relay/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    # no -ffast-math / -march=native: the fallback must match bit for bit
                    extra_compile_args=["-O3", "-ffp-contract=off"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
