import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

ext_modules = cythonize(
    Extension(
        "hypspde._core",
        ["src/hypspde/_core.pyx"],
        include_dirs=[np.get_include()],
        # keep results identical to the NumPy fallback (no fused multiply-add)
        extra_compile_args=["-O2", "-ffp-contract=off"],
    ),
    language_level=3,
)

setup(ext_modules=ext_modules)
