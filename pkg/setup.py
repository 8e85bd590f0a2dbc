import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

ext = Extension(
    "bbmlab._core",
    ["src/bbmlab/_core.pyx"],
    include_dirs=[np.get_include()],
    # no FMA contraction: the pure-Python core must reproduce results bit for bit
    extra_compile_args=["-O3", "-ffp-contract=off", "-fno-math-errno"],
    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
)

setup(ext_modules=cythonize([ext], language_level=3))
