import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("RBLOCK_PURE_PYTHON"):
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "rblock.kernels._ckernels",
                    ["src/rblock/kernels/_ckernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        # No Cython available: the package falls back to the numpy kernels.
        ext_modules = []

setup(ext_modules=ext_modules)
