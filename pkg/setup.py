import numpy
from setuptools import setup

# The compiled kernels are an optional speedup: if Cython or a C compiler
# is unavailable the package installs pure-Python and selects the numpy
# fallback at import time.
try:
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "qgequil._core._kernels",
                ["src/qgequil/_core/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
