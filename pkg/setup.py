import numpy as np
from setuptools import Extension, setup

# The compiled kernels are optional: the package falls back to the pure
# NumPy implementations in permconv.kernels_py when the extension is
# missing, so a failed build must not fail the install.
try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "permconv._kernels",
                sources=["src/permconv/_kernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ]
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
