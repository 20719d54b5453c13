"""Build the optional compiled kernels.

If Cython, numpy headers or a C compiler are missing, the package is
installed without the extension and the numpy fallback is used.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("FEDECADO_NO_EXT", "") in ("", "0"):
    try:
        import numpy as np
        import scipy  # noqa: F401  (cython_lapack headers)
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "fedecado._kernels",
                    ["src/fedecado/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
