import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("QAOI_NO_EXTENSION"):
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        # numpy/cython missing at build time: ship the pure-Python kernels only
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "qaoi._dpcore",
                    ["src/qaoi/_dpcore.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
